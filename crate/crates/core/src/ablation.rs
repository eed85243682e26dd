//! Pseudo-label refinement of arbitrary flow and the `ablate` sweeps.

use crate::clustering::{dbscan, DbscanConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimator::{nn_baseline_flow, EstimatorParams};
use crate::experiment::{self, pair_seed, Benchmark};
use crate::geom::{FlowField, PointCloud, UP_AXIS};
use crate::metrics::{aggregate, evaluate, FlowMetrics};
use crate::pseudo_label::{CrConfig, RefineDiagnostics};
use crate::synth::{generate_pair, is_ground_id, preprocess_indexed, GroundStrategy, PreprocessConfig};
use crate::uda::{epc_loss_targets, AdaptConfig, TransformMode};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::str::FromStr;

const GPR_TAG: u64 = 0x6B;

/// A flow field after clustering, rigid reconstruction and correspondence refinement.
#[derive(Debug, Clone)]
pub struct Refined {
    pub flow: FlowField,
    pub clusters: usize,
    pub diagnostics: RefineDiagnostics,
}

pub fn refine_flow(
    first: &PointCloud,
    second: &PointCloud,
    initial: &FlowField,
    dbscan_cfg: &DbscanConfig,
    cr: &CrConfig,
) -> Result<Refined> {
    let clusters = dbscan(first, dbscan_cfg);
    let labels = epc_loss_targets(first, initial, &clusters, second, cr)?;
    Ok(Refined {
        flow: FlowField::between(first.points(), &labels.points)?,
        clusters: clusters.cluster_count(),
        diagnostics: labels.diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Alpha,
    K,
    Gpr,
    Transform,
    All,
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "k" => Ok(Self::K),
            "gpr" => Ok(Self::Gpr),
            "transform" => Ok(Self::Transform),
            "all" => Ok(Self::All),
            _ => Err(format!("unknown sweep {s:?} (alpha, k, gpr, transform, all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub sweep: &'static str,
    pub setting: String,
    pub metrics: FlowMetrics,
}

/// Post-refinement EPE of nearest-neighbor flow on the ground-removal script,
/// once per strategy.
///
/// Every strategy is scored on the same points: first-frame points of
/// non-ground entities above the height threshold and within range, which
/// all three strategies keep. No subsampling is applied, so the kept sets
/// are exactly comparable.
pub fn gpr_comparison(cfg: &RunConfig, strategies: &[GroundStrategy]) -> Result<Vec<(GroundStrategy, FlowMetrics)>> {
    let script = cfg.gpr_script()?;
    let pairs = cfg.ablation.gpr_pairs;
    if pairs == 0 {
        return Err(Error::InvalidConfig("ablation.gpr_pairs must be >= 1".into()));
    }
    let per_pair: Vec<Vec<FlowMetrics>> = (0..pairs)
        .into_par_iter()
        .map(|i| -> Result<Vec<FlowMetrics>> {
            let seed = pair_seed(cfg.seed, GPR_TAG, i);
            let raw = generate_pair(&script, seed)?;
            let labels = raw.first.labels().ok_or(Error::MissingLabels)?;
            let thr = cfg.preprocess.height_threshold;
            let common: Vec<usize> = (0..raw.first.len())
                .filter(|&j| {
                    let p = raw.first.points()[j];
                    labels[j].is_some_and(|l| !is_ground_id(l)) && p[UP_AXIS] >= thr && p.norm() <= cfg.preprocess.max_range
                })
                .collect();
            if common.is_empty() {
                return Err(Error::EmptyCloud);
            }
            let gt = raw.flow.select(&common);
            strategies
                .iter()
                .map(|&ground| {
                    let prep = PreprocessConfig {
                        ground,
                        num_points: usize::MAX,
                        ..cfg.preprocess.clone()
                    };
                    let (pp, kept) = preprocess_indexed(&raw, &prep, seed)?;
                    let initial = nn_baseline_flow(&pp.first, &pp.second)?;
                    let refined = refine_flow(&pp.first, &pp.second, &initial, &cfg.dbscan, &cfg.adapt.cr)?;
                    let picked: Vec<usize> = common
                        .iter()
                        .map(|j| kept.binary_search(j).expect("common points survive every strategy"))
                        .collect();
                    evaluate(&refined.flow.select(&picked), &gt)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    strategies
        .iter()
        .enumerate()
        .map(|(s, &strategy)| {
            let column: Vec<FlowMetrics> = per_pair.iter().map(|row| row[s]).collect();
            Ok((strategy, aggregate(&column, cfg.metrics.averaging)?))
        })
        .collect()
}

fn adapt_rows(
    cfg: &RunConfig,
    bench: &Benchmark,
    start: &EstimatorParams,
    sweep: &'static str,
    settings: Vec<(String, AdaptConfig)>,
) -> Result<Vec<AblationRow>> {
    settings
        .into_par_iter()
        .map(|(setting, adapt)| {
            let run = RunConfig { adapt, ..cfg.clone() };
            run.adapt.validate()?;
            let state = experiment::adapt(&run, start.clone(), &bench.source, &bench.target, &bench.test, |_| {})?;
            let (_, metrics) = experiment::evaluate_params(&state.student, &bench.test, cfg.metrics.averaging)?;
            Ok(AblationRow { sweep, setting, metrics })
        })
        .collect()
}

/// Runs the requested sweeps. Adaptation sweeps share one pretrained start.
pub fn run(cfg: &RunConfig, sweep: Sweep) -> Result<Vec<AblationRow>> {
    let wants = |s: Sweep| sweep == s || sweep == Sweep::All;
    let mut rows = Vec::new();
    if wants(Sweep::Alpha) || wants(Sweep::K) || wants(Sweep::Transform) {
        let bench = Benchmark::generate(cfg)?;
        if bench.target.is_empty() || bench.test.is_empty() {
            return Err(Error::InvalidConfig("adaptation sweeps need target and test pairs".into()));
        }
        let start = experiment::pretrain(cfg, &bench.source, &bench.test, |_| {})?;
        let (_, base) = experiment::evaluate_params(&start, &bench.test, cfg.metrics.averaging)?;
        rows.push(AblationRow { sweep: "source-only", setting: "-".into(), metrics: base });
        if wants(Sweep::Alpha) {
            let settings = cfg.ablation.alphas.iter().map(|&alpha| {
                let mut a = cfg.adapt.clone();
                a.ema.alpha = alpha;
                (format!("alpha={alpha:.3}"), a)
            });
            rows.extend(adapt_rows(cfg, &bench, &start, "alpha", settings.collect())?);
        }
        if wants(Sweep::K) {
            let settings = cfg.ablation.k_values.iter().map(|&k| {
                let mut a = cfg.adapt.clone();
                a.cr.k_neighbors = k;
                (format!("K={k}"), a)
            });
            rows.extend(adapt_rows(cfg, &bench, &start, "k", settings.collect())?);
        }
        if wants(Sweep::Transform) {
            let mut settings = Vec::new();
            for (name, mode) in [
                ("asymmetric", TransformMode::Reconciled),
                ("asymmetric-literal", TransformMode::Literal),
                ("symmetric", TransformMode::Symmetric),
            ] {
                let mut a = cfg.adapt.clone();
                a.mode = mode;
                settings.push((name.to_string(), a));
            }
            let mut a = cfg.adapt.clone();
            a.rotation_range_deg = 0.0;
            settings.push(("no-transform".to_string(), a));
            rows.extend(adapt_rows(cfg, &bench, &start, "transform", settings)?);
        }
    }
    if wants(Sweep::Gpr) {
        let strategies = [GroundStrategy::None, GroundStrategy::ByHeight, GroundStrategy::ByEntity];
        for (strategy, metrics) in gpr_comparison(cfg, &strategies)? {
            let setting = match strategy {
                GroundStrategy::None => "none",
                GroundStrategy::ByHeight => "by-height",
                GroundStrategy::ByEntity => "by-entity",
            };
            rows.push(AblationRow { sweep: "gpr", setting: setting.into(), metrics });
        }
    }
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<12} {:<20} {:>9} {:>7} {:>7} {:>7}\n",
        "sweep", "setting", "EPE3D", "AS", "AR", "Out"
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<12} {:<20} {:>9.5} {:>7.2} {:>7.2} {:>7.2}",
            r.sweep, r.setting, m.epe3d, m.acc_strict, m.acc_relax, m.outliers
        );
    }
    out
}
