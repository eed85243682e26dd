//! End-to-end runs: dataset synthesis, source pretraining, adaptation and
//! held-out evaluation, shared by the CLI and the tests.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimator::{predict_flow, EstimatorParams};
use crate::metrics::{aggregate, evaluate, Averaging, FlowMetrics};
use crate::seed::derive_seed;
use crate::synth::{build_scene, preprocess, AnnotatedPair, PreprocessConfig, SceneScript};
use crate::uda::{adapt_step, pretrain_step, SourceBatch, TargetBatch, TrainState};
use rayon::prelude::*;
use serde::Serialize;

const SOURCE_TAG: u64 = 0x50;
const TARGET_TAG: u64 = 0x7A;
const PREP_TAG: u64 = 0x99;

/// Scene seed of pair `index` in a domain stream.
pub fn pair_seed(base: u64, domain_tag: u64, index: usize) -> u64 {
    derive_seed(derive_seed(base, domain_tag), index as u64)
}

/// One synthesized, preprocessed pair and the scene seed it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededPair {
    pub seed: u64,
    pub pair: AnnotatedPair,
}

/// Synthesizes the first pair of each scene seed, in parallel, in order.
pub fn synthesize(script: &SceneScript, seeds: &[u64], prep: &PreprocessConfig) -> Result<Vec<SeededPair>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let raw = build_scene(script, seed)?.pair(0)?;
            let pair = preprocess(&raw, prep, derive_seed(seed, PREP_TAG))?;
            if pair.first.is_empty() || pair.second.is_empty() {
                return Err(Error::EmptyCloud);
            }
            Ok(SeededPair { seed, pair })
        })
        .collect()
}

/// Source training pairs, target training pairs and held-out target pairs.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source: Vec<SeededPair>,
    pub target: Vec<SeededPair>,
    pub test: Vec<SeededPair>,
}

impl Benchmark {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let n = cfg.data.train_pairs;
        let m = cfg.data.test_pairs;
        let source_seeds: Vec<u64> = (0..n).map(|i| pair_seed(cfg.seed, SOURCE_TAG, i)).collect();
        let target_seeds: Vec<u64> = (0..n + m).map(|i| pair_seed(cfg.seed, TARGET_TAG, i)).collect();
        let source = synthesize(&cfg.source_script()?, &source_seeds, &cfg.preprocess)?;
        let mut target = synthesize(&cfg.target_script()?, &target_seeds, &cfg.preprocess)?;
        let test = target.split_off(n);
        Ok(Self { source, target, test })
    }
}

/// One line of a training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRecord {
    pub phase: &'static str,
    pub step: u64,
    pub l_source: f64,
    pub l_epc: f64,
    pub l_stu: f64,
    /// Held-out target EPE of the student, on evaluation steps.
    pub val_epe: Option<f64>,
}

/// Per-pair and aggregate metrics of `params` on `pairs`.
pub fn evaluate_params(
    params: &EstimatorParams,
    pairs: &[SeededPair],
    averaging: Averaging,
) -> Result<(Vec<FlowMetrics>, FlowMetrics)> {
    let per_pair = pairs
        .par_iter()
        .map(|p| evaluate(&predict_flow(params, &p.pair.first, &p.pair.second)?, &p.pair.flow))
        .collect::<Result<Vec<_>>>()?;
    let total = aggregate(&per_pair, averaging)?;
    Ok((per_pair, total))
}

fn source_batches(cfg: &RunConfig, pairs: &[SeededPair]) -> Result<Vec<SourceBatch>> {
    pairs
        .par_iter()
        .map(|p| SourceBatch::new(&p.pair.first, &p.pair.second, &p.pair.flow, cfg.estimator.candidate_k))
        .collect()
}

fn target_batches(cfg: &RunConfig, pairs: &[SeededPair]) -> Result<Vec<TargetBatch>> {
    pairs
        .par_iter()
        .map(|p| TargetBatch::new(&p.pair.first, &p.pair.second, &cfg.dbscan, cfg.estimator.candidate_k))
        .collect()
}

fn wants_eval(cfg: &RunConfig, step: usize, total: usize) -> bool {
    step + 1 == total || (cfg.train.eval_every > 0 && (step + 1).is_multiple_of(cfg.train.eval_every))
}

/// Source-only supervised training from the configured initialization.
pub fn pretrain(
    cfg: &RunConfig,
    source: &[SeededPair],
    test: &[SeededPair],
    mut log: impl FnMut(LogRecord),
) -> Result<EstimatorParams> {
    let batches = source_batches(cfg, source)?;
    let mut params = EstimatorParams::init(&cfg.estimator);
    let steps = cfg.train.pretrain_steps;
    for step in 0..steps {
        let loss = pretrain_step(&mut params, &batches[step % batches.len()], &cfg.estimator)?;
        let val_epe = if wants_eval(cfg, step, steps) && !test.is_empty() {
            Some(evaluate_params(&params, test, cfg.metrics.averaging)?.1.epe3d)
        } else {
            None
        };
        log(LogRecord {
            phase: "pretrain",
            step: step as u64,
            l_source: loss,
            l_epc: 0.0,
            l_stu: loss,
            val_epe,
        });
    }
    Ok(params)
}

/// Mean-teacher adaptation starting from `params`.
pub fn adapt(
    cfg: &RunConfig,
    params: EstimatorParams,
    source: &[SeededPair],
    target: &[SeededPair],
    test: &[SeededPair],
    mut log: impl FnMut(LogRecord),
) -> Result<TrainState> {
    let sources = source_batches(cfg, source)?;
    let targets = target_batches(cfg, target)?;
    let mut state = TrainState::new(params, cfg.seed);
    let steps = cfg.train.adapt_steps;
    for step in 0..steps {
        let r = adapt_step(
            &mut state,
            &sources[step % sources.len()],
            &targets[step % targets.len()],
            &cfg.estimator,
            &cfg.adapt,
        )?;
        let val_epe = if wants_eval(cfg, step, steps) && !test.is_empty() {
            Some(evaluate_params(&state.student, test, cfg.metrics.averaging)?.1.epe3d)
        } else {
            None
        };
        log(LogRecord {
            phase: "adapt",
            step: r.step,
            l_source: r.l_source,
            l_epc: r.l_epc,
            l_stu: r.l_stu,
            val_epe,
        });
    }
    Ok(state)
}

/// Outcome of a full pretrain-then-adapt run.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub pretrained: EstimatorParams,
    pub adapted: TrainState,
    pub source_only: FlowMetrics,
    pub student: FlowMetrics,
    pub teacher: FlowMetrics,
    pub log: Vec<LogRecord>,
}

impl ExperimentReport {
    /// Held-out target EPE of the adapted student relative to source-only.
    pub fn epe_ratio(&self) -> f64 {
        self.student.epe3d / self.source_only.epe3d
    }
}

pub fn run_experiment(cfg: &RunConfig, bench: &Benchmark) -> Result<ExperimentReport> {
    let mut log = Vec::new();
    let pretrained = pretrain(cfg, &bench.source, &bench.test, |r| log.push(r))?;
    let adapted = adapt(cfg, pretrained.clone(), &bench.source, &bench.target, &bench.test, |r| log.push(r))?;
    let avg = cfg.metrics.averaging;
    Ok(ExperimentReport {
        source_only: evaluate_params(&pretrained, &bench.test, avg)?.1,
        student: evaluate_params(&adapted.student, &bench.test, avg)?.1,
        teacher: evaluate_params(&adapted.teacher, &bench.test, avg)?.1,
        pretrained,
        adapted,
        log,
    })
}
