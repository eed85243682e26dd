use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sceneflow_uda::config::{resolve_script, RunConfig};
use sceneflow_uda::estimator::{nn_baseline_flow, predict_flow, EstimatorParams};
use sceneflow_uda::experiment::{self, Benchmark, SeededPair};
use sceneflow_uda::geom::FlowField;
use sceneflow_uda::io::{self, Manifest, PairEntry};
use sceneflow_uda::metrics::{aggregate, evaluate, FlowMetrics};
use sceneflow_uda::{ablation, Error};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Scene flow domain adaptation on synthetic LiDAR.
#[derive(Parser)]
#[command(name = "sfuda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also export clouds as ASCII PLY.
    #[arg(long)]
    emit_ply: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of annotated pairs.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Single-domain mode: a built-in script name.
        #[arg(long, conflicts_with = "script")]
        preset: Option<String>,
        /// Single-domain mode: a scene script file.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Pairs in single-domain mode (default: data.train_pairs).
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Source-only supervised training.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `gen`; synthesized in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Mean-teacher adaptation.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `gen`; synthesized in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Starting checkpoint; pretrains first when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Rigid pseudo-label refinement of a flow field.
    Refine {
        #[command(flatten)]
        common: Common,
        /// A pair file or a directory of pair files.
        #[arg(long)]
        input: PathBuf,
        /// Flow to refine: `gt` (the file's FLOW), `nn`, or a checkpoint path.
        #[arg(long, default_value = "gt")]
        flow: String,
    },
    /// Scene flow metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Pair file or directory whose FLOW is the prediction.
        #[arg(long, conflicts_with = "checkpoint")]
        pred: Option<PathBuf>,
        /// Checkpoint whose predictions are evaluated.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pair file or directory holding the ground truth.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Parameter, ground-removal and transform sweeps.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Which sweep to run.
        #[arg(long, default_value = "all")]
        sweep: ablation::Sweep,
    },
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit_ply(dir: &Path, stem: &str, pair: &sceneflow_uda::synth::AnnotatedPair) -> anyhow::Result<()> {
    io::write_ply(&dir.join(format!("{stem}_first.ply")), &pair.first)?;
    io::write_ply(&dir.join(format!("{stem}_second.ply")), &pair.second)?;
    let warped = sceneflow_uda::geom::PointCloud::new(pair.flow.warp(pair.first.points()))?;
    io::write_ply(&dir.join(format!("{stem}_warped.ply")), &warped)?;
    Ok(())
}

fn write_split(out: &Path, split: &str, pairs: &[SeededPair], ply: bool, manifest: &mut Manifest) -> anyhow::Result<()> {
    let dir = out.join(split);
    prepare_out(&dir)?;
    for (i, p) in pairs.iter().enumerate() {
        let stem = format!("pair_{i:04}");
        io::write_pair(&dir.join(format!("{stem}.gsf")), &p.pair)?;
        if ply {
            emit_ply(&dir, &stem, &p.pair)?;
        }
        manifest.pairs.push(PairEntry {
            file: format!("{split}/{stem}.gsf"),
            seed: p.seed,
            split: split.to_string(),
            first_points: p.pair.first.len(),
            second_points: p.pair.second.len(),
        });
    }
    Ok(())
}

/// Pair files of a dataset split, in manifest order.
fn read_split(data: &Path, split: &str) -> anyhow::Result<Vec<SeededPair>> {
    let manifest = io::read_manifest(&data.join("manifest.json"))
        .with_context(|| format!("reading manifest in {}", data.display()))?;
    manifest
        .pairs
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let pair = io::read_pair(&data.join(&e.file)).with_context(|| format!("reading {}", e.file))?;
            Ok(SeededPair { seed: e.seed, pair })
        })
        .collect()
}

fn load_benchmark(cfg: &RunConfig, data: Option<&Path>) -> anyhow::Result<Benchmark> {
    match data {
        None => Ok(Benchmark::generate(cfg)?),
        Some(dir) => {
            let bench = Benchmark {
                source: read_split(dir, "source")?,
                target: read_split(dir, "target")?,
                test: read_split(dir, "test")?,
            };
            if bench.source.is_empty() {
                bail!("dataset {} has no source pairs", dir.display());
            }
            Ok(bench)
        }
    }
}

fn scripts_value(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::json!({
        "source": cfg.source_script()?,
        "target": cfg.target_script()?,
    }))
}

fn cmd_gen(common: &Common, preset: Option<&str>, script: Option<&Path>, pairs: Option<usize>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let mut manifest = Manifest::new("gen", cfg.seed, &cfg)?;
    if preset.is_some() || script.is_some() {
        let script = resolve_script(preset.unwrap_or("source"), script)?;
        let n = pairs.unwrap_or(cfg.data.train_pairs);
        let seeds: Vec<u64> = (0..n).map(|i| experiment::pair_seed(cfg.seed, 0, i)).collect();
        let generated = experiment::synthesize(&script, &seeds, &cfg.preprocess)?;
        manifest.scripts = serde_json::json!({ "pairs": script });
        write_split(&common.out, "pairs", &generated, common.emit_ply, &mut manifest)?;
    } else {
        let bench = Benchmark::generate(&cfg)?;
        manifest.scripts = scripts_value(&cfg)?;
        write_split(&common.out, "source", &bench.source, common.emit_ply, &mut manifest)?;
        write_split(&common.out, "target", &bench.target, common.emit_ply, &mut manifest)?;
        write_split(&common.out, "test", &bench.test, common.emit_ply, &mut manifest)?;
    }
    io::write_manifest(&common.out.join("manifest.json"), &manifest)?;
    println!("wrote {} pairs to {}", manifest.pairs.len(), common.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    averaging: sceneflow_uda::metrics::Averaging,
    aggregate: FlowMetrics,
    per_pair: Vec<FlowMetrics>,
}

fn print_metrics(label: &str, m: &FlowMetrics, averaging: sceneflow_uda::metrics::Averaging) {
    println!(
        "{label}: EPE3D {:.6} AS {:.2} AR {:.2} Out {:.2} ({} points, {:?} averaging)",
        m.epe3d, m.acc_strict, m.acc_relax, m.outliers, m.point_count, averaging
    );
}

fn cmd_pretrain(common: &Common, data: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let bench = load_benchmark(&cfg, data)?;
    let mut log = Vec::new();
    let params = experiment::pretrain(&cfg, &bench.source, &bench.test, |r| log.push(r))?;
    io::write_checkpoint(&common.out.join("params.ckpt"), &params)?;
    io::write_jsonl(&common.out.join("log.jsonl"), &log)?;
    let mut manifest = Manifest::new("pretrain", cfg.seed, &cfg)?;
    manifest.outputs = vec!["params.ckpt".into(), "log.jsonl".into()];
    if !bench.test.is_empty() {
        let (per_pair, total) = experiment::evaluate_params(&params, &bench.test, cfg.metrics.averaging)?;
        write_json(&common.out.join("metrics.json"), &EvalReport { averaging: cfg.metrics.averaging, aggregate: total, per_pair })?;
        manifest.outputs.push("metrics.json".into());
        print_metrics("source-only target", &total, cfg.metrics.averaging);
    }
    io::write_manifest(&common.out.join("manifest.json"), &manifest)?;
    Ok(())
}

#[derive(Serialize)]
struct AdaptSummary {
    averaging: sceneflow_uda::metrics::Averaging,
    source_only: FlowMetrics,
    student: FlowMetrics,
    teacher: FlowMetrics,
    epe_ratio: f64,
}

fn cmd_adapt(common: &Common, data: Option<&Path>, init: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let bench = load_benchmark(&cfg, data)?;
    let mut log = Vec::new();
    let start = match init {
        Some(path) => io::read_checkpoint(path).with_context(|| format!("reading {}", path.display()))?,
        None => experiment::pretrain(&cfg, &bench.source, &bench.test, |r| log.push(r))?,
    };
    if bench.target.is_empty() {
        bail!("adaptation needs target pairs");
    }
    let state = experiment::adapt(&cfg, start.clone(), &bench.source, &bench.target, &bench.test, |r| log.push(r))?;
    io::write_checkpoint(&common.out.join("student.ckpt"), &state.student)?;
    io::write_checkpoint(&common.out.join("teacher.ckpt"), &state.teacher)?;
    io::write_jsonl(&common.out.join("log.jsonl"), &log)?;
    let mut manifest = Manifest::new("adapt", cfg.seed, &cfg)?;
    manifest.outputs = vec!["student.ckpt".into(), "teacher.ckpt".into(), "log.jsonl".into()];
    if !bench.test.is_empty() {
        let avg = cfg.metrics.averaging;
        let eval = |p: &EstimatorParams| experiment::evaluate_params(p, &bench.test, avg).map(|r| r.1);
        let summary = AdaptSummary {
            averaging: avg,
            source_only: eval(&start)?,
            student: eval(&state.student)?,
            teacher: eval(&state.teacher)?,
            epe_ratio: 0.0,
        };
        let summary = AdaptSummary { epe_ratio: summary.student.epe3d / summary.source_only.epe3d, ..summary };
        print_metrics("source-only target", &summary.source_only, avg);
        print_metrics("adapted student target", &summary.student, avg);
        println!("EPE ratio {:.4}", summary.epe_ratio);
        write_json(&common.out.join("metrics.json"), &summary)?;
        manifest.outputs.push("metrics.json".into());
    }
    io::write_manifest(&common.out.join("manifest.json"), &manifest)?;
    Ok(())
}

/// Pair files under `input`: the file itself, or every `.gsf` in the directory tree, sorted.
fn pair_files(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![input.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "gsf") {
                out.push(path);
            }
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no pair files under {}", input.display());
    }
    Ok(out)
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

#[derive(Serialize)]
struct RefineEntry {
    file: String,
    noise_points: usize,
    degenerate_clusters: usize,
    clusters: usize,
    input: Option<FlowMetrics>,
    refined: Option<FlowMetrics>,
}

fn cmd_refine(common: &Common, input: &Path, flow: &str) -> anyhow::Result<()> {
    use rayon::prelude::*;
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let files = pair_files(input)?;
    let base = if input.is_file() { input.parent().unwrap_or(Path::new("")) } else { input };
    let model = match flow {
        "gt" | "nn" => None,
        path => Some(io::read_checkpoint(Path::new(path)).with_context(|| format!("reading {path}"))?),
    };
    let results = files
        .par_iter()
        .map(|file| -> anyhow::Result<(PathBuf, RefineEntry)> {
            let pair = io::read_pair(file).with_context(|| format!("reading {}", file.display()))?;
            let initial = match (&model, flow) {
                (Some(p), _) => predict_flow(p, &pair.first, &pair.second)?,
                (None, "nn") => nn_baseline_flow(&pair.first, &pair.second)?,
                _ => pair.flow.clone(),
            };
            let refined = ablation::refine_flow(&pair.first, &pair.second, &initial, &cfg.dbscan, &cfg.adapt.cr)?;
            let evaluable = flow != "gt";
            let rel = relative(base, file);
            let target = common.out.join(&rel);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let out_pair = sceneflow_uda::synth::AnnotatedPair { flow: refined.flow.clone(), ..pair.clone() };
            io::write_pair(&target, &out_pair)?;
            if common.emit_ply {
                let stem = target.with_extension("");
                let stem_name = stem.file_name().unwrap().to_string_lossy().to_string();
                emit_ply(target.parent().unwrap(), &stem_name, &out_pair)?;
            }
            let entry = RefineEntry {
                file: rel,
                noise_points: refined.diagnostics.noise_points,
                degenerate_clusters: refined.diagnostics.degenerate_clusters,
                clusters: refined.clusters,
                input: evaluable.then(|| evaluate(&initial, &pair.flow)).transpose()?,
                refined: evaluable.then(|| evaluate(&refined.flow, &pair.flow)).transpose()?,
            };
            Ok((target, entry))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let entries: Vec<RefineEntry> = results.into_iter().map(|(_, e)| e).collect();
    write_json(&common.out.join("refine.json"), &entries)?;
    let mut manifest = Manifest::new("refine", cfg.seed, &cfg)?;
    manifest.outputs = entries.iter().map(|e| e.file.clone()).collect();
    io::write_manifest(&common.out.join("manifest.json"), &manifest)?;
    println!("refined {} pairs into {}", entries.len(), common.out.display());
    Ok(())
}

fn cmd_eval(common: &Common, pred: Option<&Path>, checkpoint: Option<&Path>, gt: &Path) -> anyhow::Result<()> {
    use rayon::prelude::*;
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let gt_files = pair_files(gt)?;
    let model = checkpoint
        .map(|p| io::read_checkpoint(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let pred_files = match (pred, &model) {
        (Some(p), _) => {
            let files = pair_files(p)?;
            if files.len() != gt_files.len() {
                bail!("{} prediction files but {} ground-truth files", files.len(), gt_files.len());
            }
            Some(files)
        }
        (None, Some(_)) => None,
        (None, None) => bail!("eval needs --pred or --checkpoint"),
    };
    let per_pair = (0..gt_files.len())
        .into_par_iter()
        .map(|i| -> anyhow::Result<FlowMetrics> {
            let truth = io::read_pair(&gt_files[i])?;
            let predicted: FlowField = match (&pred_files, &model) {
                (Some(files), _) => io::read_pair(&files[i])?.flow,
                (None, Some(p)) => predict_flow(p, &truth.first, &truth.second)?,
                (None, None) => unreachable!(),
            };
            Ok(evaluate(&predicted, &truth.flow)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let total = aggregate(&per_pair, cfg.metrics.averaging)?;
    for (f, m) in gt_files.iter().zip(&per_pair) {
        print_metrics(&relative(gt, f), m, cfg.metrics.averaging);
    }
    print_metrics("aggregate", &total, cfg.metrics.averaging);
    write_json(&common.out.join("metrics.json"), &EvalReport { averaging: cfg.metrics.averaging, aggregate: total, per_pair })?;
    let mut manifest = Manifest::new("eval", cfg.seed, &cfg)?;
    manifest.outputs = vec!["metrics.json".into()];
    io::write_manifest(&common.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn cmd_ablate(common: &Common, sweep: ablation::Sweep) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let rows = ablation::run(&cfg, sweep)?;
    let table = ablation::format_table(&rows);
    print!("{table}");
    std::fs::write(common.out.join("ablation.txt"), &table)?;
    write_json(&common.out.join("ablation.json"), &rows)?;
    let mut manifest = Manifest::new("ablate", cfg.seed, &cfg)?;
    manifest.scripts = scripts_value(&cfg)?;
    manifest.outputs = vec!["ablation.txt".into(), "ablation.json".into()];
    io::write_manifest(&common.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Gen { common, preset, script, pairs } => cmd_gen(common, preset.as_deref(), script.as_deref(), *pairs),
        Command::Pretrain { common, data } => cmd_pretrain(common, data.as_deref()),
        Command::Adapt { common, data, init } => cmd_adapt(common, data.as_deref(), init.as_deref()),
        Command::Refine { common, input, flow } => cmd_refine(common, input, flow),
        Command::Eval { common, pred, checkpoint, gt } => cmd_eval(common, pred.as_deref(), checkpoint.as_deref(), gt),
        Command::Ablate { common, sweep } => cmd_ablate(common, *sweep),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Error>().is_some_and(|e| matches!(e, Error::InvalidConfig(_) | Error::InvalidScript(_))) {
                return ExitCode::from(2);
            }
            ExitCode::from(1)
        }
    }
}
