//! `roca`: prepare datasets, train detectors, evaluate them and run sweeps.
//!
//! Exit status: 0 success, 2 usage or configuration error, 3 data error
//! (missing files, bad layout, profile mismatch), 4 training aborted on a
//! non-finite loss, 1 anything else.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use roca_core::config::{load_config, ExperimentConfig, Profile, Variant};
use roca_core::data::{AnomalyKind, SyntheticSpec};
use roca_core::experiment::{prepare, EvalSettings, Granularity, PrepareOptions};
use roca_core::harness::{
    self, atomic_write, load_prepared, ras_rows, result_rows, run_subset, subset_spec, summarize, with_aggregates,
    write_prepared, write_results, DataSource, ResultRow, Subset, SweepParam, SweepSpec,
};
use roca_core::inference::{score, ThresholdMode};
use roca_core::metrics::Metric;
use roca_core::model::RocaModel;
use roca_core::trainer::{label_budget, FitOptions, TrainState};
use roca_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "roca", version, about = "Contamination-robust time series anomaly detection")]
struct Cli {
    /// TOML experiment config; profile defaults fill anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed (data generation for `prepare`, model seed otherwise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset profile used when no config file is given.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a dataset's splits to disk as CSV with a hashed index.
    Prepare(PrepareArgs),
    /// Train one model per subset and save checkpoints, logs and manifests.
    Train(TrainArgs),
    /// Score trained runs (or the random baseline) and write a results table.
    Eval(EvalArgs),
    /// Repeat training over a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Summarize results tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// `synthetic` or a benchmark name (aiops, ucr, swat, wadi).
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Benchmark root directory.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Synthetic: share of window blocks carrying an anomaly.
    #[arg(long)]
    anomaly_ratio: Option<f64>,
    /// Synthetic: anomaly kinds, comma-separated (point, pattern).
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kinds: Vec<AnomalyKind>,
    /// Synthetic: pattern anomaly length in windows, `min,max`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pattern_windows: Vec<usize>,
    /// Synthetic: training windows.
    #[arg(long)]
    train_windows: Option<usize>,
    /// Synthetic: validation and test windows.
    #[arg(long)]
    eval_windows: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// roca, coca, cocas or roca_nov.
    #[arg(long)]
    variant: Option<String>,
    /// Boundary fraction for cocas.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Share of training windows replaced by injected anomalies.
    #[arg(long, default_value_t = 0.0)]
    pollution_rate: f64,
    /// Independent runs with seeds `seed..seed+repeats`, each in `seed-<s>/`.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Restrict to these subsets.
    #[arg(long, value_delimiter = ',')]
    subset: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directories written by `train` (or parents of `seed-*` runs).
    runs: Vec<PathBuf>,
    /// Prepared dataset to score on; defaults to each run's training data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "PW,PA,PA%K(20),RPA")]
    metrics: Vec<String>,
    /// validation, test, fixed or top1; top1 for the ucr profile, validation otherwise.
    #[arg(long)]
    mode: Option<ThresholdMode>,
    /// window or point.
    #[arg(long, default_value = "window", value_parser = parse_granularity)]
    granularity: Granularity,
    /// Also evaluate the random-score baseline.
    #[arg(long)]
    ras: bool,
    /// Baseline repetitions.
    #[arg(long, default_value_t = 10)]
    ras_seeds: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// mu, nu, pr or lambda.
    #[arg(long)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Variants compared in every cell; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long)]
    r: Option<f64>,
    /// Pollution rate for sweeps over other parameters.
    #[arg(long, default_value_t = 0.0)]
    pollution_rate: f64,
    #[arg(long, default_value = "RPA")]
    metric: String,
    #[arg(long)]
    mode: Option<ThresholdMode>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Threads running cells concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Results tables written by `eval`.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Also print the per-dataset F1 layout for this metric.
    #[arg(long)]
    ablation: Option<String>,
}

/// Bad flag combinations that clap cannot express.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_kind(s: &str) -> std::result::Result<AnomalyKind, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "point" => Ok(AnomalyKind::Point),
        "pattern" => Ok(AnomalyKind::Pattern),
        other => Err(format!("unknown anomaly kind `{other}` (point, pattern)")),
    }
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    match s {
        "window" => Ok(Granularity::Window),
        "point" => Ok(Granularity::Point),
        other => Err(format!("unknown granularity `{other}` (window, point)")),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::ConfigParse { .. }
                | CoreError::Validation { .. }
                | CoreError::ModelConfig(_)
                | CoreError::UnknownBenchmark(_) => 2,
                CoreError::NonFiniteLoss { .. } => 4,
                CoreError::Contract(_) => 1,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Globals {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    profile: Option<Profile>,
}

impl Globals {
    fn base_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = load_config(path)?;
                if let Some(p) = self.profile {
                    if p != cfg.profile {
                        return Err(usage(format!(
                            "--profile {} conflicts with profile `{}` in {}",
                            p.name(),
                            cfg.profile.name(),
                            path.display()
                        )));
                    }
                }
                cfg
            }
            None => ExperimentConfig::for_profile(self.profile.unwrap_or_default()),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }

    fn out_or(&self, default: impl AsRef<Path>) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default.as_ref().to_path_buf())
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        profile: cli.profile,
    };
    match cli.cmd {
        Cmd::Prepare(a) => cmd_prepare(&g, a),
        Cmd::Train(a) => cmd_train(&g, a),
        Cmd::Eval(a) => cmd_eval(&g, a),
        Cmd::Sweep(a) => cmd_sweep(&g, a),
        Cmd::Report(a) => cmd_report(&g, a),
    }
}

fn cmd_prepare(g: &Globals, a: PrepareArgs) -> Result<()> {
    let cfg = g.base_config()?;
    let name = a.dataset.to_ascii_lowercase();
    let source = if name == "synthetic" {
        let mut spec = SyntheticSpec {
            dim: cfg.series.dim,
            window_length: cfg.series.window_length,
            time_step: cfg.series.time_step,
            ..SyntheticSpec::default()
        };
        if let Some(r) = a.anomaly_ratio {
            spec.anomaly_ratio = r;
        }
        if !a.kinds.is_empty() {
            spec.kinds = a.kinds.clone();
        }
        if let [lo, hi] = a.pattern_windows[..] {
            spec.pattern_windows = (lo, hi);
        }
        let stride = spec.time_step;
        if let Some(n) = a.train_windows {
            spec.train_len = n * stride;
        }
        if let Some(n) = a.eval_windows {
            spec.val_len = n * stride;
            spec.test_len = n * stride;
        }
        DataSource::Synthetic {
            spec,
            seed: g.seed.unwrap_or(0),
        }
    } else {
        if a.anomaly_ratio.is_some() || !a.kinds.is_empty() || !a.pattern_windows.is_empty() {
            return Err(usage("synthetic options given for a benchmark dataset"));
        }
        let root = a.root.ok_or_else(|| usage("--root is required for benchmark datasets"))?;
        DataSource::Benchmark { name, root }
    };
    let subsets = source.load()?;
    let out = g.out_or(Path::new("data").join(source.name()));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let report = write_prepared(&out, &source, &subsets)?;
    println!(
        "{} {} subset(s) in {} (hash {})",
        if report.written { "wrote" } else { "unchanged:" },
        report.index.subsets.len(),
        out.display(),
        report.index.hash
    );
    Ok(())
}

/// `run.json`: what one training invocation produced.
#[derive(Debug, Serialize, Deserialize)]
struct RunIndex {
    dataset: String,
    data: PathBuf,
    data_hash: String,
    variant: String,
    seed: u64,
    pollution_rate: f64,
    subsets: Vec<RunSubset>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunSubset {
    name: String,
    dir: String,
    manifest: String,
}

const RUN_INDEX: &str = "run.json";

fn cmd_train(g: &Globals, a: TrainArgs) -> Result<()> {
    let mut cfg = g.base_config()?;
    if let Some(v) = &a.variant {
        cfg.variant = Variant::parse(v, a.r)?;
    } else if a.r.is_some() {
        return Err(usage("--r needs --variant cocas"));
    }
    if let Some(v) = a.nu {
        cfg.train.nu = v;
    }
    if let Some(v) = a.mu {
        cfg.train.mu = v;
    }
    if let Some(v) = a.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    cfg.validate()?;
    if !(0.0..1.0).contains(&a.pollution_rate) {
        return Err(usage(format!("--pollution-rate {} not in [0, 1)", a.pollution_rate)));
    }
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let (index, subsets) = load_prepared(&a.data)?;
    let subsets: Vec<Subset> = if a.subset.is_empty() {
        subsets
    } else {
        let picked: Vec<Subset> = subsets.into_iter().filter(|s| a.subset.contains(&s.name)).collect();
        if picked.len() != a.subset.len() {
            bail!(CoreError::Data(format!("unknown subset among {:?}", a.subset)));
        }
        picked
    };
    let data_dir = fs::canonicalize(&a.data)?;
    let root = g.out_or(Path::new("runs").join(format!("{}-{}", index.dataset, cfg.variant.name())));
    let base_seed = cfg.train.seed;
    for rep in 0..a.repeats as u64 {
        let mut cfg = cfg.clone();
        cfg.train.seed = base_seed + rep;
        let dir = if a.repeats > 1 {
            root.join(format!("seed-{}", cfg.train.seed))
        } else {
            root.clone()
        };
        let mut run_index = RunIndex {
            dataset: index.dataset.clone(),
            data: data_dir.clone(),
            data_hash: index.hash.clone(),
            variant: cfg.variant.to_string(),
            seed: cfg.train.seed,
            pollution_rate: a.pollution_rate,
            subsets: Vec::new(),
        };
        for s in &subsets {
            let sub_dir = dir.join(sanitize(&s.name));
            fs::create_dir_all(&sub_dir).with_context(|| format!("creating {}", sub_dir.display()))?;
            let opts = FitOptions {
                abort_checkpoint: Some(sub_dir.join("abort.json")),
            };
            let (data, run) = run_subset(&cfg, s, a.pollution_rate, &opts)
                .with_context(|| format!("training `{}` with seed {}", s.name, cfg.train.seed))?;
            let hash = run.manifest.hash();
            cfg.save(sub_dir.join("config.toml"))?;
            run.manifest.save(sub_dir.join("manifest.json"))?;
            run.model.save(
                sub_dir.join("model.json"),
                &[
                    ("manifest", hash.clone()),
                    ("variant", cfg.variant.to_string()),
                    ("subset", s.name.clone()),
                ],
            )?;
            atomic_write(&sub_dir.join("epochs.tsv"), epoch_log(&run.state).as_bytes())?;
            atomic_write(&sub_dir.join("batches.tsv"), batch_log(&run.state, cfg.train.nu).as_bytes())?;
            atomic_write(&sub_dir.join("labels.tsv"), label_log(&run.state, &data).as_bytes())?;
            if let Some(last) = run.state.history.last() {
                println!(
                    "{} seed {} {}: {} epochs, loss {:.4}, sims {:.3}/{:.3}/{:.3}, manifest {hash}",
                    s.name,
                    cfg.train.seed,
                    cfg.variant,
                    run.state.epochs_completed,
                    last.mean_loss,
                    last.sim_q_center,
                    last.sim_q_rec_center,
                    last.sim_q_q_rec
                );
            }
            run_index.subsets.push(RunSubset {
                name: s.name.clone(),
                dir: sanitize(&s.name),
                manifest: hash,
            });
        }
        atomic_write(&dir.join(RUN_INDEX), serde_json::to_string_pretty(&run_index)?.as_bytes())?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn epoch_log(state: &TrainState) -> String {
    let mut s = String::from("epoch\tmean_loss\tmean_inv\tsim_q_center\tsim_q_rec_center\tsim_q_q_rec\tlabels\tval_inv\n");
    for e in &state.history {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.epoch,
            e.mean_loss,
            e.mean_inv,
            e.sim_q_center,
            e.sim_q_rec_center,
            e.sim_q_q_rec,
            e.labels,
            e.val_inv.map_or(String::new(), |v| v.to_string())
        );
    }
    s
}

/// Per-batch log with the label budget next to the labels actually assigned.
fn batch_log(state: &TrainState, nu: f64) -> String {
    let mut s = String::from("epoch\tbatch\tsize\tlabels\tbudget\tlabel_fraction\ttotal\tdata_term\tvar_q\tvar_q_rec\tmean_inv\tcenter_frozen\n");
    for b in &state.batches {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}",
            b.epoch,
            b.batch,
            b.size,
            b.labels,
            label_budget(b.size, nu),
            b.labels as f64 / b.size.max(1) as f64,
            b.total,
            b.data_term,
            b.var_q,
            b.var_q_rec,
            b.mean_inv,
            b.center_frozen
        );
    }
    s
}

/// Final-epoch latent labels next to the injection mask.
fn label_log(state: &TrainState, data: &roca_core::experiment::PreparedData) -> String {
    let mut s = String::from("window\tinjected\tlabel\n");
    for (i, l) in state.last_labels.iter().enumerate() {
        let _ = writeln!(s, "{i}\t{}\t{l}", data.is_contaminated(i) as u8);
    }
    s
}

/// Expands directories holding `seed-*` runs into the runs themselves.
fn collect_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(RUN_INDEX).is_file() {
            out.push(p.clone());
            continue;
        }
        let mut nested: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("reading run directory {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join(RUN_INDEX).is_file())
            .collect();
        if nested.is_empty() {
            bail!(CoreError::Data(format!("{} holds no trained run ({RUN_INDEX} missing)", p.display())));
        }
        nested.sort();
        out.extend(nested);
    }
    Ok(out)
}

fn eval_settings(cfg: &ExperimentConfig, metrics: &[String], mode: Option<ThresholdMode>, granularity: Granularity) -> Result<EvalSettings> {
    let metrics = metrics.iter().map(|m| Metric::parse(m)).collect::<roca_core::Result<Vec<_>>>()?;
    if metrics.is_empty() {
        return Err(usage("no metrics requested"));
    }
    let mode = mode.unwrap_or(if cfg.profile == Profile::Ucr {
        ThresholdMode::Top1
    } else {
        ThresholdMode::Validation
    });
    Ok(EvalSettings {
        metrics,
        mode,
        granularity,
    })
}

fn eval_options() -> PrepareOptions {
    PrepareOptions {
        contamination: None,
        augmentation: None,
        validation_fraction: 0.1,
    }
}

fn has_labels(s: &Subset) -> bool {
    s.test.labels.as_ref().is_some_and(|l| l.contains(&1))
}

fn cmd_eval(g: &Globals, a: EvalArgs) -> Result<()> {
    if a.runs.is_empty() && !a.ras {
        return Err(usage("give at least one run directory or --ras"));
    }
    let runs = collect_runs(&a.runs)?;
    let mut cache: HashMap<PathBuf, (harness::PreparedIndex, Vec<Subset>)> = HashMap::new();
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut skipped = Vec::new();
    let mut ras_data: Option<PathBuf> = a.data.clone();
    for run_dir in &runs {
        let run: RunIndex = serde_json::from_str(&fs::read_to_string(run_dir.join(RUN_INDEX))?)
            .with_context(|| format!("reading {}", run_dir.join(RUN_INDEX).display()))?;
        let data_dir = a.data.clone().unwrap_or_else(|| run.data.clone());
        ras_data.get_or_insert_with(|| data_dir.clone());
        if !cache.contains_key(&data_dir) {
            cache.insert(data_dir.clone(), load_prepared(&data_dir)?);
        }
        let (index, subsets) = &cache[&data_dir];
        if a.data.is_none() && index.hash != run.data_hash {
            log::warn!("{} changed since {} was trained", data_dir.display(), run_dir.display());
        }
        for rs in &run.subsets {
            let subset = subsets.iter().find(|s| s.name == rs.name).ok_or_else(|| {
                CoreError::Data(format!("subset `{}` is not in {}", rs.name, data_dir.display()))
            })?;
            if !has_labels(subset) {
                skipped.push(subset.name.clone());
                continue;
            }
            let dir = run_dir.join(&rs.dir);
            let cfg = load_config(dir.join("config.toml"))?;
            let spec = subset_spec(&cfg, subset)?;
            let (model, ck) = RocaModel::load(dir.join("model.json"))
                .with_context(|| format!("loading checkpoint {}", dir.join("model.json").display()))?;
            if ck.spec.input_dim != spec.dim || ck.spec.window_length != spec.window_length {
                return Err(CoreError::ProfileMismatch(format!(
                    "checkpoint {} expects dim {} and window {}, data `{}` has dim {} and window {}",
                    dir.display(),
                    ck.spec.input_dim,
                    ck.spec.window_length,
                    subset.name,
                    spec.dim,
                    spec.window_length
                ))
                .into());
            }
            let data = prepare(
                &subset.name,
                &subset.train,
                subset.validation.as_ref(),
                &subset.test,
                &spec,
                &eval_options(),
                cfg.train.seed,
            )?;
            let test_scores = score(&model, &data.test)?;
            let val_scores = data.validation.as_ref().map(|v| score(&model, v)).transpose()?;
            let settings = eval_settings(&cfg, &a.metrics, a.mode, a.granularity)?;
            rows.extend(result_rows(
                &index.dataset,
                &run.variant,
                run.seed,
                &rs.manifest,
                &data,
                &test_scores,
                val_scores.as_deref(),
                &settings,
            )?);
        }
    }
    if a.ras {
        let data_dir = ras_data.ok_or_else(|| usage("--ras needs --data or a run directory"))?;
        if !cache.contains_key(&data_dir) {
            cache.insert(data_dir.clone(), load_prepared(&data_dir)?);
        }
        let (index, subsets) = &cache[&data_dir];
        let cfg = g.base_config()?;
        let settings = eval_settings(&cfg, &a.metrics, a.mode, a.granularity)?;
        let base = g.seed.unwrap_or(0);
        for subset in subsets {
            if !has_labels(subset) {
                skipped.push(subset.name.clone());
                continue;
            }
            let spec = subset_spec(&cfg, subset)?;
            let data = prepare(
                &subset.name,
                &subset.train,
                subset.validation.as_ref(),
                &subset.test,
                &spec,
                &eval_options(),
                base,
            )?;
            for seed in base..base + a.ras_seeds as u64 {
                rows.extend(ras_rows(&index.dataset, seed, &data, &settings)?);
            }
        }
    }
    skipped.sort();
    skipped.dedup();
    for s in &skipped {
        eprintln!("note: `{s}` has no labeled anomalies in its test stream; no metrics computed");
    }
    let rows = with_aggregates(&rows)?;
    let out = g.out_or("results");
    fs::create_dir_all(&out)?;
    let path = out.join("results.tsv");
    write_results(&path, &rows)?;
    print!("{}", harness::render_main_table(&summarize(&rows)?));
    println!("{} row(s) written to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_sweep(g: &Globals, a: SweepArgs) -> Result<()> {
    let mut base = g.base_config()?;
    if let Some(e) = a.epochs {
        base.train.epochs = e;
    }
    let variants = if a.variants.is_empty() {
        vec![base.variant]
    } else {
        a.variants
            .iter()
            .map(|v| Variant::parse(v, if v.eq_ignore_ascii_case("cocas") { a.r } else { None }))
            .collect::<roca_core::Result<Vec<_>>>()?
    };
    let mut spec = SweepSpec::new(a.param, a.values.clone(), base.clone());
    spec.repetitions = a.repetitions;
    spec.variants = variants;
    spec.pollution_rate = a.pollution_rate;
    spec.metric = Metric::parse(&a.metric)?;
    spec.validate()?;
    let (_, subsets) = load_prepared(&a.data)?;
    let settings = eval_settings(&base, &[a.metric.clone()], a.mode, Granularity::Window)?;
    let out = g.out_or(Path::new("sweeps").join(a.param.to_string()));
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let total = spec.values.len() * spec.variants.len() * spec.repetitions;
    let mut done = 0usize;
    let cells = harness::run_sweep(&spec, &subsets, &settings, a.workers, |c| {
        done += 1;
        let file = cells_dir.join(format!("{}-{}-{}-s{}.json", a.param, c.value, c.variant, c.seed));
        if let Ok(json) = serde_json::to_vec_pretty(c) {
            if let Err(e) = atomic_write(&file, &json) {
                log::warn!("writing {}: {e}", file.display());
            }
        }
        if c.ok() {
            eprintln!("[{done}/{total}] {}={} {} seed {}: F1 {:.4}", a.param, c.value, c.variant, c.seed, c.f1);
        } else {
            eprintln!("[{done}/{total}] {}={} {} seed {}: failed: {}", a.param, c.value, c.variant, c.seed, c.error);
        }
    })?;
    atomic_write(&out.join("sweep.tsv"), harness::sweep_table(a.param, &cells).as_bytes())?;
    atomic_write(&out.join("boxplot.tsv"), harness::boxplot_table(&cells).as_bytes())?;
    atomic_write(&out.join("lines.tsv"), harness::line_table(&cells).as_bytes())?;
    print!("{}", harness::boxplot_table(&cells));
    let failed = cells.iter().filter(|c| !c.ok()).count();
    if failed == cells.len() {
        bail!(CoreError::Data(format!("all {failed} sweep cells failed; see {}", cells_dir.display())));
    }
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see {}", cells.len(), out.join("sweep.tsv").display());
    }
    Ok(())
}

fn cmd_report(g: &Globals, a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.results {
        rows.extend(harness::read_results(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let summary = summarize(&rows)?;
    let mut text = harness::render_main_table(&summary);
    if let Some(m) = &a.ablation {
        let metric = Metric::parse(m)?.to_string();
        text.push_str(&harness::render_ablation_table(&summary, &metric));
    }
    print!("{text}");
    if let Some(out) = &g.out {
        fs::create_dir_all(out)?;
        atomic_write(&out.join("report.txt"), text.as_bytes())?;
    }
    Ok(())
}
