//! Experiment bookkeeping shared by the command-line front end: dataset
//! sources and prepared artifacts, per-run training, result rows, summary
//! tables and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, SeriesSpec, Variant};
use crate::data::{
    load_benchmark, read_series_csv, series_csv_bytes, ContaminationPlan, GapPolicy, RawSeries, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::experiment::{evaluate, prepare, ras_scores, train_and_score, EvalSettings, PrepareOptions, PreparedData, TrainedRun};
use crate::metrics::{aggregate, Metric};
use crate::trainer::FitOptions;

/// Subset name used for segment-weighted aggregate rows.
pub const AGGREGATE: &str = "*";

/// Seeds of the repeated-run protocol.
pub fn default_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

/// One sub-dataset with its splits, before normalization and windowing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    pub spec: SeriesSpec,
    pub train: RawSeries,
    pub validation: Option<RawSeries>,
    pub test: RawSeries,
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { spec: SyntheticSpec, seed: u64 },
    Benchmark { name: String, root: PathBuf },
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            DataSource::Synthetic { spec, .. } => spec.name.clone(),
            DataSource::Benchmark { name, .. } => name.to_ascii_lowercase(),
        }
    }

    pub fn load(&self) -> Result<Vec<Subset>> {
        match self {
            DataSource::Synthetic { spec, seed } => {
                let d = spec.generate(*seed)?;
                Ok(vec![Subset {
                    name: spec.name.clone(),
                    spec: d.spec,
                    train: d.train,
                    validation: Some(d.validation),
                    test: d.test,
                }])
            }
            DataSource::Benchmark { name, root } => Ok(load_benchmark(name, root)?
                .into_iter()
                .map(|b| Subset {
                    name: b.name,
                    spec: b.spec,
                    train: b.train,
                    validation: None,
                    test: b.test,
                })
                .collect()),
        }
    }
}

/// Index of a prepared dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedIndex {
    pub dataset: String,
    pub source: DataSource,
    pub subsets: Vec<PreparedEntry>,
    /// SHA-256 over every subset hash, first 16 hex digits.
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedEntry {
    pub name: String,
    pub spec: SeriesSpec,
    pub train: String,
    pub validation: Option<String>,
    pub test: String,
    pub sha256: String,
}

pub const PREPARED_INDEX: &str = "prepared.json";

/// What [`write_prepared`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct PrepareReport {
    pub index: PreparedIndex,
    /// False when an identical artifact set was already present.
    pub written: bool,
}

fn subset_dir_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes one directory per subset with `train.csv`, `validation.csv` (when
/// present) and `test.csv`, plus the index. Leaves the directory untouched
/// when its index already carries the same hash.
pub fn write_prepared(out: &Path, source: &DataSource, subsets: &[Subset]) -> Result<PrepareReport> {
    let mut entries = Vec::with_capacity(subsets.len());
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut all = Sha256::new();
    for s in subsets {
        let dir = subset_dir_name(&s.name);
        let mut h = Sha256::new();
        let mut add = |file: &str, series: &RawSeries| -> Result<String> {
            let bytes = series_csv_bytes(series)?;
            h.update(file.as_bytes());
            h.update(&bytes);
            let rel = format!("{dir}/{file}");
            files.push((out.join(&rel), bytes));
            Ok(rel)
        };
        let train = add("train.csv", &s.train)?;
        let validation = s.validation.as_ref().map(|v| add("validation.csv", v)).transpose()?;
        let test = add("test.csv", &s.test)?;
        h.update(serde_json::to_vec(&s.spec)?);
        let sha = hex::encode(h.finalize());
        all.update(sha.as_bytes());
        entries.push(PreparedEntry {
            name: s.name.clone(),
            spec: s.spec.clone(),
            train,
            validation,
            test,
            sha256: sha,
        });
    }
    let index = PreparedIndex {
        dataset: source.name(),
        source: source.clone(),
        subsets: entries,
        hash: hex::encode(all.finalize())[..16].to_string(),
    };
    let index_path = out.join(PREPARED_INDEX);
    if let Ok(existing) = read_index(out) {
        if existing.hash == index.hash && existing.subsets.iter().all(|e| out.join(&e.test).is_file()) {
            return Ok(PrepareReport { index: existing, written: false });
        }
    }
    for (path, bytes) in files {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        atomic_write(&path, &bytes)?;
    }
    atomic_write(&index_path, serde_json::to_string_pretty(&index)?.as_bytes())?;
    Ok(PrepareReport { index, written: true })
}

fn read_index(dir: &Path) -> Result<PreparedIndex> {
    let text = fs::read_to_string(dir.join(PREPARED_INDEX))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes through a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a prepared directory back.
pub fn load_prepared(dir: &Path) -> Result<(PreparedIndex, Vec<Subset>)> {
    let index = read_index(dir).map_err(|e| {
        Error::Data(format!(
            "{} is not a prepared dataset ({e}); run `roca prepare` first",
            dir.display()
        ))
    })?;
    let read = |rel: &str| read_series_csv(dir.join(rel), GapPolicy::Reject);
    let mut subsets = Vec::with_capacity(index.subsets.len());
    for e in &index.subsets {
        subsets.push(Subset {
            name: e.name.clone(),
            spec: e.spec.clone(),
            train: read(&e.train)?,
            validation: e.validation.as_deref().map(read).transpose()?,
            test: read(&e.test)?,
        });
    }
    Ok((index, subsets))
}

/// Geometry a config imposes on a subset; the dimension must agree.
pub fn subset_spec(cfg: &ExperimentConfig, subset: &Subset) -> Result<SeriesSpec> {
    if cfg.series.dim != subset.train.dim() {
        return Err(Error::ProfileMismatch(format!(
            "config expects {} dimension(s), subset `{}` has {}",
            cfg.series.dim,
            subset.name,
            subset.train.dim()
        )));
    }
    Ok(SeriesSpec {
        name: subset.name.clone(),
        ..cfg.series.clone()
    })
}

/// Normalizes, windows, contaminates and augments one subset.
pub fn prepare_subset(cfg: &ExperimentConfig, subset: &Subset, pollution_rate: f64) -> Result<PreparedData> {
    let spec = subset_spec(cfg, subset)?;
    let opts = PrepareOptions {
        contamination: (pollution_rate > 0.0).then(|| ContaminationPlan::new(pollution_rate)),
        ..PrepareOptions::from_config(cfg)
    };
    prepare(
        &subset.name,
        &subset.train,
        subset.validation.as_ref(),
        &subset.test,
        &spec,
        &opts,
        cfg.train.seed,
    )
}

/// Trains one subset end to end.
pub fn run_subset(
    cfg: &ExperimentConfig,
    subset: &Subset,
    pollution_rate: f64,
    opts: &FitOptions,
) -> Result<(PreparedData, TrainedRun)> {
    let data = prepare_subset(cfg, subset, pollution_rate)?;
    let mut run = train_and_score(cfg, &data, opts)?;
    run.manifest.note("pollution_rate", pollution_rate);
    Ok((data, run))
}

/// One line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub subset: String,
    pub variant: String,
    pub metric: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Truth segments in the subset's test stream.
    pub segments: usize,
    pub tau: f64,
    pub mode: String,
    pub seed: u64,
    pub manifest: String,
}

/// Column order of results files.
pub const RESULTS_HEADER: &str = "dataset\tsubset\tvariant\tmetric\tprecision\trecall\tf1\tsegments\ttau\tmode\tseed\tmanifest";

/// Scores one subset's test stream under every configured metric.
pub fn result_rows(
    dataset: &str,
    variant: &str,
    seed: u64,
    manifest: &str,
    data: &PreparedData,
    test_scores: &[f64],
    val_scores: Option<&[f64]>,
    settings: &EvalSettings,
) -> Result<Vec<ResultRow>> {
    Ok(evaluate(data, test_scores, val_scores, settings)?
        .into_iter()
        .map(|r| ResultRow {
            dataset: dataset.to_string(),
            subset: data.name.clone(),
            variant: variant.to_string(),
            metric: r.outcome.metric.to_string(),
            precision: r.outcome.scores.precision,
            recall: r.outcome.scores.recall,
            f1: r.outcome.scores.f1,
            segments: r.outcome.segments,
            tau: r.outcome.threshold,
            mode: r.mode.to_string(),
            seed,
            manifest: manifest.to_string(),
        })
        .collect())
}

/// The random baseline through the same evaluation path. Its provenance
/// string is the hash of the prepared data it scored.
pub fn ras_rows(dataset: &str, seed: u64, data: &PreparedData, settings: &EvalSettings) -> Result<Vec<ResultRow>> {
    let (val, test) = ras_scores(data, seed);
    let tag = format!("ras-{}", &data.test.fingerprint()[..12]);
    result_rows(dataset, "ras", seed, &tag, data, &test, val.as_deref(), settings)
}

/// Appends one segment-weighted aggregate row per (dataset, variant, metric,
/// seed) group that spans more than one subset. Precision and recall use the
/// same weights as F1.
pub fn with_aggregates(rows: &[ResultRow]) -> Result<Vec<ResultRow>> {
    let mut out: Vec<ResultRow> = rows.iter().filter(|r| r.subset != AGGREGATE).cloned().collect();
    let mut groups: BTreeMap<(String, String, String, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.subset != AGGREGATE) {
        groups
            .entry((r.dataset.clone(), r.variant.clone(), r.metric.clone(), r.seed))
            .or_default()
            .push(r);
    }
    for ((dataset, variant, metric, seed), members) in groups {
        if members.len() < 2 {
            continue;
        }
        let weighted = |f: fn(&ResultRow) -> f64| -> Result<f64> {
            aggregate(&members.iter().map(|r| (r.segments, f(r))).collect::<Vec<_>>())
        };
        let mut hasher = Sha256::new();
        for m in &members {
            hasher.update(m.manifest.as_bytes());
        }
        out.push(ResultRow {
            dataset,
            subset: AGGREGATE.into(),
            variant,
            metric,
            precision: weighted(|r| r.precision)?,
            recall: weighted(|r| r.recall)?,
            f1: weighted(|r| r.f1)?,
            segments: members.iter().map(|r| r.segments).sum(),
            tau: f64::NAN,
            mode: members[0].mode.clone(),
            seed,
            manifest: hex::encode(hasher.finalize())[..16].to_string(),
        });
    }
    Ok(out)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let bytes = if rows.is_empty() {
        format!("{RESULTS_HEADER}\n").into_bytes()
    } else {
        bytes
    };
    atomic_write(path, &bytes)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Percentages with two decimals, e.g. `50.14±5.08`.
pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

/// Mean and spread of one (dataset, variant, metric) cell across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub variant: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f1: (f64, f64),
    pub manifests: Vec<String>,
}

/// Collapses rows to one summary per (dataset, variant, metric), taking the
/// aggregate row of each seed when present and the single subset otherwise.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    let rows = with_aggregates(rows)?;
    let mut per_seed: BTreeMap<(String, String, String), BTreeMap<u64, &ResultRow>> = BTreeMap::new();
    for r in &rows {
        let slot = per_seed
            .entry((r.dataset.clone(), r.variant.clone(), r.metric.clone()))
            .or_default();
        match slot.get(&r.seed) {
            Some(existing) if existing.subset == AGGREGATE => {}
            _ => {
                slot.insert(r.seed, r);
            }
        }
    }
    Ok(per_seed
        .into_iter()
        .map(|((dataset, variant, metric), seeds)| {
            let pick = |f: fn(&ResultRow) -> f64| seeds.values().map(|r| f(r)).collect::<Vec<_>>();
            SummaryRow {
                dataset,
                variant,
                metric,
                seeds: seeds.keys().copied().collect(),
                precision: mean_std(&pick(|r| r.precision)),
                recall: mean_std(&pick(|r| r.recall)),
                f1: mean_std(&pick(|r| r.f1)),
                manifests: seeds.values().map(|r| r.manifest.clone()).collect(),
            }
        })
        .collect())
}

/// Left-aligned plain-text table.
pub fn render_table(header: &[String], body: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0usize; cols];
    for row in std::iter::once(header).chain(body.iter().map(Vec::as_slice)) {
        for (i, cell) in row.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |row: &[String]| {
        row.iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<w$}", w = width[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn metric_order(name: &str) -> (u8, String) {
    match Metric::parse(name) {
        Ok(Metric::Pw) => (0, String::new()),
        Ok(Metric::Pa) => (1, String::new()),
        Ok(Metric::PaK(k)) => (2, format!("{k:03}")),
        Ok(Metric::Rpa) => (3, String::new()),
        Err(_) => (4, name.to_string()),
    }
}

/// One block per dataset: a row per variant, precision/recall/F1 columns per
/// metric, all as mean±std percentages over seeds.
pub fn render_main_table(summary: &[SummaryRow]) -> String {
    let mut out = String::new();
    let mut datasets: Vec<&str> = summary.iter().map(|s| s.dataset.as_str()).collect();
    datasets.dedup();
    for dataset in datasets {
        let rows: Vec<&SummaryRow> = summary.iter().filter(|s| s.dataset == dataset).collect();
        let mut metrics: Vec<&str> = rows.iter().map(|s| s.metric.as_str()).collect();
        metrics.sort_by_key(|m| metric_order(m));
        metrics.dedup();
        let mut variants: Vec<&str> = rows.iter().map(|s| s.variant.as_str()).collect();
        variants.sort();
        variants.dedup();
        let mut header = vec!["method".to_string()];
        for m in &metrics {
            header.extend(["P", "R", "F1"].iter().map(|c| format!("{m} {c}")));
        }
        let mut body = Vec::new();
        for v in variants {
            let mut row = vec![v.to_string()];
            for m in &metrics {
                match rows.iter().find(|s| s.variant == v && s.metric == *m) {
                    Some(s) => row.extend([s.precision, s.recall, s.f1].iter().map(|(a, b)| format_pm(*a, *b))),
                    None => row.extend(std::iter::repeat("-".to_string()).take(3)),
                }
            }
            body.push(row);
        }
        out.push_str(&format!("== {dataset} ==\n"));
        out.push_str(&render_table(&header, &body));
        out.push('\n');
    }
    out
}

/// Ablation layout: a row per variant, one F1 column per dataset for one metric.
pub fn render_ablation_table(summary: &[SummaryRow], metric: &str) -> String {
    let rows: Vec<&SummaryRow> = summary.iter().filter(|s| s.metric == metric).collect();
    let mut datasets: Vec<&str> = rows.iter().map(|s| s.dataset.as_str()).collect();
    datasets.sort();
    datasets.dedup();
    let mut variants: Vec<&str> = rows.iter().map(|s| s.variant.as_str()).collect();
    variants.sort();
    variants.dedup();
    let header: Vec<String> = std::iter::once("variant".to_string())
        .chain(datasets.iter().map(|d| format!("{d} {metric} F1")))
        .collect();
    let body: Vec<Vec<String>> = variants
        .iter()
        .map(|v| {
            std::iter::once(v.to_string())
                .chain(datasets.iter().map(|d| {
                    rows.iter()
                        .find(|s| s.variant == *v && s.dataset == *d)
                        .map_or("-".to_string(), |s| format_pm(s.f1.0, s.f1.1))
                }))
                .collect()
        })
        .collect();
    render_table(&header, &body)
}

/// Sweepable hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Mu,
    Nu,
    /// Pollution rate of the training set.
    Pr,
    Lambda,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "mu" | "μ" => Ok(SweepParam::Mu),
            "nu" | "ν" => Ok(SweepParam::Nu),
            "pr" | "pollution_rate" => Ok(SweepParam::Pr),
            "lambda" | "λ" => Ok(SweepParam::Lambda),
            other => Err(Error::validation("param", format!("cannot sweep `{other}` (mu, nu, pr, lambda)"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Mu => "mu",
            SweepParam::Nu => "nu",
            SweepParam::Pr => "pr",
            SweepParam::Lambda => "lambda",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub base: ExperimentConfig,
    pub variants: Vec<Variant>,
    /// Pollution rate of cells that do not sweep it.
    pub pollution_rate: f64,
    pub metric: Metric,
}

impl SweepSpec {
    pub fn new(param: SweepParam, values: Vec<f64>, base: ExperimentConfig) -> Self {
        Self {
            param,
            values,
            repetitions: 10,
            variants: vec![base.variant],
            base,
            pollution_rate: 0.0,
            metric: Metric::Rpa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::validation("repetitions", "must be at least 1"));
        }
        if self.values.is_empty() {
            return Err(Error::validation("values", "empty value list"));
        }
        if self.variants.is_empty() {
            return Err(Error::validation("variants", "empty variant list"));
        }
        for &v in &self.values {
            self.apply(v, self.variants[0], 0)?;
        }
        Ok(())
    }

    /// Config and pollution rate of one cell.
    pub fn apply(&self, value: f64, variant: Variant, seed: u64) -> Result<(ExperimentConfig, f64)> {
        let mut cfg = self.base.clone();
        cfg.variant = variant;
        cfg.train.seed = seed;
        let mut pr = self.pollution_rate;
        match self.param {
            SweepParam::Mu => cfg.train.mu = value,
            SweepParam::Nu => cfg.train.nu = value,
            SweepParam::Lambda => cfg.train.lambda = value,
            SweepParam::Pr => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::validation("pr", format!("{value} must be non-negative")));
                }
                pr = value;
            }
        }
        cfg.validate()?;
        Ok((cfg, pr))
    }
}

/// One (value, variant, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub value: f64,
    pub variant: String,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub manifest: String,
    /// Empty on success.
    pub error: String,
}

impl CellOutcome {
    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

/// Trains and evaluates one cell over every subset; the cell's score is the
/// segment-weighted aggregate.
pub fn run_cell(
    spec: &SweepSpec,
    subsets: &[Subset],
    value: f64,
    variant: Variant,
    seed: u64,
    settings: &EvalSettings,
) -> CellOutcome {
    let attempt = || -> Result<(f64, f64, f64, String)> {
        let (cfg, pr) = spec.apply(value, variant, seed)?;
        let settings = EvalSettings {
            metrics: vec![spec.metric],
            ..settings.clone()
        };
        let mut rows = Vec::new();
        for s in subsets {
            let (data, run) = run_subset(&cfg, s, pr, &FitOptions::default())?;
            rows.extend(result_rows(
                "sweep",
                variant.name(),
                seed,
                &run.manifest.hash(),
                &data,
                &run.test_scores,
                run.val_scores.as_deref(),
                &settings,
            )?);
        }
        let rows = with_aggregates(&rows)?;
        let r = rows
            .iter()
            .find(|r| r.subset == AGGREGATE)
            .or_else(|| rows.first())
            .ok_or_else(|| Error::Data("no subsets to evaluate".into()))?;
        Ok((r.precision, r.recall, r.f1, r.manifest.clone()))
    };
    let base = CellOutcome {
        value,
        variant: variant.name().to_string(),
        seed,
        precision: f64::NAN,
        recall: f64::NAN,
        f1: f64::NAN,
        manifest: String::new(),
        error: String::new(),
    };
    match attempt() {
        Ok((precision, recall, f1, manifest)) => CellOutcome {
            precision,
            recall,
            f1,
            manifest,
            ..base
        },
        Err(e) => {
            log::warn!("sweep cell {}={value} {} seed {seed} failed: {e}", spec.param, variant.name());
            CellOutcome {
                error: e.to_string(),
                ..base
            }
        }
    }
}

/// Runs every cell; `progress` sees each finished cell. With `workers > 1`
/// cells are spread over that many threads; the returned order and every
/// cell's result are the same either way.
pub fn run_sweep(
    spec: &SweepSpec,
    subsets: &[Subset],
    settings: &EvalSettings,
    workers: usize,
    progress: impl FnMut(&CellOutcome) + Send,
) -> Result<Vec<CellOutcome>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &value in &spec.values {
        for &variant in &spec.variants {
            for seed in default_seeds(spec.repetitions) {
                jobs.push((value, variant, seed));
            }
        }
    }
    let progress = std::sync::Mutex::new(progress);
    let run = |&(value, variant, seed): &(f64, Variant, u64)| {
        let cell = run_cell(spec, subsets, value, variant, seed, settings);
        (progress.lock().unwrap())(&cell);
        cell
    };
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return Ok(jobs.iter().map(run).collect());
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<CellOutcome>> = vec![None; jobs.len()];
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let cell = run(&jobs[i]);
                done.lock().unwrap()[i] = Some(cell);
            });
        }
    });
    Ok(slots.into_iter().map(|c| c.expect("every cell ran")).collect())
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot summary: whiskers at the extreme values within 1.5 IQR of the
/// quartiles (clamped to the box), everything beyond listed as outliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn new(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo..=hi).contains(x)).collect();
        Some(Self {
            // Whiskers never end inside the box.
            min: inside[0].min(q1),
            q1,
            median,
            q3,
            max: inside[inside.len() - 1].max(q3),
            outliers: v.into_iter().filter(|x| !(lo..=hi).contains(x)).collect(),
        })
    }
}

fn grouped(cells: &[CellOutcome]) -> BTreeMap<(String, u64), (f64, Vec<f64>)> {
    // Keyed by variant and the value's bit pattern so float keys sort stably.
    let mut m: BTreeMap<(String, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.ok()) {
        m.entry((c.variant.clone(), c.value.to_bits()))
            .or_insert_with(|| (c.value, Vec::new()))
            .1
            .push(c.f1);
    }
    m
}

/// `param value variant seed precision recall f1 manifest error`
pub fn sweep_table(param: SweepParam, cells: &[CellOutcome]) -> String {
    let mut s = String::from("param\tvalue\tvariant\tseed\tprecision\trecall\tf1\tmanifest\terror\n");
    for c in cells {
        s.push_str(&format!(
            "{param}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
            c.value,
            c.variant,
            c.seed,
            c.precision,
            c.recall,
            c.f1,
            c.manifest,
            c.error.replace(['\t', '\n'], " ")
        ));
    }
    s
}

/// `value variant n min q1 median q3 max outliers`, outliers comma-separated.
pub fn boxplot_table(cells: &[CellOutcome]) -> String {
    let mut rows: Vec<(f64, String, usize, BoxStats)> = grouped(cells)
        .into_iter()
        .filter_map(|((variant, _), (value, f1))| BoxStats::new(&f1).map(|b| (value, variant, f1.len(), b)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut s = String::from("value\tvariant\tn\tmin\tq1\tmedian\tq3\tmax\toutliers\n");
    for (value, variant, n, b) in rows {
        let outliers: Vec<String> = b.outliers.iter().map(|o| format!("{o:.6}")).collect();
        s.push_str(&format!(
            "{value}\t{variant}\t{n}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            b.min,
            b.q1,
            b.median,
            b.q3,
            b.max,
            outliers.join(",")
        ));
    }
    s
}

/// Mean F1 per value, one series per variant.
pub fn line_series(cells: &[CellOutcome]) -> BTreeMap<String, Vec<(f64, f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for ((variant, _), (value, f1)) in grouped(cells) {
        let (m, s) = mean_std(&f1);
        out.entry(variant).or_default().push((value, m, s));
    }
    for series in out.values_mut() {
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// `variant value mean_f1 std_f1`
pub fn line_table(cells: &[CellOutcome]) -> String {
    let mut s = String::from("variant\tvalue\tmean_f1\tstd_f1\n");
    for (variant, points) in line_series(cells) {
        for (v, m, sd) in points {
            s.push_str(&format!("{variant}\t{v}\t{m:.6}\t{sd:.6}\n"));
        }
    }
    s
}
