//! One run end to end: prepared windows, a trained model or the random
//! baseline, scores, thresholds and metric outcomes.

use serde::{Deserialize, Serialize};

use crate::config::{AugmentationParams, ExperimentConfig, SeriesSpec};
use crate::data::{augment, inject_contamination, make_windows, ContaminationPlan, Normalizer, RawSeries, WindowedDataset};
use crate::error::{Error, Result};
use crate::inference::{decide, expand_to_points, select_threshold, top1_rule, zscores, ThresholdMode};
use crate::manifest::RunManifest;
use crate::metrics::{segments, EvalOutcome, Metric};
use crate::model::{EncoderSpec, RocaModel};
use crate::rng::{stream, substream, Stream};
use crate::trainer::{fit, FitOptions, TrainState};

/// Windowed, normalized streams of one (sub-)dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreparedData {
    pub name: String,
    pub spec: SeriesSpec,
    pub normalizer: Normalizer,
    /// Training windows after contamination and augmentation.
    pub train: WindowedDataset,
    /// Training windows before augmentation.
    pub train_base_len: usize,
    /// Indices of contaminated windows among the first `train_base_len`.
    pub contaminated: Vec<usize>,
    pub validation: Option<WindowedDataset>,
    pub validation_points: Option<Vec<u8>>,
    pub test: WindowedDataset,
    pub test_points: Vec<u8>,
}

impl PreparedData {
    /// Whether training window `i` (augmented index) is a contaminated one.
    pub fn is_contaminated(&self, i: usize) -> bool {
        self.contaminated.binary_search(&(i % self.train_base_len)).is_ok()
    }
}

#[derive(Clone, Debug, Default)]
pub struct PrepareOptions {
    pub contamination: Option<ContaminationPlan>,
    pub augmentation: Option<AugmentationParams>,
    /// Trailing share of the training series used for validation when no
    /// separate validation stream is given.
    pub validation_fraction: f64,
}

impl PrepareOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            contamination: None,
            augmentation: cfg.augment.then(|| cfg.augmentation.clone()),
            validation_fraction: 0.1,
        }
    }
}

pub fn prepare(
    name: &str,
    train: &RawSeries,
    validation: Option<&RawSeries>,
    test: &RawSeries,
    spec: &SeriesSpec,
    opts: &PrepareOptions,
    seed: u64,
) -> Result<PreparedData> {
    let (train, validation) = match validation {
        Some(v) => (train.clone(), Some(v.clone())),
        None if opts.validation_fraction > 0.0 => {
            let (head, tail) = train.split_tail(opts.validation_fraction);
            if tail.len() >= spec.window_length && head.len() >= spec.window_length {
                (head, Some(tail))
            } else {
                (train.clone(), None)
            }
        }
        None => (train.clone(), None),
    };
    let normalizer = Normalizer::fit(&train)?;
    let train_n = normalizer.apply(&train)?;
    let test_n = normalizer.apply(test)?;
    let mut windows = make_windows(&train_n, spec)?;
    if windows.labels.is_none() {
        windows.labels = Some(vec![0; windows.len()]);
    }
    let contaminated = match &opts.contamination {
        Some(plan) => {
            let (w, mask) = inject_contamination(&windows, plan, &mut stream(seed, Stream::Contamination))?;
            windows = w;
            mask
        }
        None => Vec::new(),
    };
    let base_len = windows.len();
    if let Some(params) = &opts.augmentation {
        windows = augment(&windows, params, &mut stream(seed, Stream::Augmentation))?;
    }
    let (validation, validation_points) = match validation {
        Some(v) => {
            let vn = normalizer.apply(&v)?;
            (Some(make_windows(&vn, spec)?), vn.labels.clone())
        }
        None => (None, None),
    };
    let test_w = make_windows(&test_n, spec)?;
    Ok(PreparedData {
        name: name.to_string(),
        spec: spec.clone(),
        normalizer,
        train: windows,
        train_base_len: base_len,
        contaminated,
        validation,
        validation_points,
        test: test_w,
        test_points: test.labels.clone().unwrap_or_else(|| vec![0; test.len()]),
    })
}

/// Unit at which metrics are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One unit per test window, labeled by the any-point rule.
    #[default]
    Window,
    /// One unit per timestamp, window decisions expanded by union.
    Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub metrics: Vec<Metric>,
    pub mode: ThresholdMode,
    pub granularity: Granularity,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Pw, Metric::Pa, Metric::PaK(20), Metric::Rpa],
            mode: ThresholdMode::Validation,
            granularity: Granularity::Window,
        }
    }
}

/// Outcome of one metric together with the threshold mode actually used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub outcome: EvalOutcome,
    pub mode: ThresholdMode,
}

fn stream_truth(ds: &WindowedDataset, points: Option<&[u8]>, g: Granularity) -> Vec<u8> {
    match g {
        Granularity::Window => ds.labels.clone().unwrap_or_else(|| vec![0; ds.len()]),
        Granularity::Point => points.map(<[u8]>::to_vec).unwrap_or_default(),
    }
}

fn stream_pred(decisions: &[u8], ds: &WindowedDataset, t: usize, g: Granularity) -> Vec<u8> {
    match g {
        Granularity::Window => decisions.to_vec(),
        Granularity::Point => expand_to_points(decisions, &ds.origin, ds.window_length(), t),
    }
}

/// Scores every requested metric on the test stream. Each metric gets its
/// own threshold; validation mode falls back to the fixed threshold when the
/// validation stream has no anomalies.
pub fn evaluate(
    data: &PreparedData,
    test_scores: &[f64],
    val_scores: Option<&[f64]>,
    settings: &EvalSettings,
) -> Result<Vec<MetricResult>> {
    if test_scores.len() != data.test.len() {
        return Err(Error::Contract("one score per test window expected".into()));
    }
    let g = settings.granularity;
    let truth = stream_truth(&data.test, Some(&data.test_points), g);
    let t = data.test_points.len();
    let (test_z, _) = zscores(test_scores);
    let val_truth = data
        .validation
        .as_ref()
        .map(|v| stream_truth(v, data.validation_points.as_deref(), g));
    let mut mode = settings.mode;
    if mode == ThresholdMode::Validation {
        let usable = matches!((&val_truth, val_scores), (Some(vt), Some(_)) if vt.contains(&1));
        if !usable {
            log::warn!("{}: validation stream has no labeled anomalies; using the fixed threshold", data.name);
            mode = ThresholdMode::Fixed;
        }
    }
    let seg_count = segments(&truth).len();
    let mut out = Vec::with_capacity(settings.metrics.len());
    for &metric in &settings.metrics {
        let (tau, decisions) = match mode {
            ThresholdMode::Top1 => (f64::NAN, top1_rule(test_scores)),
            ThresholdMode::Fixed => {
                let c = select_threshold(test_scores, None, metric)?;
                (c.tau, decide(&test_z, c.tau))
            }
            ThresholdMode::Test => {
                let tau = search(test_scores, &data.test, t, &truth, metric, g)?;
                (tau, decide(&test_z, tau))
            }
            ThresholdMode::Validation => {
                let v = data.validation.as_ref().unwrap();
                let vt = val_truth.as_ref().unwrap();
                let vlen = data.validation_points.as_ref().map_or(0, Vec::len);
                let tau = search(val_scores.unwrap(), v, vlen, vt, metric, g)?;
                (tau, decide(&test_z, tau))
            }
        };
        let pred = stream_pred(&decisions, &data.test, t, g);
        out.push(MetricResult {
            outcome: EvalOutcome {
                metric,
                scores: metric.evaluate(&truth, &pred),
                segments: seg_count,
                threshold: tau,
            },
            mode,
        });
    }
    Ok(out)
}

fn search(
    scores: &[f64],
    ds: &WindowedDataset,
    t: usize,
    truth: &[u8],
    metric: Metric,
    g: Granularity,
) -> Result<f64> {
    match g {
        Granularity::Window => Ok(select_threshold(scores, Some(truth), metric)?.tau),
        Granularity::Point => {
            let (z, constant) = zscores(scores);
            if constant {
                return Ok(crate::inference::DEFAULT_TAU);
            }
            let mut best = (f64::NEG_INFINITY, crate::inference::DEFAULT_TAU);
            for tau in crate::inference::threshold_grid() {
                let pred = expand_to_points(&decide(&z, tau), &ds.origin, ds.window_length(), t);
                let f1 = metric.evaluate(truth, &pred).f1;
                if f1 > best.0 {
                    best = (f1, tau);
                }
            }
            Ok(best.1)
        }
    }
}

/// A trained model with its history and scores.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: RocaModel,
    pub state: TrainState,
    pub manifest: RunManifest,
    pub test_scores: Vec<f64>,
    pub val_scores: Option<Vec<f64>>,
}

pub fn build_model(cfg: &ExperimentConfig, spec: &SeriesSpec) -> Result<RocaModel> {
    let enc = EncoderSpec::new(spec, &cfg.model, cfg.train.dropout)?;
    RocaModel::new(enc, &mut stream(cfg.train.seed, Stream::Init))
}

pub fn train_and_score(cfg: &ExperimentConfig, data: &PreparedData, opts: &FitOptions) -> Result<TrainedRun> {
    let mut model = build_model(cfg, &data.spec)?;
    let mut manifest = RunManifest::new(cfg, data.train.fingerprint());
    manifest.note("dataset", &data.name);
    manifest.note("contaminated_windows", data.contaminated.len());
    manifest.note("train_windows", data.train.len());
    let state = fit(&mut model, &data.train, data.validation.as_ref(), cfg, opts)?;
    if let Some(e) = state.early_stopped_at {
        manifest.note("early_stopped_at", e);
    }
    manifest.note("epochs_completed", state.epochs_completed);
    let test_scores = crate::inference::score(&model, &data.test)?;
    let val_scores = match &data.validation {
        Some(v) => Some(crate::inference::score(&model, v)?),
        None => None,
    };
    manifest.finish();
    Ok(TrainedRun {
        model,
        state,
        manifest,
        test_scores,
        val_scores,
    })
}

/// Random scores for validation and test windows.
pub fn ras_scores(data: &PreparedData, seed: u64) -> (Option<Vec<f64>>, Vec<f64>) {
    let val = data
        .validation
        .as_ref()
        .map(|v| crate::metrics::ras_baseline(v.len(), &mut substream(seed, Stream::Data, 101)));
    let test = crate::metrics::ras_baseline(data.test.len(), &mut substream(seed, Stream::Data, 102));
    (val, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn small() -> PreparedData {
        let spec = SyntheticSpec {
            train_len: 16 * 40,
            val_len: 16 * 50,
            test_len: 16 * 100,
            anomaly_ratio: 0.1,
            ..SyntheticSpec::default()
        };
        let d = spec.generate(3).unwrap();
        let opts = PrepareOptions {
            contamination: Some(ContaminationPlan::new(0.1)),
            augmentation: Some(AugmentationParams::default()),
            validation_fraction: 0.1,
        };
        prepare("s", &d.train, Some(&d.validation), &d.test, &d.spec, &opts, 3).unwrap()
    }

    #[test]
    fn prepare_bookkeeping() {
        let p = small();
        assert_eq!(p.train_base_len, 40);
        assert_eq!(p.train.len(), 120);
        assert_eq!(p.contaminated.len(), 4);
        for i in 0..120 {
            assert_eq!(p.is_contaminated(i), p.train.labels.as_ref().unwrap()[i] == 1);
        }
        assert_eq!(p.test.len(), 100);
    }

    #[test]
    fn perfect_scores_score_perfectly() {
        let p = small();
        let scores: Vec<f64> = p.test.labels.as_ref().unwrap().iter().map(|&y| y as f64).collect();
        let val: Vec<f64> = p.validation.as_ref().unwrap().labels.as_ref().unwrap().iter().map(|&y| y as f64).collect();
        for g in [Granularity::Window, Granularity::Point] {
            let settings = EvalSettings {
                granularity: g,
                ..EvalSettings::default()
            };
            for r in evaluate(&p, &scores, Some(&val), &settings).unwrap() {
                assert_eq!(r.mode, ThresholdMode::Validation);
                if g == Granularity::Window {
                    assert_eq!(r.outcome.scores.f1, 1.0, "{}", r.outcome.metric);
                } else {
                    assert_eq!(r.outcome.scores.recall, 1.0, "{}", r.outcome.metric);
                }
            }
        }
    }
}
