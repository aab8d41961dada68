//! Test-time scores, z-scoring, thresholds and point decisions.

use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::model::RocaModel;
use crate::trainer::eval_invariance;

/// Fallback threshold in z-score units.
pub const DEFAULT_TAU: f64 = 3.0;

/// Per-window invariance in evaluation mode.
pub fn score(model: &RocaModel, ds: &WindowedDataset) -> Result<Vec<f64>> {
    let center = model
        .center()
        .ok_or_else(|| Error::Contract("model has no frozen center; train it first".into()))?;
    Ok(eval_invariance(model, &ds.windows, center, 256))
}

/// Standardizes with the population mean and std. A constant vector maps to
/// zeros and the flag is set.
pub fn zscores(raw: &[f64]) -> (Vec<f64>, bool) {
    let n = raw.len().max(1) as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return (vec![0.0; raw.len()], true);
    }
    (raw.iter().map(|v| (v - mean) / sd).collect(), false)
}

/// The 601 candidates `-3.00, -2.99, ..., 3.00`.
pub fn threshold_grid() -> Vec<f64> {
    (0..=600).map(|i| (i as f64 - 300.0) / 100.0).collect()
}

pub fn decide(z: &[f64], tau: f64) -> Vec<u8> {
    z.iter().map(|&v| (v > tau) as u8).collect()
}

/// Where the threshold's labels come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Searched on a labeled validation stream.
    #[default]
    Validation,
    /// Searched on the test labels themselves.
    Test,
    /// [`DEFAULT_TAU`], no search.
    Fixed,
    /// Only the top-scoring window is flagged.
    Top1,
}

impl std::fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdMode::Validation => "validation",
            ThresholdMode::Test => "test",
            ThresholdMode::Fixed => "fixed",
            ThresholdMode::Top1 => "top1",
        })
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            "fixed" => Ok(Self::Fixed),
            "top1" => Ok(Self::Top1),
            _ => Err(Error::validation("threshold_mode", format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub tau: f64,
    /// Metric F1 at `tau` on the stream it was searched on.
    pub objective: Option<f64>,
    pub constant_scores: bool,
}

/// Picks the smallest grid value maximizing `metric` F1 of `labels` against
/// the z-scored `raw` scores; without labels, or for constant scores, returns
/// [`DEFAULT_TAU`].
pub fn select_threshold(raw: &[f64], labels: Option<&[u8]>, metric: Metric) -> Result<ThresholdChoice> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite scores".into()));
    }
    let (z, constant) = zscores(raw);
    if constant {
        log::warn!("constant scores; using the default threshold");
    }
    let labels = match labels {
        Some(l) if !constant => l,
        _ => {
            return Ok(ThresholdChoice {
                tau: DEFAULT_TAU,
                objective: None,
                constant_scores: constant,
            })
        }
    };
    if labels.len() != raw.len() {
        return Err(Error::Contract("label and score lengths differ".into()));
    }
    let mut best = (f64::NEG_INFINITY, DEFAULT_TAU);
    for tau in threshold_grid() {
        let f1 = metric.evaluate(labels, &decide(&z, tau)).f1;
        if f1 > best.0 {
            best = (f1, tau);
        }
    }
    Ok(ThresholdChoice {
        tau: best.1,
        objective: Some(best.0),
        constant_scores: false,
    })
}

/// Flags the single highest score; ties go to the earliest.
pub fn top1_rule(raw: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; raw.len()];
    if let Some((i, _)) = raw
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, b)) if v <= b => acc,
            _ => Some((i, v)),
        })
    {
        out[i] = 1;
    }
    out
}

/// A point is flagged iff a flagged window covers it.
pub fn expand_to_points(decisions: &[u8], origin: &[usize], window: usize, t: usize) -> Vec<u8> {
    let mut out = vec![0u8; t];
    for (&d, &o) in decisions.iter().zip(origin) {
        if d == 1 {
            out[o.min(t)..(o + window).min(t)].iter_mut().for_each(|p| *p = 1);
        }
    }
    out
}

/// Scores of one stream with their decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub raw: Vec<f64>,
    pub zscores: Vec<f64>,
    pub threshold: f64,
    pub decisions: Vec<u8>,
    pub point_decisions: Vec<u8>,
}

impl ScoreSeries {
    pub fn new(raw: Vec<f64>, threshold: f64, origin: &[usize], window: usize, t: usize) -> Self {
        let (z, _) = zscores(&raw);
        let decisions = decide(&z, threshold);
        let point_decisions = expand_to_points(&decisions, origin, window, t);
        Self {
            raw,
            zscores: z,
            threshold,
            decisions,
            point_decisions,
        }
    }

    /// Columnar text: `index,raw,zscore,decision`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,raw,zscore,decision\n");
        for i in 0..self.raw.len() {
            s.push_str(&format!("{i},{},{},{}\n", self.raw[i], self.zscores[i], self.decisions[i]));
        }
        s
    }
}
