//! Segment-aware detection metrics over binary label streams.
//!
//! A stream is a pair of equal-length 0/1 vectors. The unit of a stream is
//! whatever the caller indexes by: timestamps or windows.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From confusion counts; zero denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pw,
    Pa,
    /// PA%K with `K` in percent.
    PaK(u8),
    Rpa,
}

impl Metric {
    pub fn evaluate(self, truth: &[u8], pred: &[u8]) -> Prf {
        match self {
            Metric::Pw => pw_scores(truth, pred),
            Metric::Pa => pa_scores(truth, pred),
            Metric::PaK(k) => pak_scores(truth, pred, k as f64),
            Metric::Rpa => rpa_scores(truth, pred),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let l = s.trim().to_ascii_lowercase();
        match l.as_str() {
            "pw" => Ok(Metric::Pw),
            "pa" => Ok(Metric::Pa),
            "rpa" => Ok(Metric::Rpa),
            _ => {
                let k = l
                    .strip_prefix("pa%k(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| l.strip_prefix("pak"))
                    .and_then(|k| k.parse::<u8>().ok())
                    .filter(|k| *k <= 100)
                    .ok_or_else(|| Error::validation("metrics", format!("unknown metric `{s}`")))?;
                Ok(Metric::PaK(k))
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Pw => write!(f, "PW"),
            Metric::Pa => write!(f, "PA"),
            Metric::PaK(k) => write!(f, "PA%K({k})"),
            Metric::Rpa => write!(f, "RPA"),
        }
    }
}

/// Maximal runs of ones as inclusive `(start, end)` pairs.
pub fn segments(truth: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in truth.iter().enumerate() {
        match (v == 1, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, truth.len() - 1));
    }
    out
}

fn check(truth: &[u8], pred: &[u8]) {
    assert_eq!(truth.len(), pred.len(), "truth and prediction lengths differ");
}

pub fn pw_scores(truth: &[u8], pred: &[u8]) -> Prf {
    check(truth, pred);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    Prf::from_counts(tp, fp, fn_)
}

/// Segments with more than `k` percent of their points detected become fully
/// detected.
pub fn pak_adjust(truth: &[u8], pred: &[u8], k: f64) -> Vec<u8> {
    check(truth, pred);
    let mut out = pred.to_vec();
    for (s, e) in segments(truth) {
        let hits = pred[s..=e].iter().filter(|&&p| p == 1).count();
        let len = e - s + 1;
        if hits > 0 && hits as f64 * 100.0 > k * len as f64 {
            out[s..=e].iter_mut().for_each(|p| *p = 1);
        }
    }
    out
}

/// Any hit inside a truth segment marks the whole segment detected.
pub fn pa_adjust(truth: &[u8], pred: &[u8]) -> Vec<u8> {
    pak_adjust(truth, pred, 0.0)
}

pub fn pa_scores(truth: &[u8], pred: &[u8]) -> Prf {
    pw_scores(truth, &pa_adjust(truth, pred))
}

/// `k = 0` reproduces PA and `k = 100` reproduces PW.
pub fn pak_scores(truth: &[u8], pred: &[u8], k: f64) -> Prf {
    assert!((0.0..=100.0).contains(&k), "K must lie in [0, 100]");
    pw_scores(truth, &pak_adjust(truth, pred, k))
}

/// Reduced point adjustment: every truth segment is one sample (detected if
/// any unit inside it is flagged), every unit outside truth segments is its
/// own sample, so each flagged unit outside a segment is one false positive.
pub fn rpa_scores(truth: &[u8], pred: &[u8]) -> Prf {
    check(truth, pred);
    let segs = segments(truth);
    let tp = segs.iter().filter(|&&(s, e)| pred[s..=e].contains(&1)).count();
    let fp = truth.iter().zip(pred).filter(|(&t, &p)| t == 0 && p == 1).count();
    Prf::from_counts(tp, fp, segs.len() - tp)
}

/// The variant in which every maximal predicted run that touches no truth
/// segment counts a single false positive, regardless of its length. Kept
/// for comparison; flagging every unit scores a perfect F1 under it.
pub fn rpa_scores_run_fp(truth: &[u8], pred: &[u8]) -> Prf {
    check(truth, pred);
    let segs = segments(truth);
    let tp = segs.iter().filter(|&&(s, e)| pred[s..=e].contains(&1)).count();
    let fp = segments(pred)
        .into_iter()
        .filter(|&(s, e)| truth[s..=e].iter().all(|&t| t == 0))
        .count();
    Prf::from_counts(tp, fp, segs.len() - tp)
}

/// Segment-count-weighted mean of per-subset F1: `sum(e_i / E * F1_i)`.
pub fn aggregate(parts: &[(usize, f64)]) -> Result<f64> {
    let total: usize = parts.iter().map(|(e, _)| e).sum();
    if total == 0 {
        return Err(Error::EmptyAggregate);
    }
    Ok(parts.iter().map(|(e, f)| *e as f64 / total as f64 * f).sum())
}

/// I.i.d. uniform `[0, 1)` scores.
pub fn ras_baseline(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Scores of one subset under one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub metric: Metric,
    pub scores: Prf,
    /// Number of truth segments.
    pub segments: usize,
    pub threshold: f64,
}
