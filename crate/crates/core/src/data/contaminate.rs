use ndarray::s;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::WindowedDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    /// One sample displaced by `k` times the dataset-wide std of its dimension.
    PointGlobal,
    /// One sample displaced by `k` times the std of its own window.
    PointLocal,
    /// A sub-segment replaced by a shifted, rescaled copy of the window.
    PatternShapelet,
}

/// What the pollution rate multiplies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationBase {
    /// `round(pr * N)` windows.
    #[default]
    Windows,
    /// `round(pr * count of labeled anomalous windows)`.
    LabeledAnomalies,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationPlan {
    pub pollution_rate: f64,
    pub kinds: Vec<InjectionKind>,
    pub base: ContaminationBase,
    /// Spike magnitude range in units of std.
    pub spike_range: (f64, f64),
}

impl ContaminationPlan {
    pub fn new(pollution_rate: f64) -> Self {
        Self {
            pollution_rate,
            kinds: vec![
                InjectionKind::PointGlobal,
                InjectionKind::PointLocal,
                InjectionKind::PatternShapelet,
            ],
            base: ContaminationBase::Windows,
            spike_range: (3.0, 6.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pollution_rate >= 0.0 && self.pollution_rate.is_finite()) {
            return Err(Error::validation("pollution_rate", "must be non-negative"));
        }
        if self.kinds.is_empty() && self.pollution_rate > 0.0 {
            return Err(Error::validation("kinds", "no injection kind selected"));
        }
        let (lo, hi) = self.spike_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::validation("spike_range", "must be a positive interval"));
        }
        Ok(())
    }

    /// Number of windows the plan mutates on `ds`.
    pub fn count(&self, ds: &WindowedDataset) -> Result<usize> {
        self.validate()?;
        let base = match self.base {
            ContaminationBase::Windows => ds.len(),
            ContaminationBase::LabeledAnomalies => {
                if ds.labels.is_none() {
                    return Err(Error::Data("labeled-anomaly contamination needs window labels".into()));
                }
                ds.anomalous_windows()
            }
        };
        let k = (self.pollution_rate * base as f64).round() as usize;
        if k > ds.len() {
            return Err(Error::ContaminationOverflow {
                requested: k,
                available: ds.len(),
            });
        }
        Ok(k)
    }
}

/// Mutates a random selection of windows and returns the contaminated copy
/// together with the sorted indices of the mutated windows. Clean windows are
/// preferred; already-anomalous ones are only used when clean ones run out.
/// Mutated windows get label 1.
pub fn inject_contamination(
    ds: &WindowedDataset,
    plan: &ContaminationPlan,
    rng: &mut impl Rng,
) -> Result<(WindowedDataset, Vec<usize>)> {
    let k = plan.count(ds)?;
    let mut out = ds.clone();
    if k == 0 {
        return Ok((out, Vec::new()));
    }
    let labels = ds.labels.clone().unwrap_or_else(|| vec![0; ds.len()]);
    let (clean, dirty): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| labels[i] == 0);
    let mut chosen: Vec<usize> = if k <= clean.len() {
        index::sample(rng, clean.len(), k).into_iter().map(|j| clean[j]).collect()
    } else {
        let extra = index::sample(rng, dirty.len(), k - clean.len());
        clean.iter().copied().chain(extra.into_iter().map(|j| dirty[j])).collect()
    };
    chosen.sort_unstable();

    let (_, l, d) = ds.windows.dim();
    let global_std: Vec<f64> = (0..d)
        .map(|c| {
            let v = ds.windows.slice(s![.., .., c]);
            let m = v.mean().unwrap_or(0.0);
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt().max(1e-3)
        })
        .collect();

    let mut new_labels = labels;
    for &i in &chosen {
        let kind = *plan.kinds.choose(rng).expect("validated non-empty");
        let c = rng.gen_range(0..d);
        let mut w = out.windows.slice_mut(s![i, .., c]);
        let k_std = rng.gen_range(plan.spike_range.0..=plan.spike_range.1);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        match kind {
            InjectionKind::PointGlobal => {
                let t = rng.gen_range(0..l);
                w[t] += sign * k_std * global_std[c];
            }
            InjectionKind::PointLocal => {
                let t = rng.gen_range(0..l);
                let m = w.mean().unwrap_or(0.0);
                let sd = (w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / l as f64).sqrt();
                let sd = if sd > 1e-3 { sd } else { global_std[c] };
                w[t] += sign * k_std * sd;
            }
            InjectionKind::PatternShapelet => {
                let len = rng.gen_range((l / 4).max(1)..=(l / 2).max(1));
                let start = rng.gen_range(0..=l - len);
                let shift = rng.gen_range(1..l);
                let factor = sign * rng.gen_range(2.0..3.0);
                let src: Vec<f64> = (0..len).map(|j| w[(start + j + shift) % l]).collect();
                for (j, v) in src.into_iter().enumerate() {
                    w[start + j] = factor * v;
                }
            }
        }
        new_labels[i] = 1;
    }
    out.labels = Some(new_labels);
    Ok((out, chosen))
}
