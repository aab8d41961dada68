//! Sums of sinusoids with injected point and pattern anomalies.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::config::SeriesSpec;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::tape::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// One sample displaced by `k` std.
    Point,
    /// A run of whole windows with rescaled amplitude, changed frequency or
    /// shifted level.
    Pattern,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub dim: usize,
    pub window_length: usize,
    pub time_step: usize,
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
    /// Sinusoid periods in samples and their amplitudes.
    pub periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub noise_std: f64,
    /// Fraction of window-sized blocks that carry an anomaly in the
    /// validation and test streams.
    pub anomaly_ratio: f64,
    pub kinds: Vec<AnomalyKind>,
    /// Length of pattern anomalies, in windows.
    pub pattern_windows: (usize, usize),
    pub spike_range: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            dim: 1,
            window_length: 16,
            time_step: 16,
            train_len: 16 * 600,
            val_len: 16 * 1000,
            test_len: 16 * 1000,
            periods: vec![24.7, 12.35],
            amplitudes: vec![1.0, 0.4],
            noise_std: 0.05,
            anomaly_ratio: 0.02,
            kinds: vec![AnomalyKind::Point, AnomalyKind::Pattern],
            pattern_windows: (1, 2),
            spike_range: (3.0, 6.0),
        }
    }
}

/// Clean training stream and labeled validation and test streams drawn from
/// one process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub spec: SeriesSpec,
    pub train: RawSeries,
    pub validation: RawSeries,
    pub test: RawSeries,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() || self.periods.len() != self.amplitudes.len() {
            return Err(Error::validation("periods", "need one amplitude per period"));
        }
        if self.periods.iter().any(|p| *p <= 0.0) {
            return Err(Error::validation("periods", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.anomaly_ratio) {
            return Err(Error::validation("anomaly_ratio", "must lie in [0, 1)"));
        }
        if self.anomaly_ratio > 0.0 && self.kinds.is_empty() {
            return Err(Error::validation("kinds", "no anomaly kind selected"));
        }
        if self.pattern_windows.0 == 0 || self.pattern_windows.1 < self.pattern_windows.0 {
            return Err(Error::validation("pattern_windows", "must be a non-empty range"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::validation("noise_std", "must be non-negative"));
        }
        self.series_spec().validate()?;
        for (name, len) in [("train_len", self.train_len), ("val_len", self.val_len), ("test_len", self.test_len)] {
            if len < self.window_length {
                return Err(Error::validation(name, "shorter than one window"));
            }
        }
        Ok(())
    }

    pub fn series_spec(&self) -> SeriesSpec {
        SeriesSpec {
            name: self.name.clone(),
            dim: self.dim,
            window_length: self.window_length,
            time_step: self.time_step,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticData> {
        self.validate()?;
        let mut rng = substream(seed, Stream::Data, 0);
        let phases: Vec<Vec<f64>> = (0..self.dim)
            .map(|_| self.periods.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect())
            .collect();
        let stretch: Vec<f64> = (0..self.dim).map(|d| 1.0 + 0.15 * d as f64).collect();
        let clean = |start: usize, len: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Matrix {
            let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).unwrap();
            Matrix::from_shape_fn((len, self.dim), |(t, d)| {
                let tt = (start + t) as f64;
                let s: f64 = self
                    .periods
                    .iter()
                    .zip(&self.amplitudes)
                    .zip(&phases[d])
                    .map(|((p, a), ph)| a * (2.0 * PI * tt / (p * stretch[d]) + ph).sin())
                    .sum();
                s + if self.noise_std > 0.0 { noise.sample(rng) } else { 0.0 }
            })
        };
        let sig_std: Vec<f64> = (0..self.dim)
            .map(|_| (self.amplitudes.iter().map(|a| a * a / 2.0).sum::<f64>() + self.noise_std.powi(2)).sqrt())
            .collect();

        let train = clean(0, self.train_len, &mut substream(seed, Stream::Data, 1));
        let val_start = self.train_len;
        let mut val = clean(val_start, self.val_len, &mut substream(seed, Stream::Data, 2));
        let test_start = val_start + self.val_len;
        let mut test = clean(test_start, self.test_len, &mut substream(seed, Stream::Data, 3));
        let val_labels = self.inject(&mut val, &sig_std, &mut substream(seed, Stream::Data, 4));
        let test_labels = self.inject(&mut test, &sig_std, &mut substream(seed, Stream::Data, 5));
        Ok(SyntheticData {
            spec: self.series_spec(),
            train: RawSeries::new(train, Some(vec![0; self.train_len]))?,
            validation: RawSeries::new(val, Some(val_labels))?,
            test: RawSeries::new(test, Some(test_labels))?,
        })
    }

    /// Places anomalies on whole window-sized blocks, keeping at least one
    /// clean block between events.
    fn inject(&self, x: &mut Matrix, sig_std: &[f64], rng: &mut impl Rng) -> Vec<u8> {
        let l = self.window_length;
        let t = x.nrows();
        let mut labels = vec![0u8; t];
        let blocks = t / l;
        let target = (self.anomaly_ratio * blocks as f64).round() as usize;
        let mut used = vec![false; blocks];
        let mut placed = 0;
        let mut tries = 0;
        while placed < target && tries < 100 * blocks.max(1) {
            tries += 1;
            let kind = *self.kinds.choose(rng).expect("validated");
            let m = match kind {
                AnomalyKind::Point => 1,
                AnomalyKind::Pattern => rng.gen_range(self.pattern_windows.0..=self.pattern_windows.1),
            }
            .min(target - placed);
            if m + 2 > blocks {
                continue;
            }
            let b = rng.gen_range(1..blocks - m);
            if used[b - 1..=b + m].iter().any(|u| *u) {
                continue;
            }
            used[b..b + m].iter_mut().for_each(|u| *u = true);
            placed += m;
            let d = rng.gen_range(0..self.dim);
            let (lo, hi) = (b * l, (b + m) * l);
            match kind {
                AnomalyKind::Point => {
                    let p = rng.gen_range(lo..hi);
                    let k = rng.gen_range(self.spike_range.0..=self.spike_range.1);
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    x[[p, d]] += sign * k * sig_std[d];
                    labels[p] = 1;
                }
                AnomalyKind::Pattern => {
                    let style = rng.gen_range(0..3);
                    let factor = rng.gen_range(2.0..3.0);
                    let offset = if rng.gen_bool(0.5) { 2.0 } else { -2.0 } * sig_std[d];
                    let period = self.periods[0] / 3.0;
                    let phase = rng.gen_range(0.0..2.0 * PI);
                    for p in lo..hi {
                        let v = &mut x[[p, d]];
                        match style {
                            0 => *v = self.amplitudes[0] * factor * (2.0 * PI * p as f64 / self.periods[0] + phase).sin().signum(),
                            1 => *v = self.amplitudes[0] * factor * (2.0 * PI * p as f64 / period + phase).sin(),
                            _ => *v += 1.5 * offset,
                        }
                        labels[p] = 1;
                    }
                }
            }
        }
        if placed < target {
            log::warn!("placed {placed} of {target} anomalous windows");
        }
        labels
    }
}
