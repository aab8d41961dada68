//! Raw series, normalization, sliding windows and augmentation.

mod benchmark;
mod contaminate;
mod io;
mod synthetic;

pub use benchmark::{expected_layout, expected_subsets, load_benchmark, BenchmarkSubset};
pub use contaminate::{inject_contamination, ContaminationBase, ContaminationPlan, InjectionKind};
pub use io::{read_index_list, read_series_csv, series_csv_bytes, write_index_list, write_series_csv, GapPolicy};
pub use synthetic::{AnomalyKind, SyntheticData, SyntheticSpec};

use ndarray::{s, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AugmentationParams, SeriesSpec};
use crate::error::{Error, Result};
use crate::tape::Matrix;

/// An ordered multivariate series with optional point labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    /// `(T, dim)`.
    pub values: Matrix,
    pub labels: Option<Vec<u8>>,
}

impl RawSeries {
    pub fn new(values: Matrix, labels: Option<Vec<u8>>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("series contains non-finite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != values.nrows() {
                return Err(Error::Data(format!(
                    "{} labels for {} timestamps",
                    l.len(),
                    values.nrows()
                )));
            }
            if l.iter().any(|&y| y > 1) {
                return Err(Error::Data("labels must be 0 or 1".into()));
            }
        }
        Ok(Self { values, labels })
    }

    pub fn univariate(values: &[f64], labels: Option<Vec<u8>>) -> Result<Self> {
        Self::new(Matrix::from_shape_vec((values.len(), 1), values.to_vec()).unwrap(), labels)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Timestamps `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.slice(s![start..end, ..]).to_owned(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }

    /// Splits off the trailing `fraction` as a second series.
    pub fn split_tail(&self, fraction: f64) -> (Self, Self) {
        let cut = self.len() - (self.len() as f64 * fraction).round() as usize;
        (self.slice(0, cut), self.slice(cut, self.len()))
    }

    pub fn anomaly_points(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().map(|&y| y as usize).sum())
    }
}

/// Per-dimension affine normalization fitted on one series and reusable on
/// others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions with zero spread; centered but not scaled.
    pub constant_dims: Vec<usize>,
}

impl Normalizer {
    pub fn fit(series: &RawSeries) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::SeriesTooShort {
                len: series.len(),
                window: 2,
            });
        }
        let mut mean = Vec::with_capacity(series.dim());
        let mut std = Vec::with_capacity(series.dim());
        let mut constant_dims = Vec::new();
        for (d, col) in series.values.columns().into_iter().enumerate() {
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            if !var.is_finite() {
                return Err(Error::Data(format!("dimension {d} has non-finite variance")));
            }
            let sd = var.sqrt();
            if sd == 0.0 {
                log::warn!("dimension {d} is constant; centering without scaling");
                constant_dims.push(d);
            }
            mean.push(m);
            std.push(if sd == 0.0 { 1.0 } else { sd });
        }
        Ok(Self {
            mean,
            std,
            constant_dims,
        })
    }

    pub fn apply(&self, series: &RawSeries) -> Result<RawSeries> {
        if series.dim() != self.mean.len() {
            return Err(Error::Data(format!(
                "normalizer fitted on {} dimensions, series has {}",
                self.mean.len(),
                series.dim()
            )));
        }
        let mut values = series.values.clone();
        for (d, mut col) in values.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[d], self.std[d]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(RawSeries {
            values,
            labels: series.labels.clone(),
        })
    }
}

/// Normalizes a series with its own statistics.
pub fn normalize(series: &RawSeries) -> Result<(RawSeries, Normalizer)> {
    let n = Normalizer::fit(series)?;
    Ok((n.apply(series)?, n))
}

/// Sliding windows over one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    /// `(N, L, dim)`.
    pub windows: Array3<f64>,
    pub labels: Option<Vec<u8>>,
    /// Starting timestamp of every window.
    pub origin: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_length(&self) -> usize {
        self.windows.dim().1
    }

    pub fn dim(&self) -> usize {
        self.windows.dim().2
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            windows: self.windows.select(Axis(0), idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            origin: idx.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    pub fn anomalous_windows(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().map(|&y| y as usize).sum())
    }

    /// SHA-256 over shape, values and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let (n, l, d) = self.windows.dim();
        for v in [n, l, d] {
            h.update((v as u64).to_le_bytes());
        }
        for v in self.windows.iter() {
            h.update(v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            h.update(labels);
        }
        for o in &self.origin {
            h.update((*o as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Number of windows `floor((T - L) / step) + 1`.
pub fn window_count(t: usize, window: usize, step: usize) -> usize {
    if t < window {
        0
    } else {
        (t - window) / step + 1
    }
}

pub fn make_windows(series: &RawSeries, spec: &SeriesSpec) -> Result<WindowedDataset> {
    spec.validate()?;
    let (l, step) = (spec.window_length, spec.time_step);
    if series.len() < l {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            window: l,
        });
    }
    if series.dim() != spec.dim {
        return Err(Error::Data(format!(
            "series has {} dimensions, spec `{}` expects {}",
            series.dim(),
            spec.name,
            spec.dim
        )));
    }
    let n = window_count(series.len(), l, step);
    let origin: Vec<usize> = (0..n).map(|i| i * step).collect();
    let mut windows = Array3::zeros((n, l, spec.dim));
    for (i, &o) in origin.iter().enumerate() {
        windows
            .slice_mut(s![i, .., ..])
            .assign(&series.values.slice(s![o..o + l, ..]));
    }
    let labels = series
        .labels
        .as_ref()
        .map(|p| origin.iter().map(|&o| p[o..o + l].iter().any(|&y| y == 1) as u8).collect());
    Ok(WindowedDataset {
        windows,
        labels,
        origin,
    })
}

/// Originals, then one jittered copy per window, then one scaled copy per
/// window.
pub fn augment(ds: &WindowedDataset, params: &AugmentationParams, rng: &mut impl Rng) -> Result<WindowedDataset> {
    params.validate()?;
    let n = ds.len();
    let (_, l, d) = ds.windows.dim();
    let mut out = Array3::zeros((3 * n, l, d));
    out.slice_mut(s![..n, .., ..]).assign(&ds.windows);
    let mut jittered = ds.windows.clone();
    if params.jitter_sigma > 0.0 {
        let noise = Normal::new(0.0, params.jitter_sigma).map_err(|e| Error::validation("jitter_sigma", e.to_string()))?;
        jittered.mapv_inplace(|v| v + noise.sample(rng));
    }
    out.slice_mut(s![n..2 * n, .., ..]).assign(&jittered);
    let (lo, hi) = params.scale_range;
    let mut scaled = ds.windows.clone();
    for mut w in scaled.outer_iter_mut() {
        let f = if hi > lo { Uniform::new(lo, hi).sample(rng) } else { lo };
        w.mapv_inplace(|v| v * f);
    }
    out.slice_mut(s![2 * n.., .., ..]).assign(&scaled);
    let labels = ds.labels.as_ref().map(|l| l.repeat(3));
    Ok(WindowedDataset {
        windows: out,
        labels,
        origin: ds.origin.repeat(3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(l: usize, step: usize) -> SeriesSpec {
        SeriesSpec::new("t", 1, l, step).unwrap()
    }

    #[test]
    fn normalize_simple() {
        let s = RawSeries::univariate(&[1.0, 2.0, 3.0], None).unwrap();
        let (n, _) = normalize(&s).unwrap();
        let col = n.values.column(0);
        let m = col.mean().unwrap();
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_constant_dimension() {
        let s = RawSeries::univariate(&[5.0, 5.0, 5.0], None).unwrap();
        let (n, norm) = normalize(&s).unwrap();
        assert_eq!(norm.constant_dims, vec![0]);
        assert!(n.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalize_per_dimension() {
        let values = Matrix::from_shape_fn((50, 2), |(t, d)| (t as f64).sin() * (d as f64 + 1.0) * 7.0 + d as f64 * 100.0);
        let (n, _) = normalize(&RawSeries::new(values, None).unwrap()).unwrap();
        for col in n.values.columns() {
            assert!(col.mean().unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn window_counts() {
        let s = RawSeries::univariate(&vec![0.0; 100], None).unwrap();
        let w = make_windows(&s, &spec(16, 16)).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(*w.origin.last().unwrap() + 16, 96);
        let s = RawSeries::univariate(&vec![0.0; 64], None).unwrap();
        assert_eq!(make_windows(&s, &spec(64, 16)).unwrap().len(), 1);
        let s = RawSeries::univariate(&vec![0.0; 10], None).unwrap();
        assert!(matches!(make_windows(&s, &spec(16, 16)), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn any_point_window_label() {
        let mut labels = vec![0u8; 100];
        labels[20] = 1;
        let s = RawSeries::univariate(&vec![0.0; 100], Some(labels)).unwrap();
        let w = make_windows(&s, &spec(16, 16)).unwrap();
        assert_eq!(w.labels.unwrap(), vec![0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn windows_copy_the_covered_values() {
        let vals: Vec<f64> = (0..40).map(|v| v as f64).collect();
        let s = RawSeries::univariate(&vals, None).unwrap();
        let w = make_windows(&s, &spec(8, 4)).unwrap();
        assert_eq!(w.len(), 9);
        for i in 0..w.len() {
            for t in 0..8 {
                assert_eq!(w.windows[[i, t, 0]], (i * 4 + t) as f64);
            }
        }
    }

    #[test]
    fn augmentation_triples() {
        let vals: Vec<f64> = (0..640).map(|v| (v as f64 * 0.3).sin()).collect();
        let s = RawSeries::univariate(&vals, Some(vec![0; 640])).unwrap();
        let w = make_windows(&s, &SeriesSpec::new("t", 1, 64, 16).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ident = AugmentationParams {
            jitter_sigma: 0.0,
            scale_range: (1.0, 1.0),
        };
        let a = augment(&w, &ident, &mut rng).unwrap();
        assert_eq!(a.len(), 3 * w.len());
        let n = w.len();
        for k in 0..3 {
            assert_eq!(a.windows.slice(s![k * n..(k + 1) * n, .., ..]), w.windows);
        }

        let a = augment(&w, &AugmentationParams::default(), &mut rng).unwrap();
        assert_eq!(a.labels.as_ref().unwrap().len(), 3 * n);
        // Residual std of one jittered window with L * dim = 64 is noisy, so
        // pool eight windows to reach 512 samples.
        let resid: Vec<f64> = (0..8)
            .flat_map(|i| {
                let a = &a;
                let w = &w;
                (0..64).map(move |t| a.windows[[n + i, t, 0]] - w.windows[[i, t, 0]])
            })
            .collect();
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let sd = (resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (resid.len() - 1) as f64).sqrt();
        assert!((sd - 0.03).abs() < 0.2 * 0.03, "jitter std {sd}");
    }

    #[test]
    fn fingerprint_is_content_hash() {
        let s = RawSeries::univariate(&(0..64).map(|v| v as f64).collect::<Vec<_>>(), None).unwrap();
        let a = make_windows(&s, &spec(16, 16)).unwrap();
        let b = make_windows(&s, &spec(16, 16)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = make_windows(&s, &spec(16, 8)).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
