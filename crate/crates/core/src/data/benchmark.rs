//! Loaders for the public benchmark archives in their documented layouts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_series_csv, GapPolicy};
use super::RawSeries;
use crate::config::{Profile, SeriesSpec};
use crate::error::{Error, Result};
use crate::tape::Matrix;

/// One sub-dataset with its official split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSubset {
    pub name: String,
    pub spec: SeriesSpec,
    pub train: RawSeries,
    pub test: RawSeries,
}

const STEP: usize = 16;

/// Number of sub-datasets in the complete archive.
pub fn expected_subsets(name: &str) -> Option<usize> {
    match name {
        "aiops" => Some(29),
        "ucr" => Some(250),
        "swat" | "wadi" => Some(1),
        _ => None,
    }
}

pub fn expected_layout(name: &str) -> &'static str {
    match name {
        "aiops" => {
            "<root>/train/<kpi>.csv and <root>/test/<kpi>.csv for each of the 29 KPIs, \
             header `timestamp,value,label`"
        }
        "ucr" => {
            "<root>/<NNN>_UCR_Anomaly_<name>_<train_end>_<anomaly_begin>_<anomaly_end>.txt, \
             one value per line (250 files)"
        }
        "swat" | "wadi" => {
            "<root>/train.csv and <root>/test.csv, header `timestamp,<sensor columns...>,label`; \
             labels 0/1 or Normal/Attack"
        }
        _ => "unsupported benchmark; use one of aiops, ucr, swat, wadi",
    }
}

fn missing(name: &str, root: &Path) -> Error {
    Error::MissingBenchmark {
        name: name.to_string(),
        root: root.to_path_buf(),
        layout: expected_layout(name).to_string(),
    }
}

/// Loads every sub-dataset of `name` under `root`. Never falls back to
/// generated data.
pub fn load_benchmark(name: &str, root: impl AsRef<Path>) -> Result<Vec<BenchmarkSubset>> {
    let root = root.as_ref();
    let name = name.to_ascii_lowercase();
    let profile: Profile = match name.as_str() {
        "aiops" | "ucr" | "swat" | "wadi" => name.parse()?,
        _ => return Err(Error::UnknownBenchmark(name)),
    };
    if !root.is_dir() {
        return Err(missing(&name, root));
    }
    let subsets = match profile {
        Profile::Aiops => load_aiops(root, profile)?,
        Profile::Ucr => load_ucr(root, profile)?,
        _ => vec![load_pair(&name, root, profile)?],
    };
    if subsets.is_empty() {
        return Err(missing(&name, root));
    }
    if let Some(n) = expected_subsets(&name) {
        if subsets.len() != n {
            log::warn!("{name}: found {} sub-datasets, the full archive has {n}", subsets.len());
        }
    }
    Ok(subsets)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn spec_for(name: &str, profile: Profile, dim: usize) -> Result<SeriesSpec> {
    SeriesSpec::new(name, dim, profile.window_length(), STEP)
}

fn load_aiops(root: &Path, profile: Profile) -> Result<Vec<BenchmarkSubset>> {
    let (train_dir, test_dir) = (root.join("train"), root.join("test"));
    if !train_dir.is_dir() || !test_dir.is_dir() {
        return Err(missing("aiops", root));
    }
    let mut out = Vec::new();
    for train_path in sorted_files(&train_dir, "csv")? {
        let stem = train_path.file_stem().unwrap().to_string_lossy().to_string();
        let test_path = test_dir.join(format!("{stem}.csv"));
        if !test_path.is_file() {
            return Err(missing("aiops", root));
        }
        let train = read_series_csv(&train_path, GapPolicy::ForwardFill)?;
        let test = read_series_csv(&test_path, GapPolicy::ForwardFill)?;
        out.push(BenchmarkSubset {
            spec: spec_for(&stem, profile, 1)?,
            name: stem,
            train,
            test,
        });
    }
    Ok(out)
}

/// `(train_end, anomaly_begin, anomaly_end)` from an archive file name. The
/// archive's indices are 1-based and the anomaly range is inclusive.
fn parse_ucr_name(stem: &str) -> Option<(usize, usize, usize)> {
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() < 4 {
        return None;
    }
    let n = parts.len();
    Some((
        parts[n - 3].parse().ok()?,
        parts[n - 2].parse().ok()?,
        parts[n - 1].parse().ok()?,
    ))
}

fn load_ucr(root: &Path, profile: Profile) -> Result<Vec<BenchmarkSubset>> {
    let mut out = Vec::new();
    for path in sorted_files(root, "txt")? {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let Some((train_end, begin, end)) = parse_ucr_name(&stem) else {
            log::warn!("skipping {}: name does not follow the archive convention", path.display());
            continue;
        };
        let text = fs::read_to_string(&path)?;
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Data(format!("{}: `{v}`: {e}", path.display())))
            })
            .collect::<Result<_>>()?;
        if train_end >= values.len() || begin == 0 || end < begin || end > values.len() {
            return Err(Error::Data(format!("{}: indices out of range", path.display())));
        }
        let labels: Vec<u8> = (1..=values.len()).map(|t| (t >= begin && t <= end) as u8).collect();
        let whole = RawSeries::new(
            Matrix::from_shape_vec((values.len(), 1), values).unwrap(),
            Some(labels),
        )?;
        out.push(BenchmarkSubset {
            spec: spec_for(&stem, profile, 1)?,
            name: stem,
            train: whole.slice(0, train_end),
            test: whole.slice(train_end, whole.len()),
        });
    }
    Ok(out)
}

fn load_pair(name: &str, root: &Path, profile: Profile) -> Result<BenchmarkSubset> {
    let (train_path, test_path) = (root.join("train.csv"), root.join("test.csv"));
    if !train_path.is_file() || !test_path.is_file() {
        return Err(missing(name, root));
    }
    let train = read_series_csv(&train_path, GapPolicy::ForwardFill)?;
    let test = read_series_csv(&test_path, GapPolicy::ForwardFill)?;
    if train.dim() != test.dim() {
        return Err(Error::Data(format!(
            "{name}: train has {} columns, test has {}",
            train.dim(),
            test.dim()
        )));
    }
    if train.dim() != profile.dim() {
        log::warn!("{name}: {} value columns, the reference release has {}", train.dim(), profile.dim());
    }
    Ok(BenchmarkSubset {
        spec: spec_for(name, profile, train.dim())?,
        name: name.to_string(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_benchmark("yahoo", dir.path()), Err(Error::UnknownBenchmark(_))));
    }

    #[test]
    fn missing_files_list_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_benchmark("aiops", dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("train/<kpi>.csv"), "{msg}");
        let err = load_benchmark("swat", dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, Error::MissingBenchmark { .. }));
    }

    #[test]
    fn ucr_archive_file() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<String> = (0..300).map(|t| format!("{}", (t as f64 * 0.1).sin())).collect();
        fs::write(dir.path().join("001_UCR_Anomaly_Demo_200_250_259.txt"), vals.join("\n")).unwrap();
        let subs = load_benchmark("ucr", dir.path()).unwrap();
        assert_eq!(subs.len(), 1);
        let s = &subs[0];
        assert_eq!(s.train.len(), 200);
        assert_eq!(s.test.len(), 100);
        assert_eq!(s.test.anomaly_points(), 10);
        assert_eq!(s.test.labels.as_ref().unwrap()[49], 1);
        assert_eq!(s.test.labels.as_ref().unwrap()[48], 0);
        assert_eq!(s.spec.window_length, 64);
    }

    #[test]
    fn aiops_layout() {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["train", "test"] {
            fs::create_dir(dir.path().join(sub)).unwrap();
            for kpi in ["a", "b"] {
                let rows: String = (0..40).map(|t| format!("{t},{},0\n", t as f64)).collect();
                fs::write(dir.path().join(sub).join(format!("{kpi}.csv")), format!("timestamp,value,label\n{rows}")).unwrap();
            }
        }
        let subs = load_benchmark("aiops", dir.path()).unwrap();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].spec.window_length, 16);
        assert_eq!(subs[1].name, "b");
    }
}
