//! Columnar text for series (`timestamp,value...,label`) and index lists.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};
use crate::tape::Matrix;

/// How empty cells are handled on ingestion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    #[default]
    Reject,
    ForwardFill,
}

pub fn write_series_csv(path: impl AsRef<Path>, series: &RawSeries) -> Result<()> {
    fs::write(path, series_csv_bytes(series)?)?;
    Ok(())
}

/// The exact bytes [`write_series_csv`] writes.
pub fn series_csv_bytes(series: &RawSeries) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["timestamp".to_string()];
    if series.dim() == 1 {
        header.push("value".into());
    } else {
        header.extend((0..series.dim()).map(|d| format!("value_{d}")));
    }
    if series.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (t, row) in series.values.rows().into_iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        if let Some(l) = &series.labels {
            rec.push(l[t].to_string());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reads a series written by [`write_series_csv`] or any file with the same
/// header convention: an optional leading `timestamp` column, value columns,
/// and an optional trailing `label` column.
pub fn read_series_csv(path: impl AsRef<Path>, gaps: GapPolicy) -> Result<RawSeries> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let names: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let has_ts = names.first().is_some_and(|h| h == "timestamp");
    let has_label = names.last().is_some_and(|h| h == "label");
    let first = has_ts as usize;
    let last = names.len() - has_label as usize;
    if last <= first {
        return Err(Error::Data(format!("{}: no value columns", path.display())));
    }
    let dim = last - first;
    let mut values: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        for c in first..last {
            let cell = rec.get(c).unwrap_or("").trim();
            let v = if cell.is_empty() {
                match gaps {
                    GapPolicy::Reject => {
                        return Err(Error::Data(format!(
                            "{}: missing value at row {row}, column {c}",
                            path.display()
                        )))
                    }
                    GapPolicy::ForwardFill => *values.get(values.len().wrapping_sub(dim)).ok_or_else(|| {
                        Error::Data(format!("{}: leading gap cannot be forward-filled", path.display()))
                    })?,
                }
            } else {
                cell.parse::<f64>()
                    .map_err(|e| Error::Data(format!("{}: row {row}, column {c}: {e}", path.display())))?
            };
            values.push(v);
        }
        if has_label {
            labels.push(parse_label(rec.get(last).unwrap_or(""))?);
        }
    }
    let t = values.len() / dim;
    let values = Matrix::from_shape_vec((t, dim), values).expect("rectangular");
    RawSeries::new(values, has_label.then_some(labels))
}

pub(crate) fn parse_label(cell: &str) -> Result<u8> {
    let c = cell.trim();
    match c.to_ascii_lowercase().replace(' ', "").as_str() {
        "0" | "normal" | "false" | "0.0" => Ok(0),
        "1" | "attack" | "anomaly" | "true" | "1.0" => Ok(1),
        _ => Err(Error::Data(format!("unrecognised label `{c}`"))),
    }
}

/// One index per line.
pub fn write_index_list(path: impl AsRef<Path>, idx: &[usize]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for i in idx {
        writeln!(f, "{i}")?;
    }
    Ok(())
}

pub fn read_index_list(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|e| Error::Data(format!("bad index `{l}`: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let values = Matrix::from_shape_fn((5, 2), |(t, d)| t as f64 * 0.1 + d as f64);
        let s = RawSeries::new(values, Some(vec![0, 1, 0, 0, 1])).unwrap();
        write_series_csv(&p, &s).unwrap();
        assert_eq!(read_series_csv(&p, GapPolicy::Reject).unwrap(), s);
    }

    #[test]
    fn gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        fs::write(&p, "timestamp,value,label\n0,1.5,0\n1,,0\n2,3,1\n").unwrap();
        assert!(read_series_csv(&p, GapPolicy::Reject).is_err());
        let s = read_series_csv(&p, GapPolicy::ForwardFill).unwrap();
        assert_eq!(s.values.column(0).to_vec(), vec![1.5, 1.5, 3.0]);
        assert_eq!(s.labels.unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn index_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.txt");
        write_index_list(&p, &[3, 7, 19]).unwrap();
        assert_eq!(read_index_list(&p).unwrap(), vec![3, 7, 19]);
    }
}
