//! Per-farm CSV files: header `i,t1,...,tT`, then one row per observation.
//! Rows and columns in error messages are 1-based file coordinates (the
//! header is row 1, the `i` column is column 1).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::{FullDataset, VerticalSlice};
use crate::error::{Error, Result};

pub fn slice_file_name(farm: usize) -> String {
    format!("wf_{farm}.csv")
}

fn csv_error(path: &Path, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message: message.into(),
    }
}

pub fn write_slice_csv(path: impl AsRef<Path>, slice: &VerticalSlice) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, 0, e.to_string()))?;
    let mut header = vec!["i".to_string()];
    header.extend((1..=slice.num_periods()).map(|t| format!("t{t}")));
    w.write_record(&header)
        .map_err(|e| csv_error(path, 1, 0, e.to_string()))?;
    for i in 0..slice.num_obs() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend((0..slice.num_periods()).map(|t| slice.get(i, t).to_string()));
        w.write_record(&rec)
            .map_err(|e| csv_error(path, i + 2, 0, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Strict reader: a missing or malformed header, ragged rows, non-numeric
/// cells, and values outside `[0, capacity]` are all errors.
pub fn load_slice_csv(path: impl AsRef<Path>, farm: usize, capacity: f64) -> Result<VerticalSlice> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => csv_error(path, 0, 0, format!("{other:?}")),
        })?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| csv_error(path, 1, 1, "missing header"))?
        .map_err(|e| csv_error(path, 1, 1, e.to_string()))?;
    let periods = header.len().saturating_sub(1);
    let header_ok = periods >= 1
        && header.get(0).map(str::trim) == Some("i")
        && (1..=periods).all(|t| header.get(t).map(str::trim) == Some(format!("t{t}").as_str()));
    if !header_ok {
        return Err(csv_error(path, 1, 1, "header must be `i,t1,...,tT`"));
    }

    let mut values = Vec::new();
    let mut rows = 0;
    for (k, rec) in records.enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| csv_error(path, row, 1, e.to_string()))?;
        if rec.len() != periods + 1 {
            return Err(csv_error(
                path,
                row,
                rec.len().min(periods + 1),
                format!("expected {} fields, found {}", periods + 1, rec.len()),
            ));
        }
        let index: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| csv_error(path, row, 1, format!("bad observation index `{}`", &rec[0])))?;
        if index != k + 1 {
            return Err(csv_error(path, row, 1, format!("expected observation {}, found {index}", k + 1)));
        }
        for c in 1..=periods {
            let cell = rec[c].trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_error(path, row, c + 1, format!("non-numeric value `{cell}`")))?;
            if !v.is_finite() || v < 0.0 || v > capacity {
                return Err(csv_error(
                    path,
                    row,
                    c + 1,
                    format!("value {v} outside [0, {capacity}]"),
                ));
            }
            values.push(v);
        }
        rows += 1;
    }
    VerticalSlice::new(farm, capacity, DMatrix::from_row_slice(rows, periods, &values))
}

pub fn write_dataset(dir: impl AsRef<Path>, dataset: &FullDataset) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    dataset
        .slices()
        .iter()
        .map(|s| {
            let path = dir.join(slice_file_name(s.farm()));
            write_slice_csv(&path, s).map(|_| path)
        })
        .collect()
}

pub fn load_dataset(dir: impl AsRef<Path>, capacities: &[f64]) -> Result<FullDataset> {
    let dir = dir.as_ref();
    let slices = capacities
        .iter()
        .enumerate()
        .map(|(k, cap)| load_slice_csv(dir.join(slice_file_name(k + 1)), k + 1, *cap))
        .collect::<Result<Vec<_>>>()?;
    FullDataset::new(slices)
}
