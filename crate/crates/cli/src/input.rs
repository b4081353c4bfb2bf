// SPDX-License-Identifier: MIT OR Apache-2.0

//! Series and raster readers.

use std::path::Path;

use klcp_core::spike::SpikeTrial;

use crate::CliError;

/// Observations grouped into batches, with the source line of each value.
#[derive(Debug, Clone, PartialEq)]
pub struct Batched {
    pub columns: Vec<String>,
    pub batches: Vec<Vec<Vec<f64>>>,
    pub lines: Vec<Vec<u64>>,
}

impl Batched {
    /// Batches of the first value column.
    pub fn scalar(&self) -> Vec<Vec<f64>> {
        self.batches.iter().map(|b| b.iter().map(|row| row[0]).collect()).collect()
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.position() {
        Some(p) => CliError::Input(format!("{}:{}: {e}", path.display(), p.line())),
        None => CliError::Input(format!("{}: {e}", path.display())),
    }
}

/// Reads a headed CSV series.
///
/// `value_columns` names the value columns; `None` takes every column
/// other than the batch column. Consecutive rows sharing a batch id form
/// one batch; without a batch column, rows are grouped `batch_size` at a
/// time (the last batch may be shorter).
pub fn read_series(
    path: &Path,
    value_columns: Option<&[String]>,
    batch_column: Option<&str>,
    batch_size: usize,
) -> Result<Batched, CliError> {
    if batch_size == 0 {
        return Err(CliError::Input("batch size must be at least 1".into()));
    }
    let mut reader = open(path)?;
    let headers: Vec<String> = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("{}: no column named {name:?} (have {headers:?})", path.display())))
    };
    let batch_idx = batch_column.map(find).transpose()?;
    let value_idx: Vec<usize> = match value_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_, _>>()?,
        None => (0..headers.len()).filter(|i| Some(*i) != batch_idx).collect(),
    };
    if value_idx.is_empty() {
        return Err(CliError::Input(format!("{}: no value columns", path.display())));
    }
    let mut out = Batched { columns: value_idx.iter().map(|&i| headers[i].clone()).collect(), batches: vec![], lines: vec![] };
    let mut current_id: Option<String> = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(value_idx.len());
        for &c in &value_idx {
            let field = record.get(c).unwrap_or("");
            if field.is_empty() {
                return Err(CliError::Input(format!("{}:{line}:{}: missing value in column {:?}", path.display(), c + 1, headers[c])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Input(format!("{}:{line}:{}: {field:?} is not a number", path.display(), c + 1)))?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("{}:{line}:{}: nonfinite value {field:?}", path.display(), c + 1)));
            }
            row.push(v);
        }
        let new_batch = match batch_idx {
            Some(b) => {
                let id = record.get(b).unwrap_or("").to_string();
                if id.is_empty() {
                    return Err(CliError::Input(format!("{}:{line}:{}: missing batch id", path.display(), b + 1)));
                }
                let fresh = current_id.as_deref() != Some(id.as_str());
                current_id = Some(id);
                fresh
            }
            None => out.batches.last().is_none_or(|b| b.len() >= batch_size),
        };
        if new_batch {
            out.batches.push(vec![]);
            out.lines.push(vec![]);
        }
        out.batches.last_mut().expect("batch opened").push(row);
        out.lines.last_mut().expect("batch opened").push(line);
    }
    if out.batches.is_empty() {
        return Err(CliError::Input(format!("{}: no observations", path.display())));
    }
    Ok(out)
}

/// Reads one trial: a headerless CSV with one row per neuron, or, for
/// files ending in `.rle`, one line per neuron of `value:count` runs
/// (for example `0:12 1:1 0:40`). Blank lines and `#` comments are skipped.
pub fn read_raster(path: &Path, trial_id: usize) -> Result<SpikeTrial, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let rle = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("rle"));
    let mut rows: Vec<Vec<u8>> = vec![];
    let mut row_lines = vec![];
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cell = |col: usize, tok: &str| -> Result<u8, CliError> {
            match tok {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(CliError::Input(format!("{}:{line_no}:{col}: raster entry {other:?} is not 0 or 1", path.display()))),
            }
        };
        let mut row = vec![];
        if rle {
            for (j, run) in line.split_whitespace().enumerate() {
                let (v, n) = run
                    .split_once(':')
                    .ok_or_else(|| CliError::Input(format!("{}:{line_no}:{}: expected value:count, got {run:?}", path.display(), j + 1)))?;
                let v = cell(j + 1, v.trim())?;
                let n: usize = n
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Input(format!("{}:{line_no}:{}: bad run length {n:?}", path.display(), j + 1)))?;
                row.extend(std::iter::repeat_n(v, n));
            }
        } else {
            for (j, tok) in line.split(',').enumerate() {
                row.push(cell(j + 1, tok.trim())?);
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::Input(format!(
                    "{}:{line_no}: neuron has {} bins, line {} has {}",
                    path.display(),
                    row.len(),
                    row_lines[0],
                    first.len()
                )));
            }
        }
        rows.push(row);
        row_lines.push(line_no);
    }
    SpikeTrial::new(rows, trial_id).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
