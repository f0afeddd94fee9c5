//! CSV readers and writers for datasets, queries, point clouds, predictions
//! and ranking observations.
//!
//! Dataset CSV: a header with input columns `x0..x{d-1}` followed by output
//! columns `y0..y{T-1}`. An empty output cell means the task was not
//! observed at that input.

use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::MultitaskData;
use crate::kernels::InputMatrix;
use crate::ranking::PairIndex;
use crate::scores::TaskData;

/// Rows of a CSV with optional missing cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn parse_cell(s: &str) -> std::result::Result<Option<f64>, ()> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| ())
}

/// Reads a CSV; the first record is a header when any of its cells fails to
/// parse as a number.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_path(path)?;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<_>, _> = rec.iter().map(parse_cell).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(()) if i == 0 => header = Some(rec.iter().map(|s| s.trim().to_string()).collect()),
            Err(()) => return Err(Error::Malformed(format!("{}: non-numeric cell on line {}", path.display(), i + 1))),
        }
    }
    Ok(Table { header, rows })
}

fn dense(rows: &[Vec<Option<f64>>], cols: &[usize], what: &str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            cols.iter()
                .map(|&c| r[c].ok_or_else(|| Error::Malformed(format!("missing {what} on row {}", i + 1))))
                .collect()
        })
        .collect()
}

fn prefixed(header: &[String], prefix: char) -> Vec<usize> {
    header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect()
}

/// A point cloud: one point per row, no missing cells.
pub fn read_point_cloud(path: &Path) -> Result<InputMatrix> {
    let t = read_table(path)?;
    let width = t.rows.first().map(Vec::len).unwrap_or(0);
    let cols: Vec<usize> = (0..width).collect();
    InputMatrix::from_rows(&dense(&t.rows, &cols, "coordinate")?)
}

pub fn write_point_cloud(path: &Path, points: &InputMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in points.iter_rows() {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Inputs and per-task outputs with possibly missing entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: InputMatrix,
    pub outputs: Vec<Vec<Option<f64>>>,
}

impl Dataset {
    pub fn tasks(&self) -> usize {
        self.outputs.first().map(Vec::len).unwrap_or(0)
    }

    /// Whether every output is observed.
    pub fn is_complete(&self) -> bool {
        self.outputs.iter().all(|r| r.iter().all(Option::is_some))
    }

    pub fn to_multitask(&self) -> Result<MultitaskData> {
        let tasks = (0..self.tasks())
            .map(|t| {
                let idx: Vec<usize> = (0..self.outputs.len()).filter(|&i| self.outputs[i][t].is_some()).collect();
                if idx.is_empty() {
                    return Err(Error::Empty(format!("task {t} has no observations")));
                }
                let y = idx.iter().map(|&i| self.outputs[i][t].unwrap()).collect();
                TaskData::new(self.inputs.select(&idx)?, y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultitaskData::new(tasks))
    }

    pub fn dense_outputs(&self) -> Result<Vec<Vec<f64>>> {
        let cols: Vec<usize> = (0..self.tasks()).collect();
        dense(&self.outputs, &cols, "output")
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let t = read_table(path)?;
    let header =
        t.header.ok_or_else(|| Error::Malformed(format!("{}: dataset needs an x*/y* header", path.display())))?;
    let xs = prefixed(&header, 'x');
    let ys = prefixed(&header, 'y');
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Malformed("dataset header needs x* and y* columns".into()));
    }
    let inputs = InputMatrix::from_rows(&dense(&t.rows, &xs, "input")?)?;
    let outputs = t.rows.iter().map(|r| ys.iter().map(|&c| r[c]).collect()).collect();
    Ok(Dataset { inputs, outputs })
}

pub fn write_dataset(path: &Path, inputs: &InputMatrix, outputs: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let t = outputs.first().map(Vec::len).unwrap_or(0);
    let header: Vec<String> =
        (0..inputs.dim()).map(|j| format!("x{j}")).chain((0..t).map(|j| format!("y{j}"))).collect();
    w.write_record(&header)?;
    for (x, y) in inputs.iter_rows().zip(outputs) {
        w.write_record(x.iter().chain(y).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Query points: the `x*` columns when a header names them, otherwise every
/// column.
pub fn read_queries(path: &Path) -> Result<InputMatrix> {
    let t = read_table(path)?;
    let cols = match &t.header {
        Some(h) if !prefixed(h, 'x').is_empty() => prefixed(h, 'x'),
        _ => (0..t.rows.first().map(Vec::len).unwrap_or(0)).collect(),
    };
    InputMatrix::from_rows(&dense(&t.rows, &cols, "query coordinate")?)
}

/// The `y*` columns of a CSV with header, e.g. predictions or truth.
pub fn read_outputs(path: &Path) -> Result<Vec<Vec<f64>>> {
    let t = read_table(path)?;
    let header = t.header.ok_or_else(|| Error::Malformed(format!("{}: missing header", path.display())))?;
    let ys = prefixed(&header, 'y');
    if ys.is_empty() {
        return Err(Error::Malformed(format!("{}: no y* columns", path.display())));
    }
    dense(&t.rows, &ys, "output")
}

/// Predictions as `y0..y{T-1}` plus a `gamma_residual` column.
pub fn write_predictions(path: &Path, preds: &[Vec<f64>], residuals: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let t = preds.first().map(Vec::len).unwrap_or(0);
    let header: Vec<String> = (0..t).map(|j| format!("y{j}")).chain(["gamma_residual".to_string()]).collect();
    w.write_record(&header)?;
    for (p, r) in preds.iter().zip(residuals) {
        w.write_record(p.iter().chain(std::iter::once(r)).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Ranking observations: columns `query_features..., p, q, label` with
/// one-based document ids. Rows with `p > q` are flipped to `(q, p)` with a
/// negated label.
pub fn read_ranking(path: &Path, docs: usize) -> Result<(PairIndex, Vec<Option<TaskData>>)> {
    let t = read_table(path)?;
    let width = t.rows.first().map(Vec::len).unwrap_or(0);
    if width < 4 {
        return Err(Error::Malformed("ranking CSV needs at least one feature plus p, q, label".into()));
    }
    let index = PairIndex::new(docs)?;
    let d = width - 3;
    let mut per_pair: Vec<(Vec<Vec<f64>>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); index.len()];
    let cols: Vec<usize> = (0..width).collect();
    for (i, r) in dense(&t.rows, &cols, "ranking cell")?.into_iter().enumerate() {
        let (p, q, mut label) = (r[d], r[d + 1], r[d + 2]);
        if p.fract() != 0.0 || q.fract() != 0.0 || p < 1.0 || q < 1.0 {
            return Err(Error::Malformed(format!("row {}: document ids must be positive integers", i + 1)));
        }
        let (mut p, mut q) = (p as usize - 1, q as usize - 1);
        if p > q {
            std::mem::swap(&mut p, &mut q);
            label = -label;
        }
        let t = index.index(p, q)?;
        per_pair[t].0.push(r[..d].to_vec());
        per_pair[t].1.push(label);
    }
    let data = per_pair
        .into_iter()
        .map(|(x, y)| if y.is_empty() { Ok(None) } else { TaskData::new(InputMatrix::from_rows(&x)?, y).map(Some) })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, data))
}
