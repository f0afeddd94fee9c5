use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

fn check_shapes(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<usize> {
    ensure_len(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Empty("no rows to score".into()));
    }
    let mut count = 0;
    for (p, t) in pred.iter().zip(truth) {
        ensure_len(t.len(), p.len())?;
        count += t.len();
    }
    if count == 0 {
        return Err(Error::Empty("no entries to score".into()));
    }
    Ok(count)
}

/// Mean squared error over all entries.
pub fn mse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let count = check_shapes(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b))).sum();
    Ok(sse / count as f64)
}

/// `100 (1 - mse / var(truth))`, the variance taken over all entries.
pub fn explained_variance(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let count = check_shapes(pred, truth)? as f64;
    let mean = truth.iter().flatten().sum::<f64>() / count;
    let var = truth.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    if var == 0.0 {
        return Err(Error::InvalidParameter("truth has zero variance".into()));
    }
    Ok(100.0 * (1.0 - mse(pred, truth)? / var))
}

/// Order statistics for box plots. Quartiles interpolate linearly between
/// order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to summarise".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}
