//! Hold-out selection of the Gaussian bandwidth and `λ`.
//!
//! For each bandwidth the training Gram matrix is eigendecomposed once,
//! `K = U diag(s) Uᵀ`, after which every `λ` on the grid costs a diagonal
//! rescaling: `(K + nλI)^{-1} = U diag(1/(s + nλ)) Uᵀ`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSpec;
use crate::error::{ensure_len, Error, Result};
use crate::estimator::WEIGHT_FLOOR;
use crate::kernels::{cross_gram_matrix, gram, InputMatrix, KernelSpec};
use crate::par;
use crate::scores::MIN_LAMBDA;

/// `count` log-spaced values from `min` to `max`, endpoints exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LogGrid {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        let g = Self { min, max, count };
        g.validate()?;
        Ok(g)
    }

    pub fn single(value: f64) -> Self {
        Self { min: value, max: value, count: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max >= self.min && self.max.is_finite()) || self.count == 0 {
            return Err(Error::InvalidParameter(format!("invalid log grid {self:?}")));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.log10(), self.max.log10());
        let step = (hi - lo) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| match i {
                0 => self.min,
                i if i == self.count - 1 => self.max,
                i => 10f64.powf(lo + step * i as f64),
            })
            .collect()
    }
}

/// What the validation error is measured on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScore {
    /// The ridge prediction `b(x)`, no projection.
    #[default]
    Unconstrained,
    /// The constrained prediction `Π_C(b(x)/a(x))`.
    Constrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub bandwidths: LogGrid,
    pub lambdas: LogGrid,
    /// Share of the training set held out for validation.
    pub fraction: f64,
    #[serde(default)]
    pub score: CvScore,
}

impl Default for CvConfig {
    /// 30 bandwidths in `[0.01, 100]` and 30 `λ` in `[1e-9, 1]`, both
    /// log-spaced, 30% held out.
    fn default() -> Self {
        Self {
            bandwidths: LogGrid { min: 0.01, max: 100.0, count: 30 },
            lambdas: LogGrid { min: 1e-9, max: 1.0, count: 30 },
            fraction: 0.3,
            score: CvScore::Unconstrained,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        self.bandwidths.validate()?;
        self.lambdas.validate()?;
        if self.lambdas.min < MIN_LAMBDA {
            return Err(Error::InvalidParameter(format!("lambda grid must start at or above {MIN_LAMBDA:e}")));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::InvalidParameter(format!("hold-out fraction must be in (0, 1), got {}", self.fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub bandwidth: f64,
    pub lambda: f64,
    pub validation_mse: f64,
}

/// Picks the grid point with the lowest validation MSE; ties go to the
/// first point in bandwidth-major order. `constraint` is required for
/// [`CvScore::Constrained`].
pub fn holdout_cv(
    inputs: &InputMatrix,
    outputs: &[Vec<f64>],
    cfg: &CvConfig,
    constraint: Option<&ConstraintSpec>,
    seed: u64,
) -> Result<CvSelection> {
    cfg.validate()?;
    let n = inputs.rows();
    ensure_len(n, outputs.len())?;
    let tasks = outputs.first().map(Vec::len).unwrap_or(0);
    if n < 4 {
        return Err(Error::InvalidParameter(format!("hold-out needs at least 4 samples, got {n}")));
    }
    let n_val = (cfg.fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidParameter(format!("degenerate split: {n_val} of {n} held out")));
    }
    if cfg.score == CvScore::Constrained && constraint.is_none() {
        return Err(Error::InvalidParameter("constrained scoring needs a constraint".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, tr_idx) = perm.split_at(n_val);
    let x_tr = inputs.select(tr_idx)?;
    let x_val = inputs.select(val_idx)?;
    let n_tr = tr_idx.len();
    // targets with a trailing column of ones: its prediction is a(x)
    let mut rhs = DMatrix::zeros(n_tr, tasks + 1);
    for (r, &i) in tr_idx.iter().enumerate() {
        ensure_len(tasks, outputs[i].len())?;
        for t in 0..tasks {
            rhs[(r, t)] = outputs[i][t];
        }
        rhs[(r, tasks)] = 1.0;
    }
    let y_val: Vec<&Vec<f64>> = val_idx.iter().map(|&i| &outputs[i]).collect();
    let bandwidths = cfg.bandwidths.values();
    let lambdas = cfg.lambdas.values();

    let per_bandwidth = par::try_map_range(bandwidths.len(), |bi| -> Result<Vec<f64>> {
        let kernel = KernelSpec::gaussian(bandwidths[bi])?;
        let eig = SymmetricEigen::new(gram(&kernel, &x_tr)?);
        let left = cross_gram_matrix(&kernel, &x_val, &x_tr) * &eig.eigenvectors;
        let right = eig.eigenvectors.transpose() * &rhs;
        lambdas
            .iter()
            .map(|&lambda| {
                let shift = n_tr as f64 * lambda;
                let mut scaled = right.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row /= eig.eigenvalues[i] + shift;
                }
                let pred = &left * scaled;
                let mut sse = 0.0;
                for (r, y) in y_val.iter().enumerate() {
                    let b: Vec<f64> = (0..tasks).map(|t| pred[(r, t)]).collect();
                    let p = match (cfg.score, constraint) {
                        (CvScore::Constrained, Some(c)) => {
                            let a = pred[(r, tasks)];
                            if a.abs() < WEIGHT_FLOOR {
                                b
                            } else {
                                c.project(&b.iter().map(|v| v / a).collect::<Vec<_>>())?
                            }
                        }
                        _ => b,
                    };
                    sse += p.iter().zip(y.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                }
                Ok(sse / (n_val * tasks) as f64)
            })
            .collect()
    })?;

    let mut best: Option<CvSelection> = None;
    for (bi, scores) in per_bandwidth.iter().enumerate() {
        for (li, &score) in scores.iter().enumerate() {
            if !score.is_finite() {
                continue;
            }
            if best.is_none_or(|b| score < b.validation_mse) {
                best = Some(CvSelection { bandwidth: bandwidths[bi], lambda: lambdas[li], validation_mse: score });
            }
        }
    }
    best.ok_or_else(|| Error::Malformed("no grid point produced a finite validation error".into()))
}
