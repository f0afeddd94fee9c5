use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, stored dense and
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `b_i - Σ_j a_ij x_j` with a compensated dot product (Ogita, Rump and
/// Oishi's `Dot2`), accurate as if computed in twice the working precision.
fn residual2(a_row: &[f64], x: &[f64], b: f64) -> f64 {
    let (mut s, mut c) = (-b, 0.0);
    for (&u, &v) in a_row.iter().zip(x) {
        let p = u * v;
        let pe = u.mul_add(v, -p);
        let t = s + p;
        let z = t - s;
        c += pe + ((s - (t - z)) + (p - z));
        s = t;
    }
    -(s + c)
}

impl Cholesky {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        let mut l = vec![0.0; n * n];
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let row_j = &mut l[j * n..(j + 1) * n];
            let d = a[(j, j)] - dot(&row_j[..j], &row_j[..j]);
            min_pivot = min_pivot.min(d);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Factorization { pivot: d, row: j });
            }
            row_j[j] = d.sqrt();
            let djj = row_j[j];
            for i in (j + 1)..n {
                let (upper, lower_rows) = l.split_at_mut(i * n);
                let row_j = &upper[j * n..j * n + j];
                let row_i = &mut lower_rows[..n];
                row_i[j] = (a[(i, j)] - dot(&row_i[..j], row_j)) / djj;
            }
        }
        log::trace!("cholesky n={n} smallest pivot {min_pivot:e}");
        Ok(Self { n, lower: l })
    }

    /// Rebuilds from a stored lower factor; the upper triangle must be zero.
    pub fn from_lower(lower: DMatrix<f64>) -> Result<Self> {
        let n = lower.nrows();
        if n != lower.ncols() {
            return Err(Error::DimensionMismatch { expected: n, got: lower.ncols() });
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            if !(lower[(i, i)] > 0.0) || !lower[(i, i)].is_finite() {
                return Err(Error::Factorization { pivot: lower[(i, i)], row: i });
            }
            for j in 0..n {
                let v = lower[(i, j)];
                if j > i && v != 0.0 {
                    return Err(Error::Malformed("factor is not lower triangular".into()));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite("factor"));
                }
                l[i * n + j] = v;
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.lower)
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let l = &self.lower;
        let mut y: Vec<f64> = b.iter().copied().collect();
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            y[i] = (y[i] - dot(row, &y[..i])) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        DVector::from_vec(y)
    }

    /// Solves `A x = b` followed by `steps` rounds of iterative refinement
    /// with compensated residuals. `a` is `A` row-major. The result is then
    /// accurate to about machine precision as long as `cond(A) ≪ 1/ε`.
    pub fn solve_refined(&self, a: &[f64], b: &DVector<f64>, steps: usize) -> DVector<f64> {
        let n = self.n;
        let mut x = self.solve(b);
        for _ in 0..steps {
            let r = DVector::from_fn(n, |i, _| residual2(&a[i * n..(i + 1) * n], x.as_slice(), b[i]));
            x += self.solve(&r);
        }
        x
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = self.lower();
        &l * l.transpose()
    }
}
