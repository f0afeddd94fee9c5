//! Kernels on the input space and Gram matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::par;

/// A positive-definite kernel on `R^d`.
///
/// The Gaussian kernel is `exp(-|x - x'|^2 / bandwidth^2)`, without the usual
/// factor 1/2 in the exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Gaussian { bandwidth: f64 },
    Linear,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::InvalidParameter(format!("gaussian bandwidth must be positive, got {bandwidth}")))
            }
            _ => Ok(()),
        }
    }

    /// Evaluates without shape or finiteness checks.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (bandwidth * bandwidth)).exp()
            }
            KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// `k(x, x')` with shape and finiteness checks.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    ensure_len(x.len(), y.len())?;
    ensure_finite(x, "kernel argument")?;
    ensure_finite(y, "kernel argument")?;
    Ok(spec.eval_unchecked(x, y))
}

/// A dense `n × d` matrix of input points, one per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct InputMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl InputMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::Empty("input matrix has no rows".into()));
        }
        if dim == 0 {
            return Err(Error::Empty("input matrix has zero dimension".into()));
        }
        ensure_len(rows * dim, values.len())?;
        ensure_finite(&values, "input matrix")?;
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            ensure_len(dim, r.len())?;
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    /// A one-column matrix from scalar inputs.
    pub fn from_column(xs: &[f64]) -> Result<Self> {
        Self::new(xs.len(), 1, xs.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.dim, values)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for InputMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<InputMatrix> for Vec<Vec<f64>> {
    fn from(m: InputMatrix) -> Self {
        m.to_rows()
    }
}

/// The `n × n` kernel matrix. Each unordered pair is evaluated once and
/// mirrored, so the result is bitwise symmetric.
pub fn gram(spec: &KernelSpec, x: &InputMatrix) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = x.rows();
    let upper = par::map_range(n, |i| {
        let xi = x.row(i);
        (i..n).map(|j| spec.eval_unchecked(xi, x.row(j))).collect::<Vec<_>>()
    });
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// The vector `(k(x, X_i))_i`.
pub fn cross_gram(spec: &KernelSpec, x_train: &InputMatrix, x: &[f64]) -> Result<DVector<f64>> {
    spec.validate()?;
    ensure_len(x_train.dim(), x.len())?;
    ensure_finite(x, "query point")?;
    Ok(DVector::from_iterator(x_train.rows(), x_train.iter_rows().map(|xi| spec.eval_unchecked(x, xi))))
}

/// The `m × n` matrix `(k(Q_i, X_j))`.
pub(crate) fn cross_gram_matrix(spec: &KernelSpec, queries: &InputMatrix, x_train: &InputMatrix) -> DMatrix<f64> {
    let rows = par::map_range(queries.rows(), |i| {
        let q = queries.row(i);
        x_train.iter_rows().map(|xj| spec.eval_unchecked(q, xj)).collect::<Vec<_>>()
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    DMatrix::from_row_slice(queries.rows(), x_train.rows(), &flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gaussian_examples() {
        let k = KernelSpec::gaussian(2.0).unwrap();
        assert_eq!(kernel_eval(&k, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        // squared distance equal to bandwidth^2
        let v = kernel_eval(&k, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn linear_example() {
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn eval_errors() {
        let k = KernelSpec::Linear;
        assert!(matches!(kernel_eval(&k, &[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(kernel_eval(&k, &[f64::NAN], &[1.0]), Err(Error::NonFinite(_))));
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
    }

    #[test]
    fn gram_small_cases() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let one = InputMatrix::from_rows(&[vec![0.4, 2.0]]).unwrap();
        assert_eq!(gram(&k, &one).unwrap(), DMatrix::from_element(1, 1, 1.0));
        let dup = InputMatrix::from_rows(&[vec![0.4], vec![0.4]]).unwrap();
        assert_eq!(gram(&k, &dup).unwrap(), DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn input_matrix_rejects_bad_shapes() {
        assert!(InputMatrix::new(0, 1, vec![]).is_err());
        assert!(InputMatrix::new(2, 1, vec![1.0]).is_err());
        assert!(InputMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(InputMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn json_format() {
        let g: KernelSpec = serde_json::from_str(r#"{"kind":"gaussian","bandwidth":0.5}"#).unwrap();
        assert_eq!(g, KernelSpec::Gaussian { bandwidth: 0.5 });
        let l: KernelSpec = serde_json::from_str(r#"{"kind":"linear"}"#).unwrap();
        assert_eq!(l, KernelSpec::Linear);
        assert_eq!(serde_json::to_string(&l).unwrap(), r#"{"kind":"linear"}"#);
    }

    fn points(n: usize, d: usize) -> impl Strategy<Value = InputMatrix> {
        prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| InputMatrix::new(n, d, v).unwrap())
    }

    proptest! {
        #[test]
        fn gram_symmetric_and_consistent(x in points(6, 2), bw in 0.1f64..10.0) {
            let k = KernelSpec::gaussian(bw).unwrap();
            let g = gram(&k, &x).unwrap();
            for i in 0..x.rows() {
                prop_assert_eq!(g[(i, i)], 1.0);
                let row = cross_gram(&k, &x, x.row(i)).unwrap();
                for j in 0..x.rows() {
                    prop_assert_eq!(g[(i, j)].to_bits(), g[(j, i)].to_bits());
                    prop_assert!((row[j] - g[(i, j)]).abs() <= 1e-12);
                    prop_assert!(g[(i, j)] >= 0.0 && g[(i, j)] <= 1.0);
                }
            }
        }

        #[test]
        fn linear_is_bilinear(x in prop::collection::vec(-3.0f64..3.0, 3),
                              y in prop::collection::vec(-3.0f64..3.0, 3),
                              a in -4.0f64..4.0) {
            let k = KernelSpec::Linear;
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let lhs = kernel_eval(&k, &ax, &y).unwrap();
            let rhs = a * kernel_eval(&k, &x, &y).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
