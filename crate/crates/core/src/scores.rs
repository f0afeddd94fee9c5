//! Per-task kernel ridge regression and the score functions it induces.
//!
//! For task `t` with inputs `X_t` and outputs `y_t`, the score vector at a
//! query `x` is `alpha_t(x) = (K_t + n_t λ_t I)^{-1} K_{tx}`. Everything the
//! estimator needs at prediction time is a linear functional of it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::kernels::{cross_gram, gram, InputMatrix, KernelSpec};
use crate::linalg::Cholesky;

/// Smallest regularisation accepted by [`fit_scores`].
pub const MIN_LAMBDA: f64 = 1e-12;

/// Training pairs of a single task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub inputs: InputMatrix,
    pub outputs: Vec<f64>,
}

impl TaskData {
    pub fn new(inputs: InputMatrix, outputs: Vec<f64>) -> Result<Self> {
        let data = Self { inputs, outputs };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_len(self.inputs.rows(), self.outputs.len())?;
        ensure_finite(&self.outputs, "task outputs")
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// How `λ_t` is chosen from the task size `n_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    Fixed(f64),
    /// `n_t^{-1/4}`, the universal-consistency schedule.
    QuarterRoot,
    /// `n_t^{-1/2}`, the schedule behind the finite-sample bound.
    HalfRoot,
}

impl LambdaSchedule {
    pub fn lambda(&self, n: usize) -> f64 {
        match *self {
            LambdaSchedule::Fixed(l) => l,
            LambdaSchedule::QuarterRoot => (n as f64).powf(-0.25),
            LambdaSchedule::HalfRoot => (n as f64).powf(-0.5),
        }
    }
}

/// A fitted kernel ridge regression for one task. Immutable after fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel {
    kernel: KernelSpec,
    inputs: InputMatrix,
    outputs: Vec<f64>,
    lambda: f64,
    factor: Cholesky,
    // row-major system matrix, kept only when it is badly conditioned
    refine: Option<Vec<f64>>,
}

/// Above this bound on `cond(K + nλI)` solves are iteratively refined.
pub const REFINE_CONDITION: f64 = 1e6;
const REFINE_STEPS: usize = 2;

/// The system matrix when `‖A‖_∞ / (nλ)`, an upper bound on its condition
/// number for a positive semi-definite Gram matrix, exceeds
/// [`REFINE_CONDITION`].
fn refinement_matrix(system: &DMatrix<f64>, shift: f64) -> Option<Vec<f64>> {
    let n = system.nrows();
    let norm_inf = (0..n).map(|i| system.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    (norm_inf / shift > REFINE_CONDITION).then(|| (0..n * n).map(|k| system[(k / n, k % n)]).collect())
}

fn ridge_system(kernel: &KernelSpec, inputs: &InputMatrix, lambda: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = inputs.rows();
    let mut system = gram(kernel, inputs)?;
    let shift = n as f64 * lambda;
    for i in 0..n {
        system[(i, i)] += shift;
    }
    Ok((system, shift))
}

/// `a = Σ_i alpha_i(x)` and `b = Σ_i alpha_i(x) y_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquareStats {
    pub a: f64,
    pub b: f64,
}

/// Factors the ridge system `K + nλI` once; later queries reuse the factor.
pub fn fit_scores(kernel: &KernelSpec, data: &TaskData, lambda: f64) -> Result<ScoreModel> {
    kernel.validate()?;
    data.validate()?;
    if !(lambda >= MIN_LAMBDA) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be at least {MIN_LAMBDA:e}, got {lambda:e}")));
    }
    let (system, shift) = ridge_system(kernel, &data.inputs, lambda)?;
    let factor = Cholesky::factor(&system)?;
    Ok(ScoreModel {
        kernel: *kernel,
        inputs: data.inputs.clone(),
        outputs: data.outputs.clone(),
        lambda,
        factor,
        refine: refinement_matrix(&system, shift),
    })
}

impl ScoreModel {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn inputs(&self) -> &InputMatrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dim()
    }

    /// `K_t + n_t λ_t I` as reproduced by the stored factor.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        self.factor.reconstruct()
    }

    /// The score vector `alpha(x)`; entries may be negative.
    pub fn alpha_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        let kx = cross_gram(&self.kernel, &self.inputs, x)?;
        Ok(match &self.refine {
            Some(a) => self.factor.solve_refined(a, &kx, REFINE_STEPS),
            None => self.factor.solve(&kx),
        })
    }

    pub fn square_stats(&self, x: &[f64]) -> Result<SquareStats> {
        let alpha = self.alpha_at(x)?;
        Ok(self.stats_from_alpha(&alpha))
    }

    pub(crate) fn stats_from_alpha(&self, alpha: &DVector<f64>) -> SquareStats {
        let a = alpha.iter().sum();
        let b = alpha.iter().zip(&self.outputs).map(|(al, y)| al * y).sum();
        SquareStats { a, b }
    }

    /// The unconstrained ridge prediction `b(x)`.
    pub fn predict_unconstrained(&self, x: &[f64]) -> Result<f64> {
        Ok(self.square_stats(x)?.b)
    }

    pub fn to_persisted(&self) -> PersistedScoreModel {
        let l = self.factor.lower();
        PersistedScoreModel {
            kernel: self.kernel,
            lambda: self.lambda,
            inputs: self.inputs.to_rows(),
            outputs: self.outputs.clone(),
            factor: (0..l.nrows()).map(|i| l.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn from_persisted(p: PersistedScoreModel) -> Result<Self> {
        p.kernel.validate()?;
        if !(p.lambda >= MIN_LAMBDA) || !p.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("stored lambda {:e} out of range", p.lambda)));
        }
        let inputs = InputMatrix::from_rows(&p.inputs)?;
        let data = TaskData::new(inputs, p.outputs)?;
        let n = data.len();
        ensure_len(n, p.factor.len())?;
        let mut flat = Vec::with_capacity(n * n);
        for row in &p.factor {
            ensure_len(n, row.len())?;
            flat.extend_from_slice(row);
        }
        let factor = Cholesky::from_lower(DMatrix::from_row_slice(n, n, &flat))?;
        let (system, shift) = ridge_system(&p.kernel, &data.inputs, p.lambda)?;
        let refine = refinement_matrix(&system, shift);
        Ok(Self { kernel: p.kernel, inputs: data.inputs, outputs: data.outputs, lambda: p.lambda, factor, refine })
    }
}

/// On-disk form of a [`ScoreModel`]. Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistedScoreModel {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub factor: Vec<Vec<f64>>,
}

impl Serialize for ScoreModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_persisted().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScoreModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let p = PersistedScoreModel::deserialize(d)?;
        ScoreModel::from_persisted(p).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_point() -> ScoreModel {
        let data = TaskData::new(InputMatrix::from_column(&[0.2]).unwrap(), vec![3.0]).unwrap();
        fit_scores(&KernelSpec::gaussian(1.0).unwrap(), &data, 1.0).unwrap()
    }

    #[test]
    fn one_by_one_system() {
        let m = single_point();
        let alpha = m.alpha_at(&[0.2]).unwrap();
        assert_abs_diff_eq!(alpha[0], 0.5, epsilon = 1e-15);
        let s = m.square_stats(&[0.2]).unwrap();
        assert_abs_diff_eq!(s.a, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.b, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn constant_outputs_scale_a() {
        let xs = [-1.0, -0.3, 0.4, 1.2, 2.0];
        let data = TaskData::new(InputMatrix::from_column(&xs).unwrap(), vec![2.5; 5]).unwrap();
        let m = fit_scores(&KernelSpec::gaussian(0.7).unwrap(), &data, 1e-2).unwrap();
        for q in [-2.0, 0.0, 0.5, 3.0] {
            let s = m.square_stats(&[q]).unwrap();
            let alpha = m.alpha_at(&[q]).unwrap();
            let expected_b: f64 = alpha.iter().map(|a| a * 2.5).sum();
            assert_eq!(s.b, expected_b);
            assert_abs_diff_eq!(s.b, 2.5 * s.a, epsilon = 1e-14);
        }
    }

    #[test]
    fn lambda_bounds() {
        let data = TaskData::new(InputMatrix::from_column(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]).unwrap();
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(fit_scores(&k, &data, 1e-13).is_err());
        assert!(fit_scores(&k, &data, 0.0).is_err());
        assert!(fit_scores(&k, &data, f64::NAN).is_err());
        assert!(fit_scores(&k, &data, 1e-12).is_ok());
    }

    #[test]
    fn singular_system_reports_pivot() {
        // duplicate inputs with a linear kernel and tiny lambda: rank-deficient
        let data = TaskData::new(InputMatrix::from_column(&[0.0, 0.0]).unwrap(), vec![1.0, 1.0]).unwrap();
        match fit_scores(&KernelSpec::Linear, &data, 1e-12) {
            Ok(m) => assert!(m.system_matrix()[(0, 0)] > 0.0),
            Err(Error::Factorization { pivot, .. }) => assert!(pivot <= 0.0),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn query_dimension_checked() {
        let m = single_point();
        assert!(matches!(m.alpha_at(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn data_validation() {
        let x = InputMatrix::from_column(&[0.0, 1.0]).unwrap();
        assert!(TaskData::new(x.clone(), vec![1.0]).is_err());
        assert!(TaskData::new(x, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(LambdaSchedule::Fixed(0.3).lambda(100), 0.3);
        assert_abs_diff_eq!(LambdaSchedule::QuarterRoot.lambda(16), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(LambdaSchedule::HalfRoot.lambda(16), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn persisted_round_trip_is_exact() {
        let xs = [-1.0, 0.1234567891234, 0.4, 2.0 / 3.0];
        let data = TaskData::new(InputMatrix::from_column(&xs).unwrap(), vec![0.1, -0.7, 1.0 / 3.0, 2.0]).unwrap();
        let m = fit_scores(&KernelSpec::gaussian(0.9).unwrap(), &data, 1e-3).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: ScoreModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.alpha_at(&[0.3]).unwrap(), m.alpha_at(&[0.3]).unwrap());
    }
}
