//! The nonlinear multitask estimator.
//!
//! Fitting is `T` independent kernel ridge regressions. Prediction at `x`
//! minimises `Σ_t Σ_i alpha_it(x) ℓ(c_t, y_it)` over `c ∈ C`. With the
//! square loss this is the weighted projection of `w_t = b_t / a_t` with
//! weights `a_t`; in the vector-valued case (all tasks share their inputs)
//! it is the plain projection of `b / a`, and the robust and perturbed
//! variants have closed forms around it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintDoc, ConstraintSpec};
use crate::error::{ensure_len, Error, Result};
use crate::kernels::{InputMatrix, KernelSpec};
use crate::par;
use crate::scores::{fit_scores, ScoreModel, SquareStats, TaskData};

/// Tasks whose `|a_t(x)|` falls below this carry no weight in the
/// square-loss projection.
pub const WEIGHT_FLOOR: f64 = 1e-10;

/// One training set per task; sizes may differ.
#[derive(Clone, Debug, PartialEq)]
pub struct MultitaskData {
    pub tasks: Vec<TaskData>,
}

impl MultitaskData {
    pub fn new(tasks: Vec<TaskData>) -> Self {
        Self { tasks }
    }

    /// Vector-valued data: every task observed at every input.
    /// `outputs[i][t]` is task `t` at input `i`.
    pub fn from_vvr(inputs: &InputMatrix, outputs: &[Vec<f64>]) -> Result<Self> {
        ensure_len(inputs.rows(), outputs.len())?;
        let t = outputs.first().map(Vec::len).unwrap_or(0);
        if t == 0 {
            return Err(Error::Empty("no tasks".into()));
        }
        let tasks = (0..t)
            .map(|j| {
                let y = outputs
                    .iter()
                    .map(|row| {
                        ensure_len(t, row.len())?;
                        Ok(row[j])
                    })
                    .collect::<Result<Vec<_>>>()?;
                TaskData::new(inputs.clone(), y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// The per-task loss `ℓ(c, y)`. Hinge and logistic expect labels in
/// `{-1, +1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Square,
    Hinge,
    Logistic,
}

impl LossKind {
    #[inline]
    pub fn eval(&self, c: f64, y: f64) -> f64 {
        match self {
            LossKind::Square => (c - y) * (c - y),
            LossKind::Hinge => (1.0 - c * y).max(0.0),
            LossKind::Logistic => {
                let z = c * y;
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
        }
    }
}

/// The fitted estimator. Immutable; prediction is pure.
#[derive(Clone, Debug, PartialEq)]
pub struct NlMtlModel {
    tasks: Vec<ScoreModel>,
    constraint: ConstraintSpec,
    loss: LossKind,
    // tasks share inputs and λ, hence one alpha(x)
    vvr: bool,
}

/// A prediction that may have left the closed-form path.
#[derive(Clone, Debug, PartialEq)]
pub struct VvrPrediction {
    pub value: Vec<f64>,
    /// `|a(x)|` was too small for `b / a`; the generic path was used.
    pub fallback: bool,
}

/// Which closed form produced a multitask perturbed prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbedFormula {
    /// `(b_t/a_t + ā/μ f0_t) / (a_t + ā/μ)` agreed with the exact minimiser.
    Stated,
    /// `(b_t + ā/μ f0_t) / (a_t + ā/μ)`, the exact minimiser over `z` for
    /// the fixed `f0`.
    Corrected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedPrediction {
    pub value: Vec<f64>,
    /// The point of `C` the prediction is pulled towards.
    pub anchor: Vec<f64>,
    pub formula: PerturbedFormula,
    /// Largest coordinate gap between the two closed forms.
    pub formula_gap: f64,
}

/// Fits one score model per task; the loss only matters at prediction.
pub fn fit(
    data: &MultitaskData,
    kernel: &KernelSpec,
    lambdas: &[f64],
    constraint: ConstraintSpec,
    loss: LossKind,
) -> Result<NlMtlModel> {
    if data.is_empty() {
        return Err(Error::Empty("no tasks".into()));
    }
    ensure_len(data.len(), lambdas.len())?;
    let tasks = par::try_map_range(data.len(), |t| fit_scores(kernel, &data.tasks[t], lambdas[t]))?;
    NlMtlModel::from_parts(tasks, constraint, loss)
}

impl NlMtlModel {
    pub fn from_parts(tasks: Vec<ScoreModel>, constraint: ConstraintSpec, loss: LossKind) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| Error::Empty("no tasks".into()))?;
        let (d, k) = (first.input_dim(), *first.kernel());
        for m in &tasks {
            ensure_len(d, m.input_dim())?;
            if *m.kernel() != k {
                return Err(Error::InvalidParameter("all tasks must share one kernel".into()));
            }
        }
        constraint.validate()?;
        ensure_len(tasks.len(), constraint.dim())?;
        let vvr = tasks.iter().all(|m| m.inputs() == first.inputs() && m.lambda() == first.lambda());
        Ok(Self { tasks, constraint, loss, vvr })
    }

    pub fn tasks(&self) -> &[ScoreModel] {
        &self.tasks
    }

    pub fn constraint(&self) -> &ConstraintSpec {
        &self.constraint
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].input_dim()
    }

    /// Same model with a different loss; the score models are shared as is.
    pub fn with_loss(&self, loss: LossKind) -> Self {
        Self { loss, ..self.clone() }
    }

    pub fn with_constraint(&self, constraint: ConstraintSpec) -> Result<Self> {
        Self::from_parts(self.tasks.clone(), constraint, self.loss)
    }

    pub fn scores_at(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        if self.vvr {
            return Ok(vec![self.tasks[0].alpha_at(x)?; self.tasks.len()]);
        }
        self.tasks.iter().map(|m| m.alpha_at(x)).collect()
    }

    pub fn square_stats(&self, x: &[f64]) -> Result<Vec<SquareStats>> {
        if self.vvr {
            let alpha = self.tasks[0].alpha_at(x)?;
            return Ok(self.tasks.iter().map(|m| m.stats_from_alpha(&alpha)).collect());
        }
        self.tasks.iter().map(|m| m.square_stats(x)).collect()
    }

    /// `Σ_t Σ_i alpha_it ℓ(c_t, y_it)` for precomputed scores.
    pub fn objective(&self, alphas: &[DVector<f64>], c: &[f64]) -> f64 {
        self.tasks
            .iter()
            .zip(alphas)
            .zip(c)
            .map(|((m, al), &ct)| task_objective(self.loss, al.as_slice(), m.outputs(), ct))
            .sum()
    }

    /// Unconstrained ridge prediction `b_t(x)` per task.
    pub fn stl(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.tasks.iter().map(|m| m.predict_unconstrained(x)).collect()
    }

    /// The estimator `f̂(x)`: square-loss weighted projection when
    /// possible, candidate minimisation of the score-weighted loss otherwise.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.loss == LossKind::Square {
            match self.predict_square(x) {
                Err(Error::DegenerateWeights) => {
                    log::debug!("degenerate square-loss weights, using the generic path");
                }
                other => return other,
            }
        }
        self.predict_generic(x)
    }

    /// Weighted projection of `w_t = b_t / a_t` with weights `a_t`.
    pub fn predict_square(&self, x: &[f64]) -> Result<Vec<f64>> {
        let stats = self.square_stats(x)?;
        let (w, a): (Vec<f64>, Vec<f64>) =
            stats.iter().map(|s| if s.a.abs() < WEIGHT_FLOOR { (0.0, 0.0) } else { (s.b / s.a, s.a) }).unzip();
        self.constraint.project_weighted(&w, &a)
    }

    /// Minimises the score-weighted loss directly over the constraint's
    /// candidates, for any loss.
    pub fn predict_generic(&self, x: &[f64]) -> Result<Vec<f64>> {
        let alphas = self.scores_at(x)?;
        let h = |t: usize, v: f64| task_objective(self.loss, alphas[t].as_slice(), self.tasks[t].outputs(), v);
        self.constraint.minimize_separable(&h)
    }

    /// Row-wise [`predict`](Self::predict), parallel over queries.
    pub fn predict_batch(&self, queries: &InputMatrix) -> Result<Vec<Vec<f64>>> {
        ensure_len(self.input_dim(), queries.dim())?;
        par::try_map_range(queries.rows(), |i| self.predict(queries.row(i)))
    }

    pub fn stl_batch(&self, queries: &InputMatrix) -> Result<Vec<Vec<f64>>> {
        ensure_len(self.input_dim(), queries.dim())?;
        par::try_map_range(queries.rows(), |i| self.stl(queries.row(i)))
    }

    /// Whether all tasks share inputs and `λ`, so they share `alpha(x)`.
    pub fn is_vvr(&self) -> bool {
        self.vvr
    }

    /// `(a(x), b(x)/a(x))` from the shared scores, `None` when `|a|` is
    /// below [`WEIGHT_FLOOR`].
    fn vvr_target(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        if !self.is_vvr() {
            return Err(Error::InvalidParameter("model is not vector-valued: tasks do not share inputs".into()));
        }
        let alpha = self.tasks[0].alpha_at(x)?;
        let a: f64 = alpha.iter().sum();
        if a.abs() < WEIGHT_FLOOR {
            return Ok(None);
        }
        Ok(Some(self.tasks.iter().map(|m| m.stats_from_alpha(&alpha).b / a).collect()))
    }

    fn vvr_with<F>(&self, x: &[f64], f: F) -> Result<VvrPrediction>
    where
        F: FnOnce(&[f64], Vec<f64>) -> Vec<f64>,
    {
        match self.vvr_target(x)? {
            Some(w) => {
                let f0 = self.constraint.project(&w)?;
                Ok(VvrPrediction { value: f(&w, f0), fallback: false })
            }
            None => {
                log::warn!("|a(x)| below {WEIGHT_FLOOR:e}; falling back to the generic predictor");
                Ok(VvrPrediction { value: self.predict_generic(x)?, fallback: true })
            }
        }
    }

    /// `Π_C(b(x) / a(x))`.
    pub fn predict_vvr(&self, x: &[f64]) -> Result<VvrPrediction> {
        self.vvr_with(x, |_, f0| f0)
    }

    /// Prediction in the `δ`-inflation of `C`: `f0 + r min(1, δ/|r|)` with
    /// `r = b/a - f0`.
    pub fn predict_robust(&self, x: &[f64], delta: f64) -> Result<VvrPrediction> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be non-negative, got {delta}")));
        }
        self.vvr_with(x, |w, f0| {
            let r: Vec<f64> = w.iter().zip(&f0).map(|(a, b)| a - b).collect();
            let rn = crate::constraints::norm(&r);
            let s = if rn == 0.0 { 0.0 } else { (delta / rn).min(1.0) };
            f0.iter().zip(&r).map(|(c, r)| c + s * r).collect()
        })
    }

    /// Prediction under the distance-penalised loss: `f0 + r μ/(1+μ)`.
    pub fn predict_perturbed(&self, x: &[f64], mu: f64) -> Result<VvrPrediction> {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        let s = if mu.is_infinite() { 1.0 } else { mu / (1.0 + mu) };
        self.vvr_with(x, |w, f0| f0.iter().zip(w).map(|(c, wt)| c + s * (wt - c)).collect())
    }

    /// Multitask version of the perturbed prediction.
    ///
    /// The anchor `f0` is the projection of `w_t = b_t/a_t` with weights
    /// `a_t / (a_t + ā/μ)`, `ā = Σ_t a_t`. Each coordinate is then blended
    /// towards it. The published blend divides `b_t/a_t` rather than `b_t`
    /// by `a_t + ā/μ`; it is used only when it agrees with the exact
    /// minimiser, which is otherwise returned and reported in `formula`.
    pub fn predict_perturbed_mtl(&self, x: &[f64], mu: f64) -> Result<PerturbedPrediction> {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        let stats = self.square_stats(x)?;
        let abar: f64 = stats.iter().map(|s| s.a).sum();
        if !(abar > WEIGHT_FLOOR) {
            return Err(Error::DegenerateWeights);
        }
        let kappa = abar / mu;
        let (w, sigma): (Vec<f64>, Vec<f64>) = stats
            .iter()
            .map(|s| if s.a.abs() < WEIGHT_FLOOR { (0.0, 0.0) } else { (s.b / s.a, s.a / (s.a + kappa)) })
            .unzip();
        let anchor = self.constraint.project_weighted(&w, &sigma)?;
        let stated: Vec<f64> =
            stats.iter().zip(&w).zip(&anchor).map(|((s, wt), f)| (wt + kappa * f) / (s.a + kappa)).collect();
        let corrected: Vec<f64> = stats.iter().zip(&anchor).map(|(s, f)| (s.b + kappa * f) / (s.a + kappa)).collect();
        let gap = stated.iter().zip(&corrected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = corrected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let (value, formula) = if gap <= 1e-9 * scale {
            (stated, PerturbedFormula::Stated)
        } else {
            (corrected, PerturbedFormula::Corrected)
        };
        Ok(PerturbedPrediction { value, anchor, formula, formula_gap: gap })
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc { constraint: self.constraint.to_doc(), loss: self.loss, tasks: self.tasks.clone() }
    }

    pub fn from_doc(doc: ModelDoc) -> Result<Self> {
        let constraint = ConstraintSpec::from_doc(&doc.constraint, None)?;
        Self::from_parts(doc.tasks, constraint, doc.loss)
    }
}

fn task_objective(loss: LossKind, alpha: &[f64], y: &[f64], c: f64) -> f64 {
    alpha.iter().zip(y).map(|(a, &yi)| a * loss.eval(c, yi)).sum()
}

/// On-disk model: score models plus constraint and loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub constraint: ConstraintDoc,
    pub loss: LossKind,
    pub tasks: Vec<ScoreModel>,
}

/// `|V*ψ(y)|²` for the square loss: `4y² + y⁴`.
pub fn self_norm_sq(y: f64) -> f64 {
    let y2 = y * y;
    4.0 * y2 + y2 * y2
}

/// The comparison constant `2 sup_{c ∈ C} sqrt(1/T Σ_t |V*ψ(c_t)|²)` for the
/// square loss.
///
/// Box: exact, attained at a corner. Sphere: `sample_size` random points
/// plus the axis points. Curves and clouds: their candidates.
pub fn q_constant(spec: &ConstraintSpec, sample_size: usize) -> Result<f64> {
    spec.validate()?;
    let inner = |c: &[f64]| c.iter().map(|&v| self_norm_sq(v)).sum::<f64>() / c.len() as f64;
    let sup = match spec {
        ConstraintSpec::Box { half_width, .. } => self_norm_sq(*half_width),
        ConstraintSpec::Sphere { radius, dim } => {
            let mut best = self_norm_sq(*radius) / *dim as f64;
            for c in spec.candidates(sample_size)? {
                best = best.max(inner(&c));
            }
            best
        }
        ConstraintSpec::Curve { .. } => spec
            .candidates(sample_size.max(crate::constraints::MIN_GRID))?
            .iter()
            .map(|c| inner(c))
            .fold(f64::NEG_INFINITY, f64::max),
        ConstraintSpec::PointCloud { points } => points.iter_rows().map(inner).fold(f64::NEG_INFINITY, f64::max),
        ConstraintSpec::Dag { .. } => {
            return Err(Error::Unsupported("comparison constant over DAG(D)".into()));
        }
    };
    Ok(2.0 * sup.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn circle_vvr(n: usize) -> (InputMatrix, Vec<Vec<f64>>) {
        let xs: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
        let ys = xs.iter().map(|x| vec![x.cos(), x.sin()]).collect();
        (InputMatrix::from_column(&xs).unwrap(), ys)
    }

    fn circle_model(n: usize, lambda: f64) -> NlMtlModel {
        let (x, y) = circle_vvr(n);
        let data = MultitaskData::from_vvr(&x, &y).unwrap();
        fit(&data, &KernelSpec::gaussian(1.0).unwrap(), &[lambda, lambda], ConstraintSpec::circle(), LossKind::Square)
            .unwrap()
    }

    #[test]
    fn losses() {
        assert_eq!(LossKind::Square.eval(1.0, 3.0), 4.0);
        assert_eq!(LossKind::Hinge.eval(0.5, 1.0), 0.5);
        assert_eq!(LossKind::Hinge.eval(2.0, 1.0), 0.0);
        assert_abs_diff_eq!(LossKind::Logistic.eval(0.0, 1.0), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(LossKind::Logistic.eval(-800.0, 1.0), 800.0, epsilon = 1e-9);
    }

    #[test]
    fn self_norm_examples() {
        assert_eq!(self_norm_sq(0.0), 0.0);
        assert_eq!(self_norm_sq(1.0), 5.0);
        assert_eq!(self_norm_sq(2.0), 32.0);
    }

    #[test]
    fn q_constant_box_and_small_sphere() {
        let b = ConstraintSpec::boxed(1.0, 7).unwrap();
        assert_abs_diff_eq!(q_constant(&b, 10).unwrap(), 2.0 * 5f64.sqrt(), epsilon = 1e-12);
        let s1 = ConstraintSpec::sphere(1.0, 1).unwrap();
        assert_abs_diff_eq!(q_constant(&s1, 100).unwrap(), 2.0 * 5f64.sqrt(), epsilon = 1e-12);
        assert!(q_constant(&ConstraintSpec::dag(3).unwrap(), 10).is_err());
    }

    #[test]
    fn fit_checks_shapes() {
        let (x, y) = circle_vvr(10);
        let data = MultitaskData::from_vvr(&x, &y).unwrap();
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(fit(&data, &k, &[1e-3], ConstraintSpec::circle(), LossKind::Square).is_err());
        let sphere3 = ConstraintSpec::sphere(1.0, 3).unwrap();
        assert!(fit(&data, &k, &[1e-3, 1e-3], sphere3, LossKind::Square).is_err());
    }

    #[test]
    fn vvr_fast_path_projects() {
        let m = circle_model(30, 1e-4);
        assert!(m.is_vvr());
        for q in [-2.0, 0.1, 1.4] {
            let p = m.predict_vvr(&[q]).unwrap();
            assert!(!p.fallback);
            assert!(m.constraint().gamma_residual(&p.value).unwrap() < 1e-9);
            let g = m.predict(&[q]).unwrap();
            assert_abs_diff_eq!(p.value[0], g[0], epsilon = 1e-6);
            assert_abs_diff_eq!(p.value[1], g[1], epsilon = 1e-6);
        }
    }

    #[test]
    fn tiny_a_falls_back() {
        let m = circle_model(20, 1e-3);
        // far from the data the gaussian scores vanish
        let p = m.predict_vvr(&[1e3]).unwrap();
        assert!(p.fallback);
        assert!(m.constraint().gamma_residual(&p.value).unwrap() < 1e-9);
    }

    #[test]
    fn robust_and_perturbed_limits() {
        let m = circle_model(25, 1e-2);
        let x = [0.4];
        let f0 = m.predict_vvr(&x).unwrap().value;
        let w = m.vvr_target(&x).unwrap().unwrap();
        assert_eq!(m.predict_robust(&x, 0.0).unwrap().value, f0);
        let inf = m.predict_robust(&x, f64::INFINITY).unwrap().value;
        assert_abs_diff_eq!(inf[0], w[0], epsilon = 1e-12);
        let half = m.predict_perturbed(&x, 1.0).unwrap().value;
        for t in 0..2 {
            assert_abs_diff_eq!(half[t], 0.5 * (f0[t] + w[t]), epsilon = 1e-12);
        }
        let tiny = m.predict_perturbed(&x, 1e-12).unwrap().value;
        assert_abs_diff_eq!(tiny[0], f0[0], epsilon = 1e-9);
        assert!(m.predict_perturbed(&x, 0.0).is_err());
        assert!(m.predict_robust(&x, -1.0).is_err());
    }

    #[test]
    fn non_vvr_models_reject_vvr_queries() {
        let a = TaskData::new(InputMatrix::from_column(&[0.0, 1.0]).unwrap(), vec![1.0, 0.5]).unwrap();
        let b = TaskData::new(InputMatrix::from_column(&[0.5]).unwrap(), vec![0.2]).unwrap();
        let m = fit(
            &MultitaskData::new(vec![a, b]),
            &KernelSpec::gaussian(1.0).unwrap(),
            &[1e-2, 1e-2],
            ConstraintSpec::circle(),
            LossKind::Square,
        )
        .unwrap();
        assert!(!m.is_vvr());
        assert!(m.predict_vvr(&[0.2]).is_err());
        assert!(m.constraint().gamma_residual(&m.predict(&[0.2]).unwrap()).unwrap() < 1e-9);
    }

    #[test]
    fn model_doc_round_trip() {
        let m = circle_model(8, 1e-2).with_loss(LossKind::Hinge);
        let json = serde_json::to_string(&m.to_doc()).unwrap();
        let back = NlMtlModel::from_doc(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
