//! Constraint sets `C ⊆ R^T` relating the task outputs.
//!
//! Every set supports residual evaluation, (weighted) Euclidean projection
//! and minimisation of a separable objective `Σ_t h_t(c_t)`. The last one is
//! what the estimator calls for arbitrary losses; projections are the
//! square-loss special case.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::kernels::InputMatrix;
use crate::ranking::{decode_costs, is_acyclic, PairCosts, PairIndex};

pub const DEFAULT_GRID: usize = 4096;
pub const MIN_GRID: usize = 16;
/// Golden-section refinement stops once the bracket is this narrow.
pub const REFINE_TOL: f64 = 1e-10;
/// Seed used when sampling candidates from box and sphere sets.
pub const DEFAULT_SAMPLE_SEED: u64 = 0x5eed;
/// Per-coordinate grid used for separable minimisation over a box.
const BOX_GRID: usize = 4096;

/// Planar curves given by a periodic parametrisation on `[-π, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// `(cos θ, sin θ)`, zero set of `y1² + y2² - 1`.
    Circle,
    /// `(sin θ, sin 2θ)`, zero set of `y1⁴ - y1² + y2²/4`.
    Lemniscate,
}

impl CurveKind {
    #[inline]
    pub fn point(&self, theta: f64) -> [f64; 2] {
        match self {
            CurveKind::Circle => [theta.cos(), theta.sin()],
            CurveKind::Lemniscate => [theta.sin(), (2.0 * theta).sin()],
        }
    }

    /// `|γ(y)|` for the implicit equation of the curve.
    pub fn residual(&self, y: &[f64]) -> f64 {
        let (y1, y2) = (y[0], y[1]);
        match self {
            CurveKind::Circle => (y1 * y1 + y2 * y2 - 1.0).abs(),
            CurveKind::Lemniscate => (y1.powi(4) - (y1 * y1 - y2 * y2 / 4.0)).abs(),
        }
    }

    /// The uniform parameter grid `θ_j = -π + 2πj/m`, `j = 0..m`.
    pub fn grid_angle(j: usize, m: usize) -> f64 {
        -PI + 2.0 * PI * j as f64 / m as f64
    }
}

/// A validated constraint set.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintSpec {
    /// `[-half_width, half_width]^dim`.
    Box {
        half_width: f64,
        dim: usize,
    },
    /// Sphere of the given radius centred at the origin.
    Sphere {
        radius: f64,
        dim: usize,
    },
    Curve {
        kind: CurveKind,
        grid: usize,
    },
    /// A finite set of points, one per row.
    PointCloud {
        points: InputMatrix,
    },
    /// Comparison vectors over `D` documents whose digraph is acyclic.
    Dag {
        index: PairIndex,
    },
}

/// JSON form of a constraint. Point clouds may reference a CSV file or carry
/// their points inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintDoc {
    Sphere {
        radius: f64,
        #[serde(rename = "T")]
        dim: usize,
    },
    Box {
        half_width: f64,
        #[serde(rename = "T")]
        dim: usize,
    },
    Curve {
        name: CurveKind,
        #[serde(default = "default_grid")]
        grid: usize,
    },
    PointCloud {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        points: Option<Vec<Vec<f64>>>,
    },
    Dag {
        #[serde(rename = "D")]
        docs: usize,
    },
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

impl ConstraintSpec {
    pub fn boxed(half_width: f64, dim: usize) -> Result<Self> {
        let s = ConstraintSpec::Box { half_width, dim };
        s.validate()?;
        Ok(s)
    }

    pub fn sphere(radius: f64, dim: usize) -> Result<Self> {
        let s = ConstraintSpec::Sphere { radius, dim };
        s.validate()?;
        Ok(s)
    }

    pub fn curve(kind: CurveKind, grid: usize) -> Result<Self> {
        let s = ConstraintSpec::Curve { kind, grid };
        s.validate()?;
        Ok(s)
    }

    pub fn circle() -> Self {
        ConstraintSpec::Curve { kind: CurveKind::Circle, grid: DEFAULT_GRID }
    }

    pub fn lemniscate() -> Self {
        ConstraintSpec::Curve { kind: CurveKind::Lemniscate, grid: DEFAULT_GRID }
    }

    pub fn point_cloud(points: InputMatrix) -> Self {
        ConstraintSpec::PointCloud { points }
    }

    pub fn dag(docs: usize) -> Result<Self> {
        Ok(ConstraintSpec::Dag { index: PairIndex::new(docs)? })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSpec::Box { half_width: b, dim } | ConstraintSpec::Sphere { radius: b, dim } => {
                if !(*b > 0.0 && b.is_finite()) {
                    return Err(Error::InvalidParameter(format!("radius/half-width must be positive, got {b}")));
                }
                if *dim == 0 {
                    return Err(Error::InvalidParameter("ambient dimension must be at least 1".into()));
                }
                Ok(())
            }
            ConstraintSpec::Curve { grid, .. } if *grid < MIN_GRID => {
                Err(Error::InvalidParameter(format!("curve grid must be at least {MIN_GRID}, got {grid}")))
            }
            _ => Ok(()),
        }
    }

    /// Ambient dimension `T`.
    pub fn dim(&self) -> usize {
        match self {
            ConstraintSpec::Box { dim, .. } | ConstraintSpec::Sphere { dim, .. } => *dim,
            ConstraintSpec::Curve { .. } => 2,
            ConstraintSpec::PointCloud { points } => points.dim(),
            ConstraintSpec::Dag { index } => index.len(),
        }
    }

    pub fn from_doc(doc: &ConstraintDoc, base_dir: Option<&Path>) -> Result<Self> {
        let spec = match doc {
            ConstraintDoc::Sphere { radius, dim } => ConstraintSpec::Sphere { radius: *radius, dim: *dim },
            ConstraintDoc::Box { half_width, dim } => ConstraintSpec::Box { half_width: *half_width, dim: *dim },
            ConstraintDoc::Curve { name, grid } => ConstraintSpec::Curve { kind: *name, grid: *grid },
            ConstraintDoc::PointCloud { points: Some(points), .. } => {
                ConstraintSpec::PointCloud { points: InputMatrix::from_rows(points)? }
            }
            ConstraintDoc::PointCloud { path: Some(path), points: None } => {
                let full = match base_dir {
                    Some(dir) => dir.join(path),
                    None => path.into(),
                };
                ConstraintSpec::PointCloud { points: crate::io::read_point_cloud(&full)? }
            }
            ConstraintDoc::PointCloud { .. } => {
                return Err(Error::Malformed("point cloud needs either `path` or `points`".into()))
            }
            ConstraintDoc::Dag { docs } => ConstraintSpec::dag(*docs)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The JSON form; point clouds are inlined.
    pub fn to_doc(&self) -> ConstraintDoc {
        match self {
            ConstraintSpec::Box { half_width, dim } => ConstraintDoc::Box { half_width: *half_width, dim: *dim },
            ConstraintSpec::Sphere { radius, dim } => ConstraintDoc::Sphere { radius: *radius, dim: *dim },
            ConstraintSpec::Curve { kind, grid } => ConstraintDoc::Curve { name: *kind, grid: *grid },
            ConstraintSpec::PointCloud { points } => {
                ConstraintDoc::PointCloud { path: None, points: Some(points.to_rows()) }
            }
            ConstraintSpec::Dag { index } => ConstraintDoc::Dag { docs: index.docs() },
        }
    }

    fn check_vector(&self, y: &[f64], what: &'static str) -> Result<()> {
        ensure_len(self.dim(), y.len())?;
        ensure_finite(y, what)
    }

    /// `|γ(y)|`, zero exactly on the set.
    ///
    /// Box: `max(0, |y|_∞ - B)`. Sphere: `||y| - B|`. Point cloud: distance to
    /// the nearest point. DAG: 0 when the induced digraph is acyclic, else 1.
    pub fn gamma_residual(&self, y: &[f64]) -> Result<f64> {
        self.check_vector(y, "residual argument")?;
        Ok(match self {
            ConstraintSpec::Box { half_width, .. } => {
                let inf = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                (inf - half_width).max(0.0)
            }
            ConstraintSpec::Sphere { radius, .. } => (norm(y) - radius).abs(),
            ConstraintSpec::Curve { kind, .. } => kind.residual(y),
            ConstraintSpec::PointCloud { points } => {
                let (i, _) = nearest_row(points, |p| sq_dist(p, y));
                sq_dist(points.row(i), y).sqrt()
            }
            ConstraintSpec::Dag { index } => {
                if is_acyclic(index, y) {
                    0.0
                } else {
                    1.0
                }
            }
        })
    }

    /// A finite subset of `C`, with the default sampling seed for box and
    /// sphere sets.
    pub fn candidates(&self, resolution: usize) -> Result<Vec<Vec<f64>>> {
        self.candidates_seeded(resolution, DEFAULT_SAMPLE_SEED)
    }

    /// Curves: the uniform `θ` grid with `resolution` points. Point clouds:
    /// the cloud. Box and sphere: `resolution` uniform random points.
    pub fn candidates_seeded(&self, resolution: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            ConstraintSpec::Curve { kind, .. } => {
                if resolution < MIN_GRID {
                    return Err(Error::InvalidParameter(format!(
                        "curve resolution must be at least {MIN_GRID}, got {resolution}"
                    )));
                }
                Ok((0..resolution).map(|j| kind.point(CurveKind::grid_angle(j, resolution)).to_vec()).collect())
            }
            ConstraintSpec::PointCloud { points } => Ok(points.to_rows()),
            ConstraintSpec::Box { half_width, dim } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..resolution)
                    .map(|_| (0..*dim).map(|_| rng.random_range(-*half_width..=*half_width)).collect())
                    .collect())
            }
            ConstraintSpec::Sphere { radius, dim } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Vec::with_capacity(resolution);
                while out.len() < resolution {
                    let g: Vec<f64> = (0..*dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = norm(&g);
                    if n > 1e-12 {
                        out.push(g.iter().map(|v| radius * v / n).collect());
                    }
                }
                Ok(out)
            }
            ConstraintSpec::Dag { .. } => {
                Err(Error::Unsupported("candidate enumeration over DAG(D); use the ranking decoder".into()))
            }
        }
    }

    /// Euclidean projection `argmin_{c ∈ C} |c - w|²`.
    pub fn project(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_vector(w, "projection argument")?;
        Ok(match self {
            ConstraintSpec::Box { half_width, .. } => w.iter().map(|v| v.clamp(-half_width, *half_width)).collect(),
            ConstraintSpec::Sphere { radius, dim } => {
                let n = norm(w);
                if n == 0.0 {
                    log::info!("projecting the origin onto a sphere: tie broken towards e1");
                    let mut e = vec![0.0; *dim];
                    e[0] = *radius;
                    e
                } else {
                    w.iter().map(|v| radius * v / n).collect()
                }
            }
            ConstraintSpec::Curve { kind: CurveKind::Circle, .. } if norm(w) > 0.0 => {
                let n = norm(w);
                vec![w[0] / n, w[1] / n]
            }
            _ => self.minimize_separable_unchecked(&|t, v| (v - w[t]) * (v - w[t]))?,
        })
    }

    /// Weighted projection `argmin_{c ∈ C} Σ_t a_t (c_t - w_t)²`.
    ///
    /// Weights may be zero or negative; then the objective is evaluated on
    /// candidates rather than solved in closed form.
    pub fn project_weighted(&self, w: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_vector(w, "projection argument")?;
        self.check_vector(a, "projection weights")?;
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateWeights);
        }
        if a[0] > 0.0 && a.iter().all(|&v| v == a[0]) {
            return self.project(w);
        }
        let objective = |t: usize, v: f64| a[t] * (v - w[t]) * (v - w[t]);
        match self {
            ConstraintSpec::Box { half_width: b, .. } => Ok(w
                .iter()
                .zip(a)
                .map(|(&wt, &at)| {
                    if at >= 0.0 {
                        wt.clamp(-b, *b)
                    } else if wt > 0.0 {
                        // concave coordinate: farthest endpoint, ties to -B
                        -b
                    } else if wt < 0.0 {
                        *b
                    } else {
                        -b
                    }
                })
                .collect()),
            ConstraintSpec::Sphere { radius, .. } => {
                let mut cands = vec![sphere_weighted_stationary(w, a, *radius)];
                cands.extend(sphere_axis_points(*radius, self.dim()));
                cands.extend(self.candidates(DEFAULT_GRID)?);
                Ok(best_candidate(&cands, |c| separable_value(&objective, c)))
            }
            _ => self.minimize_separable_unchecked(&objective),
        }
    }

    /// `|y - Π_C(y)|`.
    pub fn distance_to_set(&self, y: &[f64]) -> Result<f64> {
        let p = self.project(y)?;
        Ok(y.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    /// Minimises `Σ_t h(t, c_t)` over `C`.
    ///
    /// Curves: parameter grid plus golden-section refinement. Box:
    /// coordinate-wise grid plus refinement. Sphere: sampled candidates, the
    /// axis points and, in the plane, angular refinement. Point cloud:
    /// exhaustive. DAG: the feedback-arc-set decoder over per-pair costs.
    pub fn minimize_separable<F>(&self, h: &F) -> Result<Vec<f64>>
    where
        F: Fn(usize, f64) -> f64 + Sync,
    {
        self.validate()?;
        self.minimize_separable_unchecked(h)
    }

    fn minimize_separable_unchecked<F>(&self, h: &F) -> Result<Vec<f64>>
    where
        F: Fn(usize, f64) -> f64 + Sync,
    {
        match self {
            ConstraintSpec::Curve { kind, grid } => {
                let f = |theta: f64| {
                    let p = kind.point(theta);
                    h(0, p[0]) + h(1, p[1])
                };
                let theta = minimize_periodic(&f, *grid);
                Ok(kind.point(theta).to_vec())
            }
            ConstraintSpec::PointCloud { points } => {
                let (i, _) = nearest_row(points, |p| separable_value(h, p));
                Ok(points.row(i).to_vec())
            }
            ConstraintSpec::Box { half_width: b, dim } => {
                Ok((0..*dim).map(|t| minimize_interval(&|v| h(t, v), -b, *b, BOX_GRID)).collect())
            }
            ConstraintSpec::Sphere { radius, dim } => {
                if *dim == 1 {
                    let cands = vec![vec![-radius], vec![*radius]];
                    return Ok(best_candidate(&cands, |c| separable_value(h, c)));
                }
                if *dim == 2 {
                    let f = |theta: f64| h(0, radius * theta.cos()) + h(1, radius * theta.sin());
                    let theta = minimize_periodic(&f, DEFAULT_GRID);
                    return Ok(vec![radius * theta.cos(), radius * theta.sin()]);
                }
                let mut cands = sphere_axis_points(*radius, *dim);
                cands.extend(self.candidates(DEFAULT_GRID * *dim)?);
                Ok(best_candidate(&cands, |c| separable_value(h, c)))
            }
            ConstraintSpec::Dag { index } => {
                let costs: Vec<PairCosts> = (0..index.len())
                    .map(|t| PairCosts { minus: h(t, -1.0), zero: h(t, 0.0), plus: h(t, 1.0) })
                    .collect();
                let decoded = decode_costs(index, &costs)?;
                Ok(decoded.labels.iter().map(|&l| l as f64).collect())
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn separable_value<F: Fn(usize, f64) -> f64>(h: &F, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(t, &v)| h(t, v)).sum()
}

/// Row with the smallest score; ties go to the lowest index.
fn nearest_row(points: &InputMatrix, score: impl Fn(&[f64]) -> f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter_rows().enumerate() {
        let s = score(p);
        if s < best.1 {
            best = (i, s);
        }
    }
    best
}

fn best_candidate(cands: &[Vec<f64>], score: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut best = (0, f64::INFINITY);
    for (i, c) in cands.iter().enumerate() {
        let s = score(c);
        if s < best.1 {
            best = (i, s);
        }
    }
    cands[best.0].clone()
}

fn sphere_axis_points(radius: f64, dim: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * dim);
    for t in 0..dim {
        for s in [radius, -radius] {
            let mut e = vec![0.0; dim];
            e[t] = s;
            out.push(e);
        }
    }
    out
}

/// Global minimiser of `Σ a_t (c_t - w_t)²` on the sphere `|c| = B`.
///
/// Stationary points are `c_t = a_t w_t / (a_t + ν)`; the global one has
/// `ν ≥ -min_t a_t`, found by bisection on the secular equation
/// `Σ (a_t w_t / (a_t + ν))² = B²`. The degenerate case where the equation
/// has no root above `-min a` places the leftover norm on the first
/// minimal-weight coordinate.
pub(crate) fn sphere_weighted_stationary(w: &[f64], a: &[f64], radius: f64) -> Vec<f64> {
    let amin = a.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let eps = 1e-14 * scale;
    let minimal: Vec<usize> = (0..a.len()).filter(|&t| a[t] - amin <= eps).collect();
    let b2 = radius * radius;
    let secular = |nu: f64| -> f64 {
        a.iter()
            .zip(w)
            .map(|(&at, &wt)| {
                let d = at + nu;
                if at * wt == 0.0 {
                    0.0
                } else {
                    (at * wt / d).powi(2)
                }
            })
            .sum()
    };
    let hard = minimal.iter().all(|&t| a[t] * w[t] == 0.0);
    if hard {
        let s: f64 = (0..a.len()).filter(|t| !minimal.contains(t)).map(|t| (a[t] * w[t] / (a[t] - amin)).powi(2)).sum();
        if s <= b2 {
            let mut c: Vec<f64> =
                (0..a.len()).map(|t| if minimal.contains(&t) { 0.0 } else { a[t] * w[t] / (a[t] - amin) }).collect();
            c[minimal[0]] = (b2 - s).max(0.0).sqrt();
            return c;
        }
    }
    // bracket the root of secular(nu) = B² on (-amin, hi]
    let lo0 = -amin;
    let mut step = scale.max(1.0);
    let mut hi = lo0 + step;
    while secular(hi) > b2 {
        step *= 2.0;
        hi = lo0 + step;
        if !hi.is_finite() {
            break;
        }
    }
    let mut lo = lo0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular(mid) > b2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = hi;
    let c: Vec<f64> = a.iter().zip(w).map(|(&at, &wt)| at * wt / (at + nu)).collect();
    // renormalise away the residual bisection error
    let n = norm(&c);
    if n > 0.0 {
        c.iter().map(|v| radius * v / n).collect()
    } else {
        let mut e = vec![0.0; a.len()];
        e[0] = radius;
        e
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Minimiser over `θ` of a `2π`-periodic function: best grid cell, then
/// golden section over its two neighbouring cells.
pub(crate) fn minimize_periodic<F: Fn(f64) -> f64>(f: &F, grid: usize) -> f64 {
    let step = 2.0 * PI / grid as f64;
    let mut best = (0, f64::INFINITY);
    for j in 0..grid {
        let v = f(CurveKind::grid_angle(j, grid));
        if v < best.1 {
            best = (j, v);
        }
    }
    let theta0 = CurveKind::grid_angle(best.0, grid);
    let (theta, value) = golden_section(f, theta0 - step, theta0 + step, REFINE_TOL);
    if value <= best.1 {
        theta
    } else {
        theta0
    }
}

/// Minimiser of `f` on `[lo, hi]`: grid with `grid + 1` points including the
/// endpoints, then golden section around the best point.
pub(crate) fn minimize_interval<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, grid: usize) -> f64 {
    let step = (hi - lo) / grid as f64;
    let at = |j: usize| if j == grid { hi } else { lo + step * j as f64 };
    let mut best = (0, f64::INFINITY);
    for j in 0..=grid {
        let v = f(at(j));
        if v < best.1 {
            best = (j, v);
        }
    }
    let x0 = at(best.0);
    let (x, value) = golden_section(f, (x0 - step).max(lo), (x0 + step).min(hi), REFINE_TOL);
    if value < best.1 {
        x
    } else {
        x0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn residual_examples() {
        let c = ConstraintSpec::circle();
        assert_eq!(c.gamma_residual(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(c.gamma_residual(&[2.0, 0.0]).unwrap(), 3.0);
        assert_eq!(ConstraintSpec::lemniscate().gamma_residual(&[0.0, 0.0]).unwrap(), 0.0);
        let b = ConstraintSpec::boxed(1.0, 3).unwrap();
        assert_eq!(b.gamma_residual(&[0.5, -1.5, 0.0]).unwrap(), 0.5);
        assert_eq!(b.gamma_residual(&[0.5, -0.5, 0.0]).unwrap(), 0.0);
        let s = ConstraintSpec::sphere(2.0, 2).unwrap();
        assert_eq!(s.gamma_residual(&[0.0, 3.0]).unwrap(), 1.0);
        assert!(c.gamma_residual(&[1.0]).is_err());
    }

    #[test]
    fn circle_candidates_hit_axes() {
        let c = ConstraintSpec::circle().candidates(16).unwrap();
        for target in [[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
            assert!(c.iter().any(|p| (p[0] - target[0]).abs() < 1e-12 && (p[1] - target[1]).abs() < 1e-12));
        }
        assert!(ConstraintSpec::circle().candidates(8).is_err());
        let four: Vec<[f64; 2]> = (0..4).map(|j| CurveKind::Circle.point(CurveKind::grid_angle(j, 4))).collect();
        assert_abs_diff_eq!(four[1][1], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(four[2][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(four[3][1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lemniscate_parametrisation() {
        let p = CurveKind::Lemniscate.point(PI / 2.0);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn candidates_are_feasible() {
        for spec in [ConstraintSpec::circle(), ConstraintSpec::lemniscate()] {
            for c in spec.candidates(1000).unwrap() {
                assert!(spec.gamma_residual(&c).unwrap() <= 1e-9);
            }
        }
        let s = ConstraintSpec::sphere(1.5, 4).unwrap();
        for c in s.candidates(200).unwrap() {
            assert!(s.gamma_residual(&c).unwrap() <= 1e-12);
        }
        let b = ConstraintSpec::boxed(0.5, 3).unwrap();
        for c in b.candidates(200).unwrap() {
            assert_eq!(b.gamma_residual(&c).unwrap(), 0.0);
        }
        assert!(ConstraintSpec::dag(3).unwrap().candidates(10).is_err());
    }

    #[test]
    fn closed_form_projections() {
        let s = ConstraintSpec::sphere(1.0, 2).unwrap();
        assert_eq!(s.project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(s.project(&[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let b = ConstraintSpec::boxed(1.0, 2).unwrap();
        assert_eq!(b.project(&[0.5, -3.0]).unwrap(), vec![0.5, -1.0]);
        assert_abs_diff_eq!(s.distance_to_set(&[3.0, 0.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(b.distance_to_set(&[0.2, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn circle_projection_is_radial() {
        let p = ConstraintSpec::circle().project(&[0.3, 0.4]).unwrap();
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-9);
    }

    #[test]
    fn weighted_errors_and_reduction() {
        let c = ConstraintSpec::circle();
        assert!(matches!(c.project_weighted(&[0.1, 0.2], &[0.0, 0.0]), Err(Error::DegenerateWeights)));
        let w = [0.7, -1.3];
        let plain = c.project(&w).unwrap();
        let weighted = c.project_weighted(&w, &[2.5, 2.5]).unwrap();
        assert_abs_diff_eq!(plain[0], weighted[0], epsilon = 1e-6);
        assert_abs_diff_eq!(plain[1], weighted[1], epsilon = 1e-6);
    }

    #[test]
    fn weighted_box_handles_negative_weights() {
        let b = ConstraintSpec::boxed(1.0, 3).unwrap();
        let c = b.project_weighted(&[0.3, 2.0, -0.4], &[1.0, 2.0, -1.0]).unwrap();
        assert_eq!(c, vec![0.3, 1.0, 1.0]);
    }

    #[test]
    fn weighted_sphere_matches_sampling() {
        let s = ConstraintSpec::sphere(1.0, 3).unwrap();
        let w = [0.4, -0.2, 0.9];
        for a in [[1.0, 3.0, 0.5], [-1.0, 2.0, 1.0], [0.0, 1.0, 1.0]] {
            let c = s.project_weighted(&w, &a).unwrap();
            let obj = |c: &[f64]| (0..3).map(|t| a[t] * (c[t] - w[t]).powi(2)).sum::<f64>();
            assert!(s.gamma_residual(&c).unwrap() < 1e-9);
            for cand in s.candidates_seeded(20_000, 7).unwrap() {
                assert!(obj(&c) <= obj(&cand) + 1e-12);
            }
        }
    }

    #[test]
    fn point_cloud_nearest() {
        let pts = InputMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let spec = ConstraintSpec::point_cloud(pts);
        assert_eq!(spec.project(&[1.6, 0.3]).unwrap(), vec![2.0, 0.0]);
        assert_abs_diff_eq!(spec.gamma_residual(&[1.0, 0.5]).unwrap(), 0.5, epsilon = 1e-15);
        // tie between rows 0 and 2 goes to the lower index
        assert_eq!(spec.project(&[1.0, -5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dag_projection_is_acyclic() {
        let spec = ConstraintSpec::dag(3).unwrap();
        // pairs (0,1), (0,2), (1,2): 0>1, 1>2, 2>0 is a cycle
        let w = [1.0, -1.0, 1.0];
        let c = spec.project(&w).unwrap();
        assert_eq!(spec.gamma_residual(&c).unwrap(), 0.0);
        assert_eq!(spec.gamma_residual(&w).unwrap(), 1.0);
    }

    #[test]
    fn doc_round_trip() {
        let docs = [
            r#"{"type":"sphere","radius":1.0,"T":2}"#,
            r#"{"type":"box","half_width":1.0,"T":2}"#,
            r#"{"type":"curve","name":"circle","grid":4096}"#,
            r#"{"type":"dag","D":4}"#,
            r#"{"type":"point_cloud","points":[[0.0,1.0],[1.0,0.0]]}"#,
        ];
        for d in docs {
            let doc: ConstraintDoc = serde_json::from_str(d).unwrap();
            let spec = ConstraintSpec::from_doc(&doc, None).unwrap();
            assert_eq!(spec.to_doc(), doc);
        }
        let lem: ConstraintDoc = serde_json::from_str(r#"{"type":"curve","name":"lemniscate"}"#).unwrap();
        assert_eq!(ConstraintSpec::from_doc(&lem, None).unwrap(), ConstraintSpec::lemniscate());
        let bad: ConstraintDoc = serde_json::from_str(r#"{"type":"curve","name":"circle","grid":8}"#).unwrap();
        assert!(ConstraintSpec::from_doc(&bad, None).is_err());
    }

    proptest! {
        #[test]
        fn box_projection_idempotent_and_nonexpansive(
            u in prop::collection::vec(-4.0f64..4.0, 3),
            v in prop::collection::vec(-4.0f64..4.0, 3),
        ) {
            let b = ConstraintSpec::boxed(1.3, 3).unwrap();
            let pu = b.project(&u).unwrap();
            prop_assert_eq!(b.project(&pu).unwrap(), pu.clone());
            let pv = b.project(&v).unwrap();
            let d = |x: &[f64], y: &[f64]| sq_dist(x, y).sqrt();
            prop_assert!(d(&pu, &pv) <= d(&u, &v) + 1e-15);
            prop_assert!(b.gamma_residual(&pu).unwrap() <= 1e-6);
        }

        #[test]
        fn sphere_projection_idempotent(u in prop::collection::vec(-4.0f64..4.0, 4)) {
            prop_assume!(norm(&u) > 1e-6);
            let s = ConstraintSpec::sphere(2.0, 4).unwrap();
            let p = s.project(&u).unwrap();
            let pp = s.project(&p).unwrap();
            for (x, y) in p.iter().zip(&pp) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert!(s.gamma_residual(&p).unwrap() <= 1e-6);
        }

        #[test]
        fn curve_projection_idempotent_and_feasible(x in -2.0f64..2.0, y in -2.0f64..2.0, lem in any::<bool>()) {
            let spec = if lem { ConstraintSpec::lemniscate() } else { ConstraintSpec::circle() };
            let p = spec.project(&[x, y]).unwrap();
            prop_assert!(spec.gamma_residual(&p).unwrap() <= 1e-9);
            let pp = spec.project(&p).unwrap();
            prop_assert!(sq_dist(&p, &pp).sqrt() <= 1e-6);
        }
    }
}
