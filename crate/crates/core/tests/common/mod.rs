//! Brute-force oracles shared by the integration tests. None of them call
//! into the library's solvers.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use nlmtl::ranking::PairCosts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(x: &[f64], y: &[f64], bw: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (bw * bw)).exp()
}

/// `(K + nλI)^{-1} k_x` through an explicit LU inverse.
///
/// For tiny `λ` the system is badly conditioned and a bare `inv * k` loses
/// most of its digits, so the product is refined with the same inverse,
/// `α += M^{-1}(k - Mα)`, the residual summed in double-double arithmetic.
pub fn alpha_by_inverse(xs: &[Vec<f64>], x: &[f64], bw: f64, lambda: f64) -> DVector<f64> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| gauss(&xs[i], &xs[j], bw));
    let m = k + DMatrix::identity(n, n) * (n as f64 * lambda);
    let inv = m.clone().try_inverse().expect("invertible system");
    let kx = DVector::from_fn(n, |i, _| gauss(&xs[i], x, bw));
    let mut alpha = &inv * &kx;
    for _ in 0..3 {
        let r = DVector::from_fn(n, |i, _| {
            let mut terms: Vec<f64> = (0..n).map(|j| -m[(i, j)] * alpha[j]).collect();
            terms.push(kx[i]);
            let errs: Vec<f64> = (0..n).map(|j| (-m[(i, j)]).mul_add(alpha[j], m[(i, j)] * alpha[j])).collect();
            terms.extend(errs);
            two_sum_all(&terms)
        });
        alpha += &inv * r;
    }
    alpha
}

// cascaded sum with error-free transformations
fn two_sum_all(v: &[f64]) -> f64 {
    let (mut s, mut e) = (0.0f64, 0.0f64);
    for &x in v {
        let t = s + x;
        let bp = t - s;
        e += (s - (t - bp)) + (x - bp);
        s = t;
    }
    s + e
}

fn golden(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-12 {
        if fa <= fb {
            (hi, b, fb) = (b, a, fa);
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            (lo, a, fa) = (a, b, fb);
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Grid over `[lo, hi]` followed by refinement in the best cell pair.
pub fn min_interval(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> f64 {
    let h = (hi - lo) / m as f64;
    let (mut bj, mut bv) = (0, f64::INFINITY);
    for j in 0..=m {
        let v = f(lo + h * j as f64);
        if v < bv {
            (bj, bv) = (j, v);
        }
    }
    let x0 = lo + h * bj as f64;
    let x = golden(f, (x0 - h).max(lo), (x0 + h).min(hi));
    if f(x) <= bv {
        x
    } else {
        x0
    }
}

pub fn min_angle(f: &dyn Fn(f64) -> f64, m: usize) -> f64 {
    min_interval(f, -PI, PI, m)
}

pub fn circle(t: f64) -> [f64; 2] {
    [t.cos(), t.sin()]
}

pub fn lemniscate(t: f64) -> [f64; 2] {
    [t.sin(), (2.0 * t).sin()]
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Cheapest labelling consistent with some total order, over all orders.
pub fn exhaustive_decode(docs: usize, costs: &[PairCosts]) -> f64 {
    let pairs: Vec<(usize, usize)> = (0..docs).flat_map(|p| ((p + 1)..docs).map(move |q| (p, q))).collect();
    let mut perm: Vec<usize> = (0..docs).collect();
    let mut best = f64::INFINITY;
    permutations(&mut perm, 0, &mut |order| {
        let mut pos = vec![0; docs];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        let total: f64 = pairs
            .iter()
            .zip(costs)
            .map(|(&(p, q), c)| if pos[p] < pos[q] { c.plus.min(c.zero) } else { c.minus.min(c.zero) })
            .sum();
        best = best.min(total);
    });
    best
}

fn permutations(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, f);
        v.swap(k, i);
    }
}

pub fn random_costs(r: &mut ChaCha8Rng, pairs: usize, signed: bool) -> Vec<PairCosts> {
    let lo = if signed { -1.0 } else { 0.0 };
    (0..pairs)
        .map(|_| PairCosts {
            minus: r.random_range(lo..1.0),
            zero: r.random_range(lo..1.0),
            plus: r.random_range(lo..1.0),
        })
        .collect()
}

/// Random connected digraph on `n` vertices without 2-cycles: a random
/// spanning tree with random orientations, plus extra edges.
pub fn connected_digraph(r: &mut ChaCha8Rng, n: usize, extra_prob: f64) -> Vec<(usize, usize)> {
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    let add = |u: usize, v: usize, adj: &mut Vec<Vec<bool>>, edges: &mut Vec<(usize, usize)>| {
        if u != v && !adj[u][v] && !adj[v][u] {
            adj[u][v] = true;
            edges.push((u, v));
        }
    };
    for v in 1..n {
        let u = r.random_range(0..v);
        if r.random_bool(0.5) {
            add(u, v, &mut adj, &mut edges)
        } else {
            add(v, u, &mut adj, &mut edges)
        }
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if r.random_bool(extra_prob) {
                if r.random_bool(0.5) {
                    add(u, v, &mut adj, &mut edges)
                } else {
                    add(v, u, &mut adj, &mut edges)
                }
            }
        }
    }
    edges
}
