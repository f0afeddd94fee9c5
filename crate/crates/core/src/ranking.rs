//! Ranking by pairwise comparisons over `DAG(D)`.
//!
//! One score model per document pair `(p, q)`, `p < q`, fitted only on the
//! queries where that comparison was observed. A label `+1` means `p` ranks
//! above `q`, `-1` the opposite and `0` a tie. Decoding picks the comparison
//! vector with the smallest score-weighted 0-1 cost among those whose
//! digraph is acyclic, by reduction to weighted feedback arc set.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::kernels::KernelSpec;
use crate::par;
use crate::scores::{fit_scores, ScoreModel, TaskData};

/// Largest document count accepted by the exhaustive decoder.
pub const EXACT_MAX_DOCS: usize = 8;

/// Bijection between pairs `(p, q)`, `p < q < D` (zero-based), and flat task
/// indices in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct PairIndex {
    docs: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn new(docs: usize) -> Result<Self> {
        if docs < 2 {
            return Err(Error::InvalidParameter(format!("need at least two documents, got {docs}")));
        }
        let pairs = (0..docs).flat_map(|p| ((p + 1)..docs).map(move |q| (p, q))).collect();
        Ok(Self { docs, pairs })
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    /// Number of pairs, `D(D-1)/2`.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index(&self, p: usize, q: usize) -> Result<usize> {
        if p >= q || q >= self.docs {
            return Err(Error::InvalidParameter(format!("invalid pair ({p}, {q}) for {} documents", self.docs)));
        }
        Ok(p * (2 * self.docs - p - 1) / 2 + (q - p - 1))
    }

    pub fn pair(&self, t: usize) -> (usize, usize) {
        self.pairs[t]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

impl TryFrom<usize> for PairIndex {
    type Error = Error;
    fn try_from(d: usize) -> Result<Self> {
        PairIndex::new(d)
    }
}

impl From<PairIndex> for usize {
    fn from(p: PairIndex) -> usize {
        p.docs
    }
}

/// Whether the digraph with `p → q` for `y_pq > 0` and `q → p` for `y_pq < 0`
/// is acyclic. Entries equal to zero add no edge.
pub fn is_acyclic(index: &PairIndex, labels: &[f64]) -> bool {
    let d = index.docs();
    let mut succ = vec![Vec::new(); d];
    let mut indeg = vec![0usize; d];
    for (t, &(p, q)) in index.pairs().iter().enumerate() {
        let (from, to) = if labels[t] > 0.0 {
            (p, q)
        } else if labels[t] < 0.0 {
            (q, p)
        } else {
            continue;
        };
        succ[from].push(to);
        indeg[to] += 1;
    }
    let mut queue: VecDeque<usize> = (0..d).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop_front() {
        seen += 1;
        for &u in &succ[v] {
            indeg[u] -= 1;
            if indeg[u] == 0 {
                queue.push_back(u);
            }
        }
    }
    seen == d
}

/// Score-weighted cost of each label for one pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCosts {
    pub minus: f64,
    pub zero: f64,
    pub plus: f64,
}

impl PairCosts {
    pub fn get(&self, label: i8) -> f64 {
        match label {
            1 => self.plus,
            -1 => self.minus,
            _ => self.zero,
        }
    }

    /// Cost when `p` is placed before `q`: best of `+1` and `0`, ties to `0`.
    fn before(&self) -> (i8, f64) {
        if self.plus < self.zero {
            (1, self.plus)
        } else {
            (0, self.zero)
        }
    }

    fn after(&self) -> (i8, f64) {
        if self.minus < self.zero {
            (-1, self.minus)
        } else {
            (0, self.zero)
        }
    }
}

/// Dense `D × D` weights: `w(p, q)` is what placing `p` before `q` saves
/// over the reverse. At most one of `w(p, q)`, `w(q, p)` is nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct Tournament {
    docs: usize,
    weights: Vec<f64>,
}

impl Tournament {
    pub fn new(docs: usize) -> Self {
        Self { docs, weights: vec![0.0; docs * docs] }
    }

    /// Builds from a full matrix; entries are netted so only the larger
    /// direction of each pair survives, and the diagonal is ignored.
    pub fn from_matrix(docs: usize, raw: &[f64]) -> Result<Self> {
        ensure_len(docs * docs, raw.len())?;
        let mut t = Self::new(docs);
        for p in 0..docs {
            for q in (p + 1)..docs {
                let (a, b) = (raw[p * docs + q], raw[q * docs + p]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::NonFinite("tournament weight"));
                }
                t.set_net(p, q, a - b);
            }
        }
        Ok(t)
    }

    /// Net weight for the pair: positive favours `p` before `q`.
    fn set_net(&mut self, p: usize, q: usize, net: f64) {
        let d = self.docs;
        self.weights[p * d + q] = net.max(0.0);
        self.weights[q * d + p] = (-net).max(0.0);
    }

    /// Tournament whose back-edge weight plus a constant equals the
    /// decoding objective of an order.
    pub fn from_costs(index: &PairIndex, costs: &[PairCosts]) -> Result<Self> {
        ensure_len(index.len(), costs.len())?;
        let mut t = Self::new(index.docs());
        for (c, &(p, q)) in costs.iter().zip(index.pairs()) {
            if !(c.minus.is_finite() && c.zero.is_finite() && c.plus.is_finite()) {
                return Err(Error::NonFinite("pair costs"));
            }
            t.set_net(p, q, c.after().1 - c.before().1);
        }
        Ok(t)
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    #[inline]
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[from * self.docs + to]
    }

    /// Total weight of edges pointing backwards with respect to `order`.
    pub fn back_weight(&self, order: &[usize]) -> f64 {
        let mut s = 0.0;
        for (i, &u) in order.iter().enumerate() {
            for &v in &order[i + 1..] {
                s += self.weight(v, u);
            }
        }
        s
    }

    pub fn forward_weight(&self, order: &[usize]) -> f64 {
        let mut s = 0.0;
        for (i, &u) in order.iter().enumerate() {
            for &v in &order[i + 1..] {
                s += self.weight(u, v);
            }
        }
        s
    }
}

/// The two-ended greedy vertex sequencing heuristic, on weighted edges.
///
/// Sinks are moved to the back and sources to the front; when neither
/// exists, the vertex with the largest weighted out-minus-in degree goes
/// to the front. Ties go to the lowest vertex index.
pub fn greedy_order(t: &Tournament) -> Vec<usize> {
    let d = t.docs();
    let mut alive = vec![true; d];
    let mut out_deg = vec![0usize; d];
    let mut in_deg = vec![0usize; d];
    let mut delta = vec![0.0f64; d];
    for u in 0..d {
        for v in 0..d {
            let w = t.weight(u, v);
            if w > 0.0 {
                out_deg[u] += 1;
                in_deg[v] += 1;
                delta[u] += w;
                delta[v] -= w;
            }
        }
    }
    let remove =
        |v: usize, alive: &mut Vec<bool>, out_deg: &mut Vec<usize>, in_deg: &mut Vec<usize>, delta: &mut Vec<f64>| {
            alive[v] = false;
            for u in 0..d {
                if !alive[u] {
                    continue;
                }
                let w_out = t.weight(v, u);
                if w_out > 0.0 {
                    in_deg[u] -= 1;
                    delta[u] += w_out;
                }
                let w_in = t.weight(u, v);
                if w_in > 0.0 {
                    out_deg[u] -= 1;
                    delta[u] -= w_in;
                }
            }
        };
    let mut front = Vec::with_capacity(d);
    let mut back = VecDeque::with_capacity(d);
    let mut remaining = d;
    while remaining > 0 {
        loop {
            let mut changed = false;
            while let Some(v) = (0..d).find(|&v| alive[v] && out_deg[v] == 0) {
                remove(v, &mut alive, &mut out_deg, &mut in_deg, &mut delta);
                back.push_front(v);
                remaining -= 1;
                changed = true;
            }
            while let Some(v) = (0..d).find(|&v| alive[v] && in_deg[v] == 0) {
                remove(v, &mut alive, &mut out_deg, &mut in_deg, &mut delta);
                front.push(v);
                remaining -= 1;
                changed = true;
            }
            if !changed {
                break;
            }
        }
        if remaining > 0 {
            let mut best: Option<usize> = None;
            for v in (0..d).filter(|&v| alive[v]) {
                if best.is_none_or(|b| delta[v] > delta[b]) {
                    best = Some(v);
                }
            }
            let v = best.expect("a live vertex remains");
            remove(v, &mut alive, &mut out_deg, &mut in_deg, &mut delta);
            front.push(v);
            remaining -= 1;
        }
    }
    front.extend(back);
    front
}

/// Improves an order by single-vertex moves until no move lowers the
/// back-edge weight.
pub fn improve_order(t: &Tournament, order: &mut [usize]) {
    let n = order.len();
    let max_rounds = 16 * n.max(1) * n.max(1);
    for _ in 0..max_rounds {
        let mut best = (0usize, 0usize, -1e-12);
        for i in 0..n {
            let v = order[i];
            let mut gain = 0.0;
            for (j, &u) in order.iter().enumerate().skip(i + 1) {
                // v jumps over u: v→u becomes backward, u→v forward
                gain += t.weight(u, v) - t.weight(v, u);
                if gain > best.2 + 1e-12 {
                    best = (i, j, gain);
                }
            }
            let mut gain = 0.0;
            for j in (0..i).rev() {
                let u = order[j];
                gain += t.weight(v, u) - t.weight(u, v);
                if gain > best.2 + 1e-12 {
                    best = (i, j, gain);
                }
            }
        }
        if best.2 <= 1e-12 {
            return;
        }
        let (i, j, _) = best;
        if i < j {
            order[i..=j].rotate_left(1);
        } else {
            order[j..=i].rotate_right(1);
        }
    }
}

/// Approximate minimum-weight feedback arc set order: greedy sequencing
/// followed by local moves.
pub fn fas_order(t: &Tournament) -> Vec<usize> {
    let mut order = greedy_order(t);
    improve_order(t, &mut order);
    order
}

/// Exact minimum by enumerating all orders; `D ≤ 8`. Ties go to the
/// lexicographically first order.
pub fn exact_fas_order(t: &Tournament) -> Result<Vec<usize>> {
    let d = t.docs();
    if d > EXACT_MAX_DOCS {
        return Err(Error::Unsupported(format!("exact feedback arc set for {d} > {EXACT_MAX_DOCS} documents")));
    }
    let mut perm: Vec<usize> = (0..d).collect();
    let mut best = (perm.clone(), t.back_weight(&perm));
    while next_permutation(&mut perm) {
        let w = t.back_weight(&perm);
        if w < best.1 {
            best = (perm.clone(), w);
        }
    }
    Ok(best.0)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// A decoded comparison vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Documents from most to least relevant (zero-based).
    pub order: Vec<usize>,
    /// One label in `{-1, 0, 1}` per pair.
    pub labels: Vec<i8>,
    pub objective: f64,
}

impl Decoded {
    /// JSON form with one-based document ids and `"p,q"` label keys.
    pub fn to_doc(&self, index: &PairIndex) -> DecodedDoc {
        DecodedDoc {
            order: self.order.iter().map(|d| d + 1).collect(),
            labels: index
                .pairs()
                .iter()
                .zip(&self.labels)
                .map(|(&(p, q), &l)| (format!("{},{}", p + 1, q + 1), l))
                .collect(),
            objective: self.objective,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedDoc {
    pub order: Vec<usize>,
    pub labels: BTreeMap<String, i8>,
    pub objective: f64,
}

/// Best labels consistent with `order`: per pair, the order-consistent sign
/// or `0`, whichever is cheaper, ties to `0`.
pub fn complete_order(index: &PairIndex, costs: &[PairCosts], order: &[usize]) -> Result<Decoded> {
    ensure_len(index.len(), costs.len())?;
    ensure_len(index.docs(), order.len())?;
    let mut pos = vec![usize::MAX; index.docs()];
    for (i, &v) in order.iter().enumerate() {
        if v >= index.docs() || pos[v] != usize::MAX {
            return Err(Error::InvalidParameter("order is not a permutation".into()));
        }
        pos[v] = i;
    }
    let mut labels = Vec::with_capacity(index.len());
    let mut objective = 0.0;
    for (c, &(p, q)) in costs.iter().zip(index.pairs()) {
        let (label, cost) = if pos[p] < pos[q] { c.before() } else { c.after() };
        labels.push(label);
        objective += cost;
    }
    Ok(Decoded { order: order.to_vec(), labels, objective })
}

/// Approximate `argmin` over `DAG(D)` of `Σ_pairs cost(label)`.
pub fn decode_costs(index: &PairIndex, costs: &[PairCosts]) -> Result<Decoded> {
    let t = Tournament::from_costs(index, costs)?;
    complete_order(index, costs, &fas_order(&t))
}

/// Exact `argmin` over `DAG(D)` by enumerating orders; `D ≤ 8`.
pub fn exact_decode_costs(index: &PairIndex, costs: &[PairCosts]) -> Result<Decoded> {
    let t = Tournament::from_costs(index, costs)?;
    complete_order(index, costs, &exact_fas_order(&t)?)
}

/// Per-pair score models. Pairs without training data are uninformed: all
/// their label costs are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingModel {
    #[serde(rename = "D")]
    index: PairIndex,
    /// Real-valued labels weighted by magnitude instead of `{-1, 0, 1}`.
    weighted: bool,
    pairs: Vec<Option<ScoreModel>>,
}

/// Fits one score model per pair from that pair's observations only.
pub fn fit_ranking(
    index: PairIndex,
    data: &[Option<TaskData>],
    kernel: &KernelSpec,
    lambdas: &[f64],
    weighted: bool,
) -> Result<RankingModel> {
    ensure_len(index.len(), data.len())?;
    ensure_len(index.len(), lambdas.len())?;
    for d in data.iter().flatten() {
        if !weighted && d.outputs.iter().any(|&y| y != -1.0 && y != 0.0 && y != 1.0) {
            return Err(Error::InvalidParameter("pairwise labels must be -1, 0 or 1".into()));
        }
    }
    let pairs = par::try_map_range(index.len(), |t| match &data[t] {
        Some(d) if !d.is_empty() => fit_scores(kernel, d, lambdas[t]).map(Some),
        _ => Ok(None),
    })?;
    Ok(RankingModel { index, weighted, pairs })
}

impl RankingModel {
    pub fn index(&self) -> &PairIndex {
        &self.index
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn pair_model(&self, t: usize) -> Option<&ScoreModel> {
        self.pairs[t].as_ref()
    }

    /// Replaces the model of a single pair, leaving the others untouched.
    pub fn refit_pair(&mut self, t: usize, data: Option<&TaskData>, kernel: &KernelSpec, lambda: f64) -> Result<()> {
        self.pairs[t] = match data {
            Some(d) => Some(fit_scores(kernel, d, lambda)?),
            None => None,
        };
        Ok(())
    }

    pub fn pair_costs(&self, x: &[f64]) -> Result<Vec<PairCosts>> {
        self.pairs
            .iter()
            .map(|m| match m {
                None => Ok(PairCosts::default()),
                Some(m) => {
                    let alpha = m.alpha_at(x)?;
                    Ok(label_costs(alpha.as_slice(), m.outputs(), self.weighted))
                }
            })
            .collect()
    }

    pub fn decode(&self, x: &[f64]) -> Result<Decoded> {
        decode_costs(&self.index, &self.pair_costs(x)?)
    }
}

/// `cost_v = Σ_i alpha_i 1{v ≠ y_i}`, or `Σ_i alpha_i |y_i| 1{v ≠ sign(y_i)}`
/// when weighted.
pub fn label_costs(alpha: &[f64], labels: &[f64], weighted: bool) -> PairCosts {
    let mut c = PairCosts::default();
    for (&a, &y) in alpha.iter().zip(labels) {
        let (w, s) = if weighted { (y.abs(), sign(y)) } else { (1.0, sign(y)) };
        let contrib = a * w;
        if s != -1 {
            c.minus += contrib;
        }
        if s != 0 {
            c.zero += contrib;
        }
        if s != 1 {
            c.plus += contrib;
        }
    }
    c
}

fn sign(y: f64) -> i8 {
    if y > 0.0 {
        1
    } else if y < 0.0 {
        -1
    } else {
        0
    }
}

/// Number of pairs where `c` and `y` differ.
pub fn loss_pairwise(c: &[i8], y: &[i8]) -> Result<usize> {
    ensure_len(c.len(), y.len())?;
    Ok(c.iter().zip(y).filter(|(a, b)| a != b).count())
}

/// `Σ |y_pq| 1{c_pq ≠ sign(y_pq)}`.
pub fn loss_weighted(c: &[i8], y: &[f64]) -> Result<f64> {
    ensure_len(c.len(), y.len())?;
    Ok(c.iter().zip(y).filter(|(&a, &b)| a != sign(b)).map(|(_, b)| b.abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_index_bijection() {
        let idx = PairIndex::new(5).unwrap();
        assert_eq!(idx.len(), 10);
        for (t, &(p, q)) in idx.pairs().iter().enumerate() {
            assert_eq!(idx.index(p, q).unwrap(), t);
        }
        assert!(idx.index(2, 2).is_err());
        assert!(idx.index(3, 1).is_err());
        assert!(idx.index(1, 5).is_err());
        assert!(PairIndex::new(1).is_err());
    }

    #[test]
    fn acyclicity() {
        let idx = PairIndex::new(3).unwrap();
        // 0>1, 1>2, 0>2 is transitive
        assert!(is_acyclic(&idx, &[1.0, 1.0, 1.0]));
        // 0>1, 1>2, 2>0
        assert!(!is_acyclic(&idx, &[1.0, -1.0, 1.0]));
        assert!(is_acyclic(&idx, &[1.0, 0.0, 1.0]));
    }

    #[test]
    fn single_example_costs() {
        let c = label_costs(&[0.5], &[1.0], false);
        assert_eq!(c, PairCosts { minus: 0.5, zero: 0.5, plus: 0.0 });
        let c = label_costs(&[0.2, 0.3], &[-1.0, -1.0], false);
        assert_eq!(c.minus, 0.0);
        assert_eq!(c.zero, 0.5);
        assert_eq!(c.plus, 0.5);
        let w = label_costs(&[0.5], &[-3.0], true);
        assert_eq!(w, PairCosts { minus: 0.0, zero: 1.5, plus: 1.5 });
    }

    #[test]
    fn three_cycle_has_one_back_edge() {
        let mut raw = vec![0.0; 9];
        raw[1] = 1.0; // 0→1
        raw[5] = 1.0; // 1→2
        raw[6] = 1.0; // 2→0
        let t = Tournament::from_matrix(3, &raw).unwrap();
        let order = fas_order(&t);
        assert_eq!(t.back_weight(&order), 1.0);
        assert_eq!(t.back_weight(&exact_fas_order(&t).unwrap()), 1.0);
    }

    #[test]
    fn transitive_tournament_recovers_order() {
        let truth = [3, 0, 4, 1, 2];
        let mut raw = vec![0.0; 25];
        for i in 0..5 {
            for j in (i + 1)..5 {
                raw[truth[i] * 5 + truth[j]] = 1.0 + (i + j) as f64;
            }
        }
        let t = Tournament::from_matrix(5, &raw).unwrap();
        assert_eq!(greedy_order(&t), truth.to_vec());
        assert_eq!(fas_order(&t), truth.to_vec());
        assert_eq!(t.back_weight(&truth), 0.0);
    }

    #[test]
    fn decode_small_cases() {
        let idx = PairIndex::new(2).unwrap();
        let d = decode_costs(&idx, &[PairCosts { minus: 1.0, zero: 0.7, plus: 0.1 }]).unwrap();
        assert_eq!(d.labels, vec![1]);
        assert_eq!(d.order, vec![0, 1]);
        let d = decode_costs(&idx, &[PairCosts { minus: 0.1, zero: 0.7, plus: 1.0 }]).unwrap();
        assert_eq!(d.labels, vec![-1]);
        assert_eq!(d.order, vec![1, 0]);
        let idx = PairIndex::new(4).unwrap();
        let d = decode_costs(&idx, &[PairCosts::default(); 6]).unwrap();
        assert_eq!(d.labels, vec![0; 6]);
        assert_eq!(d.objective, 0.0);
    }

    #[test]
    fn decoded_doc_keys() {
        let idx = PairIndex::new(3).unwrap();
        let d = Decoded { order: vec![2, 0, 1], labels: vec![1, -1, -1], objective: 0.25 };
        let doc = d.to_doc(&idx);
        assert_eq!(doc.order, vec![3, 1, 2]);
        assert_eq!(doc.labels["1,3"], -1);
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains(r#""1,2":1"#));
    }

    #[test]
    fn losses() {
        assert_eq!(loss_pairwise(&[1, 0, -1], &[1, 0, -1]).unwrap(), 0);
        assert_eq!(loss_pairwise(&[1, 1, 1], &[-1, 0, -1]).unwrap(), 3);
        assert_eq!(loss_weighted(&[-1], &[2.0]).unwrap(), 2.0);
        assert_eq!(loss_weighted(&[1, 0], &[2.0, 0.0]).unwrap(), 0.0);
        assert!(loss_pairwise(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn exact_rejects_large_d() {
        assert!(exact_fas_order(&Tournament::new(9)).is_err());
    }
}
