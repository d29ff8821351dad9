//! Bernoulli bond percolation fields.
//!
//! [`Environment`] is procedural: the state of an edge is a pure function of
//! `(p, seed, edge)`, computed by hashing the edge's byte encoding and
//! thresholding a 53-bit uniform. One uniform per edge means that for a fixed
//! seed the open set grows monotonically with `p`.
//!
//! [`FiniteEnvironment`] assigns explicit states to a finite edge list and is
//! what the exhaustive oracles iterate over.

use std::sync::Arc;

use num_traits::One;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::lattice::{Edge, Site, SiteCodec};

/// Anything that can answer "is this edge open".
pub trait BondField: Sync {
    /// State of the edge `{base, base + unit(axis)}`.
    fn is_open_raw(&self, base: &[i64], axis: usize) -> bool;

    fn is_open(&self, e: &Edge) -> bool {
        self.is_open_raw(e.base.coords(), e.axis)
    }
}

impl<B: BondField + ?Sized> BondField for &B {
    fn is_open_raw(&self, base: &[i64], axis: usize) -> bool {
        (**self).is_open_raw(base, axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeState {
    Open,
    Closed,
}

/// Constants of the edge hash. [`HashRecipe::default`] is the published one;
/// other values exist only so that negative-control checks can perturb it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashRecipe {
    pub offset_basis: u64,
    pub prime: u64,
}

impl Default for HashRecipe {
    fn default() -> Self {
        HashRecipe { offset_basis: 14695981039346656037, prime: 1099511628211 }
    }
}

impl HashRecipe {
    #[inline]
    fn feed_uleb(&self, mut h: u64, mut v: u64) -> u64 {
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            let b = if v == 0 { byte } else { byte | 0x80 };
            h ^= b as u64;
            h = h.wrapping_mul(self.prime);
            if v == 0 {
                return h;
            }
        }
    }

    /// FNV-1a-64 over the edge byte encoding, streamed without allocating.
    #[inline]
    pub fn edge_hash(&self, base: &[i64], axis: usize) -> u64 {
        let mut h = self.feed_uleb(self.offset_basis, base.len() as u64);
        for &c in base {
            h = self.feed_uleb(h, crate::lattice::zigzag(c));
        }
        self.feed_uleb(h, axis as u64)
    }
}

/// Single-shot SplitMix64 finalizer (no golden-ratio increment).
#[inline]
pub fn splitmix_finalize(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58476D1CE4E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// `floor(p * 2^53)`; an edge is open iff its 53-bit uniform is below this.
pub fn open_threshold(p: f64) -> u64 {
    (p * (1u64 << 53) as f64).floor() as u64
}

/// Seed-deterministic Bernoulli(p) bond field on all of Z^d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    p: f64,
    seed: u64,
    threshold: u64,
    recipe: HashRecipe,
}

impl Environment {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        Self::with_recipe(p, seed, HashRecipe::default())
    }

    pub fn with_recipe(p: f64, seed: u64, recipe: HashRecipe) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(Environment { p, seed, threshold: open_threshold(p), recipe })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same seed, different density. Open sets are nested in `p`.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::with_recipe(p, self.seed, self.recipe)
    }

    /// The edge's canonical 53-bit uniform value.
    #[inline]
    pub fn uniform_bits(&self, base: &[i64], axis: usize) -> u64 {
        splitmix_finalize(self.recipe.edge_hash(base, axis) ^ self.seed) >> 11
    }

    pub fn uniform(&self, e: &Edge) -> f64 {
        self.uniform_bits(e.base.coords(), e.axis) as f64 / (1u64 << 53) as f64
    }

    pub fn edge_state(&self, e: &Edge) -> EdgeState {
        if self.is_open(e) {
            EdgeState::Open
        } else {
            EdgeState::Closed
        }
    }
}

impl BondField for Environment {
    #[inline]
    fn is_open_raw(&self, base: &[i64], axis: usize) -> bool {
        self.uniform_bits(base, axis) < self.threshold
    }
}

/// Lookup table from edges to positions in an ordered edge list.
#[derive(Debug)]
pub struct EdgeIndex {
    edges: Vec<Edge>,
    codec: SiteCodec,
    radius: i64,
    lookup: FxHashMap<(u128, usize), usize>,
}

impl EdgeIndex {
    pub fn new(edges: Vec<Edge>) -> Result<Self> {
        let d = edges.first().map(|e| e.dim()).unwrap_or(2);
        if let Some(bad) = edges.iter().find(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch(d, bad.dim()));
        }
        let radius = edges
            .iter()
            .flat_map(|e| e.base.coords().iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
            + 1;
        let codec = SiteCodec::for_ball(&Site::origin(d.max(2)), radius as u64)?;
        let mut lookup = FxHashMap::default();
        for (i, e) in edges.iter().enumerate() {
            lookup.insert((codec.encode(e.base.coords()), e.axis), i);
        }
        Ok(EdgeIndex { edges, codec, radius, lookup })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn position_raw(&self, base: &[i64], axis: usize) -> Option<usize> {
        if base.iter().any(|c| c.abs() > self.radius) {
            return None;
        }
        self.lookup.get(&(self.codec.encode(base), axis)).copied()
    }

    pub fn position(&self, e: &Edge) -> Option<usize> {
        self.position_raw(e.base.coords(), e.axis)
    }
}

/// Explicit open/closed states on a finite edge list. Edges outside the list
/// are closed.
#[derive(Debug, Clone)]
pub struct FiniteEnvironment {
    index: Arc<EdgeIndex>,
    states: Vec<u64>,
}

impl FiniteEnvironment {
    pub fn new(index: Arc<EdgeIndex>, states: &[bool]) -> Result<Self> {
        if states.len() != index.len() {
            return Err(Error::OutOfRange {
                name: "states",
                detail: format!("{} states for {} edges", states.len(), index.len()),
            });
        }
        let mut env = Self::all_closed(index);
        for (i, &s) in states.iter().enumerate() {
            env.set(i, s);
        }
        Ok(env)
    }

    pub fn all_closed(index: Arc<EdgeIndex>) -> Self {
        let words = index.len().div_ceil(64);
        FiniteEnvironment { index, states: vec![0; words] }
    }

    pub fn all_open(index: Arc<EdgeIndex>) -> Self {
        let mut env = Self::all_closed(index);
        for i in 0..env.len() {
            env.set(i, true);
        }
        env
    }

    /// States from the low bits of `mask` (bit `i` is edge `i`).
    pub fn from_mask(index: Arc<EdgeIndex>, mask: u64) -> Self {
        let mut env = Self::all_closed(index);
        if !env.states.is_empty() {
            let keep = if env.len() >= 64 { u64::MAX } else { (1u64 << env.len()) - 1 };
            env.states[0] = mask & keep;
        }
        env
    }

    pub fn index(&self) -> &Arc<EdgeIndex> {
        &self.index
    }

    pub fn edge_set(&self) -> &[Edge] {
        self.index.edges()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.states[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, open: bool) {
        if open {
            self.states[i / 64] |= 1 << (i % 64);
        } else {
            self.states[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn states(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    pub fn open_count(&self) -> usize {
        self.states.iter().map(|w| w.count_ones() as usize).sum()
    }
}

impl BondField for FiniteEnvironment {
    fn is_open_raw(&self, base: &[i64], axis: usize) -> bool {
        self.index.position_raw(base, axis).is_some_and(|i| self.get(i))
    }
}

/// Largest edge set `enumerate_finite` accepts.
pub const EXHAUSTIVE_EDGE_LIMIT: usize = 24;

/// Iterator over all `2^m` assignments of an edge set with their Bernoulli
/// weights `p^open (1-p)^closed`. Works for any probability type (`f64`,
/// exact rationals).
pub struct FiniteEnumeration<T> {
    index: Arc<EdgeIndex>,
    next: u64,
    end: u64,
    open_pow: Vec<T>,
    closed_pow: Vec<T>,
}

impl<T: Clone + std::ops::Mul<Output = T>> Iterator for FiniteEnumeration<T> {
    type Item = (FiniteEnvironment, T);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let mask = self.next;
        self.next += 1;
        let m = self.index.len();
        let k = mask.count_ones() as usize;
        let w = self.open_pow[k].clone() * self.closed_pow[m - k].clone();
        Some((FiniteEnvironment::from_mask(self.index.clone(), mask), w))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

pub fn enumerate_finite<T>(edge_set: Vec<Edge>, p: T) -> Result<FiniteEnumeration<T>>
where
    T: Clone + One + std::ops::Sub<Output = T> + std::ops::Mul<Output = T>,
{
    let index = Arc::new(EdgeIndex::new(edge_set)?);
    enumerate_index(index, p)
}

pub fn enumerate_index<T>(index: Arc<EdgeIndex>, p: T) -> Result<FiniteEnumeration<T>>
where
    T: Clone + One + std::ops::Sub<Output = T> + std::ops::Mul<Output = T>,
{
    let m = index.len();
    if m > EXHAUSTIVE_EDGE_LIMIT {
        return Err(Error::TooManyEdges { size: m, limit: EXHAUSTIVE_EDGE_LIMIT });
    }
    let q = T::one() - p.clone();
    let mut open_pow = vec![T::one()];
    let mut closed_pow = vec![T::one()];
    for i in 0..m {
        open_pow.push(open_pow[i].clone() * p.clone());
        closed_pow.push(closed_pow[i].clone() * q.clone());
    }
    Ok(FiniteEnumeration { index, next: 0, end: 1u64 << m, open_pow, closed_pow })
}

/// Sites within graph distance `radius` of `center`, in lexicographic order.
pub fn l1_ball(center: &Site, radius: u64) -> Vec<Site> {
    fn rec(prefix: &mut Vec<i64>, d: usize, budget: i64, out: &mut Vec<Vec<i64>>) {
        if prefix.len() == d {
            out.push(prefix.clone());
            return;
        }
        for c in -budget..=budget {
            prefix.push(c);
            rec(prefix, d, budget - c.abs(), out);
            prefix.pop();
        }
    }
    let mut offsets = Vec::new();
    rec(&mut Vec::new(), center.dim(), radius as i64, &mut offsets);
    offsets
        .into_iter()
        .map(|o| {
            let coords = o.iter().zip(center.coords()).map(|(a, b)| a + b).collect();
            Site::new(coords).expect("dimension preserved")
        })
        .collect()
}

/// Every edge with both endpoints within graph distance `n` of `start`; a
/// length-`n` path from `start` can only use these.
pub fn relevant_edges(n: u64, start: &Site) -> Vec<Edge> {
    let mut edges = Vec::new();
    for s in l1_ball(start, n) {
        for axis in 0..s.dim() {
            let t = s.step(crate::lattice::Direction::new(axis, true));
            if crate::lattice::l1(t.coords(), start.coords()) <= n {
                edges.push(Edge { base: s.clone(), axis });
            }
        }
    }
    edges.sort();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{canonical_edge, neighbors};
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::Zero;

    fn edge(base: &[i64], axis: usize) -> Edge {
        Edge { base: Site::new(base.to_vec()).unwrap(), axis }
    }

    #[test]
    fn regression_vectors() {
        // Computed once from an independent re-implementation of the recipe.
        let cases: [(&[i64], usize, u64, u64, u64); 5] = [
            (&[0, 0], 0, 1, 0x8d1ace904a398d17, 2768654964659479),
            (&[0, 0], 1, 1, 0x8d1acd904a398b64, 1930587344188080),
            (&[3, -2], 0, 42, 0x7bcb3e90406c72ea, 809217813119583),
            (&[0, 0, 0], 2, 0, 0xf16b3103a27b504c, 5488270684356892),
            (&[-1, 5, 7, 0], 3, 123456789, 0x4cb5723617394fab, 1723423690404050),
        ];
        let recipe = HashRecipe::default();
        for (base, axis, seed, fnv, u53) in cases {
            assert_eq!(recipe.edge_hash(base, axis), fnv);
            let env = Environment::new(0.5, seed).unwrap();
            assert_eq!(env.uniform_bits(base, axis), u53);
        }
        let env = Environment::new(0.5, 1).unwrap();
        assert_eq!(env.edge_state(&edge(&[0, 0], 0)), EdgeState::Open);
        let env = Environment::new(0.5, 0).unwrap();
        assert_eq!(env.edge_state(&edge(&[0, 0, 0], 2)), EdgeState::Closed);
    }

    #[test]
    fn extreme_p() {
        let box_edges = relevant_edges(4, &Site::origin(3));
        for seed in [0u64, 1, 99, u64::MAX] {
            let one = Environment::new(1.0, seed).unwrap();
            let zero = Environment::new(0.0, seed).unwrap();
            for e in &box_edges {
                assert_eq!(one.edge_state(e), EdgeState::Open);
                assert_eq!(zero.edge_state(e), EdgeState::Closed);
            }
        }
        assert!(Environment::new(1.5, 0).is_err());
        assert!(Environment::new(-0.1, 0).is_err());
    }

    #[test]
    fn determinism_radius5() {
        let edges = relevant_edges(5, &Site::origin(3));
        let a = Environment::new(0.37, 2024).unwrap();
        let b = Environment::new(0.37, 2024).unwrap();
        for e in &edges {
            assert_eq!(a.edge_state(e), b.edge_state(e));
            assert_eq!(a.edge_state(e), a.edge_state(e));
        }
    }

    #[test]
    fn monotone_coupling() {
        let edges = relevant_edges(6, &Site::origin(2));
        let ps = [0.0, 0.1, 0.25, 0.5, 0.5000001, 0.9, 1.0];
        for seed in 0..5u64 {
            for w in ps.windows(2) {
                let lo = Environment::new(w[0], seed).unwrap();
                let hi = lo.with_p(w[1]).unwrap();
                for e in &edges {
                    assert!(!lo.is_open(e) || hi.is_open(e));
                }
            }
        }
    }

    #[test]
    fn statistical_quality_d3() {
        // every edge of the L∞ box [-10, 10]^3
        let mut edges = Vec::new();
        for x in -10..=10i64 {
            for y in -10..=10i64 {
                for z in -10..=10i64 {
                    for axis in 0..3 {
                        let base = [x, y, z];
                        if base[axis] < 10 {
                            edges.push(edge(&base, axis));
                        }
                    }
                }
            }
        }
        assert_eq!(edges.len(), 3 * 21 * 21 * 20);
        let env = Environment::new(0.5, 7).unwrap();
        let open: Vec<bool> = edges.iter().map(|e| env.is_open(e)).collect();
        let n = open.len() as f64;
        let k = open.iter().filter(|&&o| o).count() as f64;
        let sd = (n * 0.25).sqrt();
        assert!((k - n / 2.0).abs() < 4.0 * sd, "open {k} of {n}");

        // correlation over pairs of edges sharing the lower endpoint's site
        let index = EdgeIndex::new(edges.clone()).unwrap();
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, e) in edges.iter().enumerate() {
            let (_, top) = e.endpoints();
            for nb in neighbors(&top) {
                let f = canonical_edge(&top, &nb).unwrap();
                if let Some(j) = index.position(&f) {
                    if j > i {
                        let (x, y) = (open[i] as u8 as f64, open[j] as u8 as f64);
                        sx += x;
                        sy += y;
                        sxy += x * y;
                        sxx += x * x;
                        syy += y * y;
                        m += 1.0;
                    }
                }
            }
        }
        let cov = sxy / m - sx / m * sy / m;
        let corr = cov / ((sxx / m - (sx / m).powi(2)) * (syy / m - (sy / m).powi(2))).sqrt();
        assert!(corr.abs() < 0.05, "corr {corr} over {m} pairs");
    }

    #[test]
    fn enumerate_small() {
        let e1 = vec![edge(&[0, 0], 0)];
        let w: Vec<f64> = enumerate_finite(e1, 0.3).unwrap().map(|(_, w)| w).collect();
        assert_eq!(w.len(), 2);
        assert!((w[0] - 0.7).abs() < 1e-15 && (w[1] - 0.3).abs() < 1e-15);

        let e2 = vec![edge(&[0, 0], 0), edge(&[0, 0], 1)];
        let all: Vec<(FiniteEnvironment, f64)> = enumerate_finite(e2, 0.5).unwrap().collect();
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|(_, w)| (w - 0.25).abs() < 1e-15));

        let e3 = vec![edge(&[0, 0], 0), edge(&[0, 0], 1), edge(&[1, 0], 0)];
        let total: f64 = enumerate_finite(e3.clone(), 0.25).unwrap().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let p = BigRational::new(BigInt::from(1), BigInt::from(4));
        let exact = enumerate_finite(e3, p)
            .unwrap()
            .fold(BigRational::zero(), |acc, (_, w)| acc + w);
        assert_eq!(exact, BigRational::one());
    }

    #[test]
    fn enumerate_guard() {
        let edges = relevant_edges(3, &Site::origin(2));
        assert!(edges.len() > EXHAUSTIVE_EDGE_LIMIT);
        assert!(matches!(enumerate_finite(edges, 0.5), Err(Error::TooManyEdges { .. })));
    }

    #[test]
    fn finite_environment_lookup() {
        let edges = relevant_edges(2, &Site::origin(2));
        let index = Arc::new(EdgeIndex::new(edges.clone()).unwrap());
        let env = FiniteEnvironment::from_mask(index.clone(), 0b101);
        assert!(env.is_open(&edges[0]));
        assert!(!env.is_open(&edges[1]));
        assert!(env.is_open(&edges[2]));
        assert!(!env.is_open(&edge(&[7, 7], 0)));
        assert_eq!(env.open_count(), 2);
        let mut env2 = FiniteEnvironment::new(index, &env.states()).unwrap();
        env2.set(1, true);
        assert!(env2.is_open(&edges[1]));
    }

    fn brute_relevant(n: i64, d: usize) -> Vec<Edge> {
        // every edge of the L∞ box [-n-1, n+1]^d, filtered by endpoint distance
        let mut pts = vec![vec![]];
        for _ in 0..d {
            pts = pts
                .into_iter()
                .flat_map(|p: Vec<i64>| {
                    (-n - 1..=n + 1).map(move |c| {
                        let mut q = p.clone();
                        q.push(c);
                        q
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for p in pts {
            for axis in 0..d {
                let mut q = p.clone();
                q[axis] += 1;
                let dp: i64 = p.iter().map(|c| c.abs()).sum();
                let dq: i64 = q.iter().map(|c| c.abs()).sum();
                if dp <= n && dq <= n {
                    out.push(edge(&p, axis));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn relevant_edges_examples() {
        let o = Site::origin(2);
        let r1 = relevant_edges(1, &o);
        assert_eq!(r1.len(), 4);
        // radius 2 in d=2: 4 origin edges + 3 outward edges from each of the 4 neighbors
        assert_eq!(relevant_edges(2, &o).len(), 16);
        for (n, d) in [(1, 2), (2, 2), (3, 2), (2, 3), (3, 3), (2, 4)] {
            assert_eq!(relevant_edges(n as u64, &Site::origin(d)), brute_relevant(n, d));
        }
        // translated start
        let s = Site::new(vec![5, -2]).unwrap();
        assert_eq!(relevant_edges(2, &s).len(), 16);
    }
}
