//! Depth-first enumeration of lattice paths under local constraints, with
//! pruning on closed edges. Work is split on the first two steps and the
//! per-depth tallies are merged, so results do not depend on scheduling.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{Pow, Zero};
use rayon::prelude::*;
use rustc_hash::FxHashSet;

use super::{ln_biguint, Tally};
use crate::environment::BondField;
use crate::error::{Error, Result};
use crate::lattice::{Direction, Site, SiteCodec};

/// Estimated node count above which exhaustive enumeration is refused.
pub const ENUMERATION_BUDGET: f64 = 2.0e10;

/// Paths longer than this track occupancy in a hash set instead of scanning.
const LINEAR_SCAN_MAX: usize = 48;

/// Every edge open.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllOpen;

impl BondField for AllOpen {
    fn is_open_raw(&self, _base: &[i64], _axis: usize) -> bool {
        true
    }
}

/// Local rule each new site S_k must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Simple random walk paths.
    Free,
    /// S_k != S_{k-2}.
    NonBacktracking,
    /// S_k not in {S_{k-2}, S_{k-4}}.
    No4,
    /// S_k differs from all earlier sites.
    SelfAvoiding,
}

impl Constraint {
    /// Crude node-count estimate used by the feasibility guard.
    pub fn estimate(self, d: usize, n: usize) -> f64 {
        let q = 2.0 * d as f64;
        match self {
            Constraint::Free => q.powi(n as i32),
            _ if n == 0 => 1.0,
            _ => q * (q - 1.0).powi(n as i32 - 1),
        }
    }
}

struct Dfs<'a, F: ?Sized> {
    field: &'a F,
    codec: &'a SiteCodec,
    constraint: Constraint,
    n_max: usize,
    dirs: Vec<Direction>,
    coords: Vec<i64>,
    keys: Vec<u128>,
    steps: Vec<Direction>,
    occupied: Option<FxHashSet<u128>>,
}

impl<'a, F: BondField + ?Sized> Dfs<'a, F> {
    fn new(
        field: &'a F,
        codec: &'a SiteCodec,
        start: &Site,
        n_max: usize,
        constraint: Constraint,
    ) -> Self {
        let key = codec.encode(start.coords());
        let occupied = (constraint == Constraint::SelfAvoiding && n_max > LINEAR_SCAN_MAX)
            .then(|| std::iter::once(key).collect());
        Dfs {
            field,
            codec,
            constraint,
            n_max,
            dirs: crate::lattice::directions(start.dim()).collect(),
            coords: start.coords().to_vec(),
            keys: vec![key],
            steps: Vec::with_capacity(n_max),
            occupied,
        }
    }

    #[inline]
    fn allowed(&self, next: u128) -> bool {
        let k = self.keys.len();
        match self.constraint {
            Constraint::Free => true,
            Constraint::NonBacktracking => k < 2 || next != self.keys[k - 2],
            Constraint::No4 => {
                (k < 2 || next != self.keys[k - 2]) && (k < 4 || next != self.keys[k - 4])
            }
            Constraint::SelfAvoiding => match &self.occupied {
                Some(set) => !set.contains(&next),
                None => !self.keys.contains(&next),
            },
        }
    }

    #[inline]
    fn open(&mut self, dir: Direction) -> bool {
        if dir.positive {
            self.field.is_open_raw(&self.coords, dir.axis)
        } else {
            self.coords[dir.axis] -= 1;
            let o = self.field.is_open_raw(&self.coords, dir.axis);
            self.coords[dir.axis] += 1;
            o
        }
    }

    /// Try to extend by `dir`; returns whether the step was taken.
    #[inline]
    fn try_push(&mut self, dir: Direction) -> bool {
        let next = self.codec.step(*self.keys.last().expect("nonempty"), dir);
        if !self.allowed(next) || !self.open(dir) {
            return false;
        }
        self.coords[dir.axis] += dir.sign();
        self.keys.push(next);
        self.steps.push(dir);
        if let Some(set) = &mut self.occupied {
            set.insert(next);
        }
        true
    }

    fn pop(&mut self) {
        let dir = self.steps.pop().expect("nonempty");
        let key = self.keys.pop().expect("nonempty");
        self.coords[dir.axis] -= dir.sign();
        if let Some(set) = &mut self.occupied {
            set.remove(&key);
        }
    }

    fn depth(&self) -> usize {
        self.steps.len()
    }

    /// Tally every extension of the current prefix, one entry per depth.
    fn count(&mut self, tallies: &mut [Tally]) {
        let depth = self.depth();
        tallies[depth].add(1);
        if depth == self.n_max {
            return;
        }
        let last = depth + 1 == self.n_max;
        let mut leaves = 0u64;
        for i in 0..self.dirs.len() {
            let dir = self.dirs[i];
            if last {
                let next = self.codec.step(*self.keys.last().expect("nonempty"), dir);
                if self.allowed(next) && self.open(dir) {
                    leaves += 1;
                }
            } else if self.try_push(dir) {
                self.count(tallies);
                self.pop();
            }
        }
        if last {
            tallies[self.n_max].add(leaves);
        }
    }

    fn visit(&mut self, f: &mut dyn FnMut(&[Direction])) {
        if self.depth() == self.n_max {
            f(&self.steps);
            return;
        }
        for i in 0..self.dirs.len() {
            if self.try_push(self.dirs[i]) {
                self.visit(f);
                self.pop();
            }
        }
    }

    fn prefixes(&mut self, len: usize, out: &mut Vec<Vec<Direction>>) {
        if self.depth() == len {
            out.push(self.steps.clone());
            return;
        }
        for i in 0..self.dirs.len() {
            if self.try_push(self.dirs[i]) {
                self.prefixes(len, out);
                self.pop();
            }
        }
    }
}

/// Number of admissible paths of each length `0..=n_max` from `start`,
/// restricted to open edges of `field`.
pub fn count_walks<F: BondField + ?Sized>(
    field: &F,
    start: &Site,
    n_max: usize,
    constraint: Constraint,
) -> Result<Vec<BigUint>> {
    let codec = SiteCodec::for_ball(start, n_max as u64)?;
    let mut root = Dfs::new(field, &codec, start, n_max, constraint);
    let split = n_max.min(2);
    if n_max < 6 {
        let mut tallies = vec![Tally::default(); n_max + 1];
        root.count(&mut tallies);
        return Ok(tallies.iter().map(Tally::value).collect());
    }
    // depths below the split are counted from the prefixes themselves
    let mut heads = Vec::new();
    root.prefixes(1, &mut heads);
    let mut prefixes = Vec::new();
    root.prefixes(split, &mut prefixes);
    let partials: Vec<Vec<Tally>> = prefixes
        .par_iter()
        .map(|prefix| {
            let mut dfs = Dfs::new(field, &codec, start, n_max, constraint);
            for &dir in prefix {
                let ok = dfs.try_push(dir);
                debug_assert!(ok);
            }
            let mut tallies = vec![Tally::default(); n_max + 1];
            dfs.count(&mut tallies);
            tallies
        })
        .collect();
    let mut total = vec![Tally::default(); n_max + 1];
    total[0].add(1);
    total[1].add(heads.len() as u64);
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total.iter().map(Tally::value).collect())
}

/// Calls `f` with the step sequence of every admissible length-`n` path,
/// in the fixed neighbor order.
pub fn for_each_walk<F: BondField + ?Sized>(
    field: &F,
    start: &Site,
    n: usize,
    constraint: Constraint,
    mut f: impl FnMut(&[Direction]),
) -> Result<()> {
    let codec = SiteCodec::for_ball(start, n as u64)?;
    let mut dfs = Dfs::new(field, &codec, start, n, constraint);
    dfs.visit(&mut f);
    Ok(())
}

fn guard(d: usize, n: usize, constraint: Constraint) -> Result<()> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let estimate = constraint.estimate(d, n);
    if estimate > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded { estimate, limit: ENUMERATION_BUDGET });
    }
    Ok(())
}

/// |S_N|: self-avoiding N-step paths from the origin.
pub fn count_saw(d: usize, n: usize) -> Result<BigUint> {
    guard(d, n, Constraint::SelfAvoiding)?;
    Ok(count_walks(&AllOpen, &Site::origin(d), n, Constraint::SelfAvoiding)?.swap_remove(n))
}

/// |S⁴_N|: N-step paths with S_n not in {S_{n-2}, S_{n-4}}.
pub fn count_saw_no4(d: usize, n: usize) -> Result<BigUint> {
    guard(d, n, Constraint::No4)?;
    Ok(count_walks(&AllOpen, &Site::origin(d), n, Constraint::No4)?.swap_remove(n))
}

/// Z_{N,start}: open self-avoiding N-step paths from `start`.
pub fn count_open_saw<F: BondField + ?Sized>(field: &F, n: usize, start: &Site) -> Result<BigUint> {
    Ok(count_walks(field, start, n, Constraint::SelfAvoiding)?.swap_remove(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRow {
    pub n: usize,
    pub z: BigUint,
    /// Z_N^{1/N}
    pub root: f64,
}

/// Z_N and Z_N^{1/N} for N = 1..=n_max from a single enumeration.
pub fn growth_sequence<F: BondField + ?Sized>(
    field: &F,
    n_max: usize,
    start: &Site,
) -> Result<Vec<GrowthRow>> {
    let counts = count_walks(field, start, n_max, Constraint::SelfAvoiding)?;
    Ok(counts
        .into_iter()
        .enumerate()
        .skip(1)
        .map(|(n, z)| {
            let root = if z.is_zero() { 0.0 } else { (ln_biguint(&z) / n as f64).exp() };
            GrowthRow { n, z, root }
        })
        .collect())
}

/// W_N = Z_N / (p^N |S_N|) from the origin, evaluated in the log domain.
pub fn normalized_partition<F: BondField + ?Sized>(
    field: &F,
    d: usize,
    n: usize,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let z = count_open_saw(field, n, &Site::origin(d))?;
    if z.is_zero() {
        return Ok(0.0);
    }
    let saw = count_saw(d, n)?;
    Ok((ln_biguint(&z) - n as f64 * p.ln() - ln_biguint(&saw)).exp())
}

/// Exact W_N given Z_N, p and |S_N|.
pub fn normalized_partition_exact(
    z: &BigUint,
    n: usize,
    p: &BigRational,
    saw: &BigUint,
) -> Result<BigRational> {
    if p.is_zero() {
        return Err(Error::InvalidProbability(0.0));
    }
    let denom = Pow::pow(p.clone(), n as u32) * BigRational::from_integer(BigInt::from(saw.clone()));
    Ok(BigRational::from_integer(BigInt::from(z.clone())) / denom)
}
