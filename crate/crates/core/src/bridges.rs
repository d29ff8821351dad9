//! Short open detours off a spine ("bridges") and the injection that turns
//! a choice of bridges into distinct open self-avoiding paths.
//!
//! Index conventions, for a spine S_0..S_N with increments X_n = S_n - S_{n-1}:
//!
//! * type a over n: the bend S_{n-1}, S_n, S_{n+1} is rerouted through
//!   S_{n-1} + X_{n+1} (length kept);
//! * type b at n in U: the chord (S_{n-3}, S_n) replaces S_{n-3}..S_n (length -2);
//! * type c over the edge (S_n, S_{n+1}) in direction e: S_n, S_n+e, S_{n+1}+e,
//!   S_{n+1} replaces that edge (length +2).

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::environment::BondField;
use crate::error::{Error, Result};
use crate::lattice::{canonical_edge, directions, Direction, Edge, Site};
use crate::paths::{Path, PathCensus, SiteIndex, TConvention};
use crate::sizebias::SpinedEnvironment;

/// Bridge index with its direction: X_{n+1} for type a, e for type c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Witness {
    pub n: usize,
    pub dir: Direction,
}

#[derive(Serialize, Deserialize)]
struct WitnessJson {
    n: usize,
    dir: i64,
}

impl Serialize for Witness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WitnessJson { n: self.n, dir: self.dir.code() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Witness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = WitnessJson::deserialize(d)?;
        let axis = raw.dir.unsigned_abs() as usize;
        if axis == 0 {
            return Err(serde::de::Error::custom("direction code 0"));
        }
        Ok(Witness { n: raw.n, dir: Direction::new(axis - 1, raw.dir > 0) })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeSets {
    #[serde(rename = "A0")]
    pub a0: Vec<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Witness>,
    #[serde(rename = "B")]
    pub b: Vec<usize>,
    #[serde(rename = "C0")]
    pub c0: Vec<usize>,
    #[serde(rename = "C")]
    pub c: Vec<Witness>,
}

impl BridgeSets {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.a.len(), self.b.len(), self.c.len())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge json")
    }
}

/// Per-spine quantities shared by the detector and the bridge predicates.
struct Spine<'a, B: ?Sized> {
    env: &'a B,
    path: &'a Path,
    sites: Vec<Site>,
    census: PathCensus,
}

impl<'a, B: BondField + ?Sized> Spine<'a, B> {
    fn new(env: &'a B, path: &'a Path) -> Result<Self> {
        if !path.is_self_avoiding() {
            return Err(Error::NotSelfAvoiding);
        }
        let index = SiteIndex::new(path)?;
        let census = PathCensus::from_index(path, &index, TConvention::Backward);
        Ok(Spine { env, path, sites: path.sites(), census })
    }

    fn n(&self) -> usize {
        self.path.len()
    }

    fn open(&self, a: &Site, b: &Site) -> bool {
        self.env.is_open(&canonical_edge(a, b).expect("adjacent"))
    }

    /// X_k when 1 <= k <= N.
    fn x(&self, k: usize) -> Option<Direction> {
        (k >= 1 && k <= self.n()).then(|| self.path.increment(k))
    }

    fn u_free(&self, lo: usize, hi: usize) -> bool {
        (lo..=hi).all(|k| !self.census.in_u(k))
    }

    /// χ_n: the length-two bridge over the bend at n is open. There is no
    /// such bridge where the spine runs straight.
    fn chi(&self, n: usize) -> bool {
        if n < 1 || n + 1 > self.n() {
            return false;
        }
        let (xn, xn1) = (self.path.increment(n), self.path.increment(n + 1));
        if xn == xn1 {
            return false;
        }
        let free = self.sites[n - 1].step(xn1);
        self.open(&self.sites[n - 1], &free) && self.open(&self.sites[n + 1], &free)
    }

    fn in_a0(&self, n: usize) -> bool {
        n >= 1
            && n < self.n()
            && self.census.in_v2(n - 1)
            && self.path.increment(n + 1) != self.path.increment(n)
            && self.u_free(n, n + 3)
    }

    fn in_b(&self, n: usize) -> bool {
        if !self.census.in_u(n) || !self.open(&self.sites[n], &self.sites[n - 3]) {
            return false;
        }
        // the guard edge exists only when n-2 is itself a U-turn (so n >= 5)
        !(n >= 5 && self.census.in_u(n - 2) && self.open(&self.sites[n - 2], &self.sites[n - 5]))
    }

    fn in_c0(&self, n: usize) -> bool {
        n < self.n() && self.census.in_v2(n) && self.census.in_v2(n + 1) && self.u_free(n + 1, n + 3)
    }

    /// ξ_n: lowest-code direction e of an open type-c bridge over (S_n, S_{n+1}).
    fn xi(&self, n: usize) -> Option<Direction> {
        if n >= self.n() {
            return None;
        }
        let x = |k: usize| self.x(k);
        let banned = [
            n.checked_sub(1).and_then(x).map(Direction::negate),
            x(n).map(Direction::negate),
            x(n + 1),
            x(n + 1).map(Direction::negate),
            x(n + 2),
            x(n + 3),
        ];
        let mut dirs: Vec<Direction> = directions(self.path.dim()).collect();
        dirs.sort_by_key(|d| d.code());
        let (a, b) = (&self.sites[n], &self.sites[n + 1]);
        dirs.into_iter().filter(|e| !banned.contains(&Some(*e))).find(|&e| {
            let (ae, be) = (a.step(e), b.step(e));
            self.open(a, &ae) && self.open(&ae, &be) && self.open(&be, b)
        })
    }
}

/// All bridge sets of `spine` in `env`. Bridge edges are read from `env`
/// directly; they are off the spine, where ω and ω̃ agree.
pub fn detect_bridges<B: BondField + ?Sized>(env: &B, spine: &Path) -> Result<BridgeSets> {
    let sp = Spine::new(env, spine)?;
    let n = sp.n();
    let a0: Vec<usize> = (1..n).filter(|&k| sp.in_a0(k)).collect();
    let chi: Vec<bool> = (0..=n + 1).map(|k| sp.chi(k)).collect();
    let a = a0
        .iter()
        .copied()
        .filter(|&k| chi[k] && !(k >= 1 && sp.in_a0(k - 1) && chi[k - 1]))
        .map(|k| Witness { n: k, dir: spine.increment(k + 1) })
        .collect();
    let b = (3..=n).filter(|&k| sp.in_b(k)).collect();
    let c0: Vec<usize> = (0..n).filter(|&k| sp.in_c0(k)).collect();
    let xi: Vec<Option<Direction>> = (0..n).map(|k| sp.xi(k)).collect();
    let c = c0
        .iter()
        .copied()
        .filter_map(|k| {
            let e = xi[k]?;
            let prev = k >= 1 && xi[k - 1].is_some();
            (!prev && !chi[k] && !chi[k + 1]).then_some(Witness { n: k, dir: e })
        })
        .collect();
    Ok(BridgeSets { a0, a, b, c0, c })
}

/// Choice of bridges to use simultaneously; indices refer to a [`BridgeSets`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub gamma: Vec<usize>,
}

fn sorted_subset(name: &str, chosen: &[usize], pool: &[usize]) -> Result<()> {
    if chosen.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InconsistentSelection(format!("{name} is not strictly increasing")));
    }
    if let Some(k) = chosen.iter().find(|k| !pool.contains(k)) {
        return Err(Error::InconsistentSelection(format!("{name} index {k} is not a bridge")));
    }
    Ok(())
}

impl Selection {
    pub fn check(&self, sets: &BridgeSets) -> Result<()> {
        let a: Vec<usize> = sets.a.iter().map(|w| w.n).collect();
        let c: Vec<usize> = sets.c.iter().map(|w| w.n).collect();
        sorted_subset("alpha", &self.alpha, &a)?;
        sorted_subset("beta", &self.beta, &sets.b)?;
        sorted_subset("gamma", &self.gamma, &c)?;
        if self.beta.len() != self.gamma.len() {
            return Err(Error::InconsistentSelection(format!(
                "|beta| = {} but |gamma| = {}",
                self.beta.len(),
                self.gamma.len()
            )));
        }
        Ok(())
    }
}

/// Reroutes `spine` through the selected bridges. The result is checked for
/// length N, adjacency and self-avoidance; openness needs the environment,
/// see [`check_open`].
pub fn build_path(spine: &Path, sel: &Selection, sets: &BridgeSets) -> Result<Path> {
    sel.check(sets)?;
    let s = spine.sites();
    let n = spine.len();
    let mut replace: Vec<Option<Site>> = vec![None; n + 1];
    let mut skip = vec![false; n + 1];
    let mut insert: Vec<Option<[Site; 2]>> = vec![None; n + 1];
    let clash = |what: &str, k: usize| Error::InjectionViolation(format!("{what} at spine index {k}"));
    for &k in &sel.alpha {
        if replace[k].is_some() {
            return Err(clash("double reroute", k));
        }
        replace[k] = Some(s[k - 1].step(spine.increment(k + 1)));
    }
    for &k in &sel.beta {
        for j in [k - 2, k - 1] {
            if skip[j] {
                return Err(clash("double shortcut", j));
            }
            skip[j] = true;
        }
    }
    for &k in &sel.gamma {
        let e = sets.c.iter().find(|w| w.n == k).expect("checked").dir;
        insert[k] = Some([s[k].step(e), s[k + 1].step(e)]);
    }
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if skip[k] {
            if replace[k].is_some() || insert[k].is_some() {
                return Err(clash("shortcut over a bridge", k));
            }
            continue;
        }
        out.push(replace[k].take().unwrap_or_else(|| s[k].clone()));
        if let Some(pair) = insert[k].take() {
            out.extend(pair);
        }
    }
    let path = Path::from_sites(&out).map_err(|e| Error::InjectionViolation(e.to_string()))?;
    if path.len() != n {
        return Err(Error::InjectionViolation(format!("length {} instead of {n}", path.len())));
    }
    if !path.is_self_avoiding() {
        return Err(Error::InjectionViolation("rerouted path intersects itself".into()));
    }
    Ok(path)
}

/// Every edge of `path` is open in `field`.
pub fn check_open<B: BondField + ?Sized>(path: &Path, field: &B) -> Result<()> {
    match path.edges().iter().find(|e| !field.is_open(e)) {
        Some(e) => Err(Error::InjectionViolation(format!("edge {e} is closed"))),
        None => Ok(()),
    }
}

fn binomial(n: usize, k: usize) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// 2^{n_a} Σ_k C(n_b, k) C(n_c, k).
pub fn count_lower_bound(n_a: usize, n_b: usize, n_c: usize) -> BigUint {
    let sum = (0..=n_b.min(n_c)).fold(BigUint::zero(), |acc, k| acc + binomial(n_b, k) * binomial(n_c, k));
    sum << n_a
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) -> bool {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == k {
            return f(cur);
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            if !rec(i + 1, n, k, cur, f) {
                return false;
            }
            cur.pop();
        }
        true
    }
    rec(0, n, k, &mut Vec::new(), &mut f)
}

/// Visits every consistent selection in a fixed order until `f` returns false.
pub fn for_each_selection(sets: &BridgeSets, mut f: impl FnMut(Selection) -> bool) {
    let a: Vec<usize> = sets.a.iter().map(|w| w.n).collect();
    let c: Vec<usize> = sets.c.iter().map(|w| w.n).collect();
    let b = &sets.b;
    for mask in 0u64..1u64 << a.len() {
        let alpha: Vec<usize> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        for k in 0..=b.len().min(c.len()) {
            let go = combinations(b.len(), k, |bi| {
                combinations(c.len(), k, |ci| {
                    f(Selection {
                        alpha: alpha.clone(),
                        beta: bi.iter().map(|&i| b[i]).collect(),
                        gamma: ci.iter().map(|&i| c[i]).collect(),
                    })
                })
            });
            if !go {
                return;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedPaths {
    pub paths: Vec<Path>,
    pub count: BigUint,
}

/// Materializes the injection over every selection, checking validity and
/// pairwise distinctness.
pub fn enumerate_selected_paths<B: BondField>(
    spined: &SpinedEnvironment<B>,
    sets: &BridgeSets,
    cap: u64,
) -> Result<SelectedPaths> {
    let (na, nb, nc) = sets.sizes();
    let bound = count_lower_bound(na, nb, nc);
    if bound > BigUint::from(cap) {
        return Err(Error::CapExceeded { count: bound.to_string(), cap });
    }
    let audit = audit_selections(spined, sets, cap)?;
    if let Some(v) = audit.violations.first() {
        return Err(Error::InjectionViolation(v.clone()));
    }
    Ok(SelectedPaths { count: BigUint::from(audit.paths.len()), paths: audit.paths })
}

/// Outcome of running the injection over (a prefix of) the selections.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionAudit {
    pub bound: BigUint,
    pub enumerated: u64,
    /// All selections were visited (the bound did not exceed the cap).
    pub complete: bool,
    pub violations: Vec<String>,
    pub paths: Vec<Path>,
}

impl InjectionAudit {
    /// No violation, all paths distinct and, when complete, as many as the bound.
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
            && self.paths.len() as u64 == self.enumerated
            && (!self.complete || BigUint::from(self.enumerated) == self.bound)
    }
}

/// Like [`enumerate_selected_paths`] but never fails: visits at most `cap`
/// selections and records every violation.
pub fn audit_selections<B: BondField>(
    spined: &SpinedEnvironment<B>,
    sets: &BridgeSets,
    cap: u64,
) -> Result<InjectionAudit> {
    let spine = spined.spine();
    let (na, nb, nc) = sets.sizes();
    let bound = count_lower_bound(na, nb, nc);
    let complete = bound <= BigUint::from(cap);
    let mut seen: FxHashSet<Vec<i64>> = FxHashSet::default();
    let mut paths = Vec::new();
    let mut violations = Vec::new();
    let mut enumerated = 0u64;
    for_each_selection(sets, |sel| {
        enumerated += 1;
        match build_path(spine, &sel, sets).and_then(|p| check_open(&p, spined).map(|_| p)) {
            Ok(p) => {
                if seen.insert(p.codes()) {
                    paths.push(p);
                } else {
                    violations.push(format!("{sel:?} repeats an earlier path"));
                }
            }
            Err(e) => violations.push(format!("{sel:?}: {e}")),
        }
        enumerated < cap
    });
    Ok(InjectionAudit { bound, enumerated, complete, violations, paths })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeKind {
    A,
    B,
    C,
}

/// The lattice square a bridge lives on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeSquare {
    pub kind: BridgeKind,
    pub index: usize,
    pub spine_edges: Vec<Edge>,
    pub off_spine_edges: Vec<Edge>,
    pub free_sites: Vec<Site>,
}

impl BridgeSquare {
    pub fn vertices(&self) -> Vec<Site> {
        let mut v: Vec<Site> = Vec::new();
        for e in self.spine_edges.iter().chain(&self.off_spine_edges) {
            let (a, b) = e.endpoints();
            for s in [a, b] {
                if !v.contains(&s) {
                    v.push(s);
                }
            }
        }
        v
    }
}

pub fn bridge_squares(spine: &Path, sets: &BridgeSets) -> Vec<BridgeSquare> {
    let s = spine.sites();
    let edge = |a: &Site, b: &Site| canonical_edge(a, b).expect("adjacent");
    let mut out = Vec::new();
    for w in &sets.a {
        let k = w.n;
        let f = s[k - 1].step(w.dir);
        out.push(BridgeSquare {
            kind: BridgeKind::A,
            index: k,
            spine_edges: vec![edge(&s[k - 1], &s[k]), edge(&s[k], &s[k + 1])],
            off_spine_edges: vec![edge(&s[k - 1], &f), edge(&f, &s[k + 1])],
            free_sites: vec![f],
        });
    }
    for &k in &sets.b {
        out.push(BridgeSquare {
            kind: BridgeKind::B,
            index: k,
            spine_edges: (k - 2..=k).map(|j| edge(&s[j - 1], &s[j])).collect(),
            off_spine_edges: vec![edge(&s[k - 3], &s[k])],
            free_sites: Vec::new(),
        });
    }
    for w in &sets.c {
        let k = w.n;
        let (a, b) = (s[k].step(w.dir), s[k + 1].step(w.dir));
        out.push(BridgeSquare {
            kind: BridgeKind::C,
            index: k,
            spine_edges: vec![edge(&s[k], &s[k + 1])],
            off_spine_edges: vec![edge(&s[k], &a), edge(&a, &b), edge(&b, &s[k + 1])],
            free_sites: vec![a, b],
        });
    }
    out
}

/// Geometric audit: squares share no off-spine edge, free sites avoid the
/// spine and every other square. Returns the list of problems found.
pub fn overlap_audit(spine: &Path, sets: &BridgeSets) -> Vec<String> {
    let squares = bridge_squares(spine, sets);
    let sites: FxHashSet<Site> = spine.sites().into_iter().collect();
    let spine_edges: FxHashSet<Edge> = spine.edges().into_iter().collect();
    let mut problems = Vec::new();
    for (i, q) in squares.iter().enumerate() {
        let tag = |q: &BridgeSquare| format!("{:?}@{}", q.kind, q.index);
        for f in &q.free_sites {
            if sites.contains(f) {
                problems.push(format!("{}: free site {f} on the spine", tag(q)));
            }
        }
        for e in &q.off_spine_edges {
            if spine_edges.contains(e) {
                problems.push(format!("{}: edge {e} is a spine edge", tag(q)));
            }
        }
        for r in &squares[i + 1..] {
            if q.off_spine_edges.iter().any(|e| r.off_spine_edges.contains(e)) {
                problems.push(format!("{} and {} share an edge", tag(q), tag(r)));
            }
            let (rv, qv) = (r.vertices(), q.vertices());
            if q.free_sites.iter().any(|f| rv.contains(f)) || r.free_sites.iter().any(|f| qv.contains(f)) {
                problems.push(format!("{} and {} share a free site", tag(q), tag(r)));
            }
        }
    }
    problems
}

/// Certified lower bound on Z̃_N from the bridge sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Floor {
    pub sizes: (usize, usize, usize),
    pub bound: BigUint,
}

impl Floor {
    pub fn log2(&self) -> f64 {
        crate::paths::ln_biguint(&self.bound) / std::f64::consts::LN_2
    }
}

pub fn tilde_partition_floor<B: BondField + ?Sized>(spine: &Path, env: &B) -> Result<Floor> {
    let sets = detect_bridges(env, spine)?;
    let sizes = sets.sizes();
    Ok(Floor { sizes, bound: count_lower_bound(sizes.0, sizes.1, sizes.2) })
}

/// Lower bound for |A0| from the census, using the straight-run set that
/// A0 excludes (X_{n+1} = X_n).
pub fn a0_census_bound(spine: &Path) -> Result<i64> {
    let back = PathCensus::compute(spine, TConvention::Backward)?;
    let fwd = PathCensus::compute(spine, TConvention::Forward)?;
    let n = spine.len() as i64;
    Ok(n - 1 - (n - back.size_v2() as i64) - fwd.size_t() as i64 - 3 * back.size_u() as i64)
}

/// [`a0_census_bound`] with the V² deficit counted over all N+1 times of
/// [0, N]. This one always holds; the plain version can exceed |A0| by one
/// when V² = [0, N].
pub fn a0_census_bound_exact(spine: &Path) -> Result<i64> {
    Ok(a0_census_bound(spine)? - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusRow {
    pub trial: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub d: usize,
    #[serde(rename = "sizeA")]
    pub size_a: usize,
    #[serde(rename = "sizeB")]
    pub size_b: usize,
    #[serde(rename = "sizeC")]
    pub size_c: usize,
    pub floor_log2: f64,
}

pub fn write_census_csv<W: std::io::Write>(rows: &[CensusRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;
    use crate::environment::Environment;
    use crate::refwalks::sample_uniform_saw;
    use crate::rng;
    use crate::sizebias::make_spined;

    fn spine(d: usize, n: usize, seed: u64) -> Path {
        let mut r = rng::stream(seed, rng::purpose::SPINE, 0);
        sample_uniform_saw(d, n, &mut r, 10_000_000).unwrap().path
    }

    /// Clause-by-clause detector over raw coordinates; shares nothing with
    /// the implementation above except the environment.
    fn brute_detect(env: &Environment, path: &Path) -> BridgeSets {
        let s: Vec<Vec<i64>> = path.sites().iter().map(|x| x.coords().to_vec()).collect();
        let n = s.len() - 1;
        let d = s[0].len();
        let dist = |a: &[i64], b: &[i64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<i64>();
        let add = |a: &[i64], b: &[i64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<i64>>();
        let sub = |a: &[i64], b: &[i64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<i64>>();
        let neg = |a: &[i64]| a.iter().map(|x| -x).collect::<Vec<i64>>();
        let open = |a: &[i64], b: &[i64]| {
            assert_eq!(dist(a, b), 1);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let axis = (0..d).find(|&i| lo[i] != hi[i]).unwrap();
            let (base, axis) = if hi[axis] - lo[axis] == 1 { (lo, axis) } else { (hi, axis) };
            env.is_open_raw(base, axis)
        };
        let x = |k: usize| sub(&s[k], &s[k - 1]);
        let in_u = |k: usize| k >= 3 && k <= n && dist(&s[k], &s[k - 3]) == 1;
        let in_v2 = |k: usize| (0..=n).all(|m| m.abs_diff(k) <= 2 || dist(&s[m], &s[k]) > 2);
        let chi = |k: usize| {
            if k < 1 || k + 1 > n || x(k) == x(k + 1) {
                return false;
            }
            let f = add(&s[k - 1], &x(k + 1));
            open(&s[k - 1], &f) && open(&s[k + 1], &f)
        };
        let in_a0 = |k: usize| {
            (1..n).contains(&k) && in_v2(k - 1) && x(k + 1) != x(k) && (k..=k + 3).all(|j| !in_u(j))
        };
        let mut units: Vec<Vec<i64>> = Vec::new();
        for code in 1..=d as i64 {
            for sign in [-1, 1] {
                let mut v = vec![0; d];
                v[code as usize - 1] = sign;
                units.push(v);
            }
        }
        let code_of = |v: &[i64]| {
            let i = v.iter().position(|&c| c != 0).unwrap();
            (i as i64 + 1) * v[i]
        };
        units.sort_by_key(|v| code_of(v));
        let xi = |k: usize| -> Option<Vec<i64>> {
            if k >= n {
                return None;
            }
            let mut banned = vec![x(k + 1), neg(&x(k + 1))];
            if k >= 2 {
                banned.push(neg(&x(k - 1)));
            }
            if k >= 1 {
                banned.push(neg(&x(k)));
            }
            for j in [k + 2, k + 3] {
                if j <= n {
                    banned.push(x(j));
                }
            }
            units.iter().find(|e| {
                let (a, b) = (add(&s[k], e), add(&s[k + 1], e));
                !banned.contains(e) && open(&s[k], &a) && open(&a, &b) && open(&b, &s[k + 1])
            }).cloned()
        };
        let dir = |v: &[i64]| Direction::from_code(code_of(v), d).unwrap();
        let a0: Vec<usize> = (0..=n).filter(|&k| in_a0(k)).collect();
        let a = a0
            .iter()
            .filter(|&&k| chi(k) && !(k >= 1 && in_a0(k - 1) && chi(k - 1)))
            .map(|&k| Witness { n: k, dir: dir(&x(k + 1)) })
            .collect();
        let b = (0..=n)
            .filter(|&k| {
                in_u(k) && open(&s[k], &s[k - 3]) && !(k >= 5 && in_u(k - 2) && open(&s[k - 2], &s[k - 5]))
            })
            .collect();
        let c0: Vec<usize> = (0..n)
            .filter(|&k| in_v2(k) && in_v2(k + 1) && (k + 1..=k + 3).all(|j| !in_u(j)))
            .collect();
        let c = c0
            .iter()
            .filter_map(|&k| {
                let e = xi(k)?;
                let prev = k >= 1 && xi(k - 1).is_some();
                (!prev && !chi(k) && !chi(k + 1)).then(|| Witness { n: k, dir: dir(&e) })
            })
            .collect();
        BridgeSets { a0, a, b, c0, c }
    }

    #[test]
    fn closed_environment_has_no_bridges() {
        let env = Environment::new(0.0, 1).unwrap();
        let sets = detect_bridges(&env, &spine(4, 60, 1)).unwrap();
        assert!(sets.a.is_empty() && sets.b.is_empty() && sets.c.is_empty());
        assert_eq!(tilde_partition_floor(&spine(4, 60, 1), &env).unwrap().bound, BigUint::one());
    }

    #[test]
    fn straight_spine() {
        let env = Environment::new(0.5, 3).unwrap();
        let sets = detect_bridges(&env, &Path::straight(3, 20)).unwrap();
        assert!(sets.b.is_empty());
        assert!(sets.a0.is_empty());
        assert!(!sets.c0.is_empty());
    }

    #[test]
    fn matches_brute_force_detector() {
        for seed in 0..1000 {
            let d = 4;
            let sp = spine(d, 60, seed);
            let p = if seed % 2 == 0 { 0.125 } else { 0.25 };
            let env = Environment::new(p, seed).unwrap();
            assert_eq!(detect_bridges(&env, &sp).unwrap(), brute_detect(&env, &sp), "seed {seed}");
        }
        for seed in 0..20 {
            let sp = spine(2, 30, 100 + seed);
            let env = Environment::new(0.6, seed).unwrap();
            assert_eq!(detect_bridges(&env, &sp).unwrap(), brute_detect(&env, &sp), "d2 seed {seed}");
        }
    }

    #[test]
    fn set_invariants_hold() {
        for seed in 0..40 {
            let sp = spine(4, 80, seed);
            let env = Environment::new(0.3, seed).unwrap();
            let sets = detect_bridges(&env, &sp).unwrap();
            let census = crate::paths::census(&sp).unwrap();
            let a: Vec<usize> = sets.a.iter().map(|w| w.n).collect();
            let c: Vec<usize> = sets.c.iter().map(|w| w.n).collect();
            assert!(a.iter().all(|k| sets.a0.contains(k)));
            assert!(c.iter().all(|k| sets.c0.contains(k)));
            assert!(sets.b.iter().all(|&k| census.in_u(k)));
            assert!(a.windows(2).all(|w| w[1] != w[0] + 1));
            assert!(sets.b.iter().all(|k| !sets.b.contains(&(k + 2))));
            assert!(c.windows(2).all(|w| w[1] != w[0] + 1));
            assert!(overlap_audit(&sp, &sets).is_empty(), "{:?}", overlap_audit(&sp, &sets));
        }
    }

    #[test]
    fn lower_bound_values() {
        assert_eq!(count_lower_bound(0, 0, 0), BigUint::one());
        assert_eq!(count_lower_bound(3, 4, 3), BigUint::from(280u32));
        assert_eq!(count_lower_bound(5, 0, 5), BigUint::from(32u32));
        // Vandermonde: Σ C(m,k)² = C(2m,m)
        for m in 0..30 {
            assert_eq!(count_lower_bound(0, m, m), binomial(2 * m, m));
        }
    }

    #[test]
    fn central_binomial_sandwich() {
        for m in 1..=64usize {
            let s = count_lower_bound(0, m, m).to_f64().unwrap();
            let four = 4f64.powi(m as i32);
            assert!(four / (4.0 * m as f64) <= s && s <= four, "m={m}");
        }
    }

    #[test]
    fn empty_selection_is_spine() {
        let sp = spine(4, 40, 2);
        let sets = BridgeSets::default();
        assert_eq!(build_path(&sp, &Selection::default(), &sets).unwrap(), sp);
        let env = Environment::new(0.0, 2).unwrap();
        let spined = make_spined(&env, &sp).unwrap();
        let got = enumerate_selected_paths(&spined, &sets, 16).unwrap();
        assert_eq!(got.paths, vec![sp]);
    }

    #[test]
    fn alpha_moves_one_site() {
        let sp = Path::from_codes(2, &[1, 1, 2, 2, 1, 1]).unwrap();
        let env = Environment::new(1.0, 0).unwrap();
        let sets = detect_bridges(&env, &sp).unwrap();
        let k = sets.a[0].n;
        let sel = Selection { alpha: vec![k], ..Default::default() };
        let p = build_path(&sp, &sel, &sets).unwrap();
        let (a, b) = (p.sites(), sp.sites());
        let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diff, vec![k]);
        assert_eq!(a[k], b[k - 1].step(sp.increment(k + 1)));
    }

    #[test]
    fn inconsistent_selections_rejected() {
        let sp = spine(4, 60, 5);
        let env = Environment::new(0.25, 5).unwrap();
        let sets = detect_bridges(&env, &sp).unwrap();
        let bad = Selection { beta: sets.b.clone(), ..Default::default() };
        if !sets.b.is_empty() {
            assert!(matches!(build_path(&sp, &bad, &sets), Err(Error::InconsistentSelection(_))));
        }
        let not_a = Selection { alpha: vec![0], ..Default::default() };
        assert!(matches!(build_path(&sp, &not_a, &sets), Err(Error::InconsistentSelection(_))));
    }

    #[test]
    fn two_alpha_bridges_give_four_paths() {
        let sp = Path::from_codes(2, &[1, 2, 2, 2, 1, 1, 1, 2, 2, 2]).unwrap();
        let env = Environment::new(1.0, 0).unwrap();
        let mut sets = detect_bridges(&env, &sp).unwrap();
        sets.b.clear();
        sets.c.clear();
        sets.a.truncate(2);
        assert_eq!(sets.a.len(), 2);
        let spined = make_spined(&env, &sp).unwrap();
        assert_eq!(enumerate_selected_paths(&spined, &sets, 100).unwrap().count, BigUint::from(4u32));
    }

    #[test]
    fn injection_on_seeded_instances() {
        let mut mixed = 0;
        for seed in 0..60 {
            let d = 4 + (seed % 2) as usize;
            let n = 80;
            let sp = spine(d, n, 1000 + seed);
            let env = Environment::new(1.0 / (2 * d) as f64, seed).unwrap();
            let sets = detect_bridges(&env, &sp).unwrap();
            let spined = make_spined(&env, &sp).unwrap();
            let audit = audit_selections(&spined, &sets, 1 << 16).unwrap();
            assert!(audit.passed(), "seed {seed}: {:?}", &audit.violations[..audit.violations.len().min(3)]);
            if !sets.b.is_empty() && !sets.c.is_empty() {
                mixed += 1;
            }
        }
        assert!(mixed > 0);
    }

    #[test]
    fn floor_below_exact_tilde_partition() {
        for seed in 0..40 {
            let d = 3;
            let n = 16;
            let sp = spine(d, n, 2000 + seed);
            let env = Environment::new(0.3, seed).unwrap();
            let floor = tilde_partition_floor(&sp, &env).unwrap();
            let spined = make_spined(&env, &sp).unwrap();
            let exact = crate::sizebias::tilde_partition(&spined, n).unwrap();
            assert!(floor.bound <= exact, "seed {seed}");
        }
    }

    #[test]
    fn a0_counting_inequality() {
        for seed in 0..200 {
            let d = 2 + (seed % 4) as usize;
            let sp = spine(d, 40, 3000 + seed);
            let env = Environment::new(0.0, 0).unwrap();
            let sets = detect_bridges(&env, &sp).unwrap();
            assert!(sets.a0.len() as i64 >= a0_census_bound(&sp).unwrap(), "seed {seed}");
        }
    }

    #[test]
    fn a0_plain_bound_off_by_one() {
        // no U-turns, no straight runs and V2 = [0, 8]
        let sp = Path::from_codes(4, &[2, -1, 3, 4, 3, -1, 3, 4]).unwrap();
        let sets = detect_bridges(&Environment::new(0.0, 0).unwrap(), &sp).unwrap();
        assert_eq!(sets.a0, (1..8).collect::<Vec<_>>());
        assert_eq!(a0_census_bound(&sp).unwrap(), 8);
        assert_eq!(a0_census_bound_exact(&sp).unwrap(), 7);
    }

    #[test]
    fn json_shape() {
        let sets = BridgeSets {
            a0: vec![1, 2],
            a: vec![Witness { n: 2, dir: Direction::new(1, false) }],
            b: vec![5],
            c0: vec![0],
            c: vec![Witness { n: 0, dir: Direction::new(2, true) }],
        };
        let j = sets.to_json();
        assert_eq!(j, r#"{"A0":[1,2],"A":[{"n":2,"dir":-2}],"B":[5],"C0":[0],"C":[{"n":0,"dir":3}]}"#);
        assert_eq!(serde_json::from_str::<BridgeSets>(&j).unwrap(), sets);
    }

    #[test]
    fn census_csv_header() {
        let mut buf = Vec::new();
        let row = CensusRow { trial: 0, n: 10, p: 0.1, d: 5, size_a: 1, size_b: 0, size_c: 2, floor_log2: 1.0 };
        write_census_csv(&[row], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("trial,N,p,d,sizeA,sizeB,sizeC,floor_log2\n"));
    }
}
