//! Size-biased disorder, spined environments and the exact laws behind the
//! spine construction.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::environment::{relevant_edges, BondField, EdgeIndex, FiniteEnvironment};
use crate::error::{Error, Result};
use crate::lattice::{l1, SiteCodec};
use crate::paths::{
    count_open_saw, count_saw, for_each_walk, ln_biguint, AllOpen, Constraint, Path,
};
use crate::stats::wilson_interval;

/// `base` with every edge of `spine` forced open.
#[derive(Debug, Clone)]
pub struct SpinedEnvironment<B> {
    base: B,
    spine: Path,
    codec: SiteCodec,
    reach: u64,
    edges: FxHashSet<(u128, usize)>,
}

impl<B: BondField> SpinedEnvironment<B> {
    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn spine(&self) -> &Path {
        &self.spine
    }

    pub fn is_spine_edge(&self, base: &[i64], axis: usize) -> bool {
        l1(base, self.spine.start().coords()) <= self.reach
            && self.edges.contains(&(self.codec.encode(base), axis))
    }
}

impl<B: BondField> BondField for SpinedEnvironment<B> {
    fn is_open_raw(&self, base: &[i64], axis: usize) -> bool {
        self.is_spine_edge(base, axis) || self.base.is_open_raw(base, axis)
    }
}

pub fn make_spined<B: BondField>(base: B, spine: &Path) -> Result<SpinedEnvironment<B>> {
    if !spine.is_self_avoiding() {
        return Err(Error::NotSelfAvoiding);
    }
    let reach = spine.len() as u64;
    let codec = SiteCodec::for_ball(spine.start(), reach + 1)?;
    let edges = spine.edges().iter().map(|e| (codec.encode(e.base.coords()), e.axis)).collect();
    Ok(SpinedEnvironment { base, spine: spine.clone(), codec, reach, edges })
}

/// Z̃_N(S, ω): open self-avoiding paths of the spine's length in ω̃.
pub fn tilde_partition<B: BondField>(spined: &SpinedEnvironment<B>, n: usize) -> Result<BigUint> {
    if spined.spine.len() != n {
        return Err(Error::OutOfRange {
            name: "N",
            detail: format!("spine has {} steps, asked for {n}", spined.spine.len()),
        });
    }
    count_open_saw(spined, n, spined.spine.start())
}

/// Finite law with exact rational probabilities, keyed by value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Distribution {
    support: BTreeMap<u64, BigRational>,
}

impl Distribution {
    pub fn point(value: u64) -> Self {
        let mut d = Distribution::default();
        d.add(value, BigRational::one());
        d
    }

    pub fn add(&mut self, value: u64, mass: BigRational) {
        if mass.is_zero() {
            return;
        }
        let slot = self.support.entry(value).or_insert_with(BigRational::zero);
        *slot += mass;
        if slot.is_zero() {
            self.support.remove(&value);
        }
    }

    pub fn merge(mut self, other: Distribution) -> Self {
        for (v, m) in other.support {
            self.add(v, m);
        }
        self
    }

    pub fn support(&self) -> impl Iterator<Item = (u64, &BigRational)> {
        self.support.iter().map(|(v, m)| (*v, m))
    }

    pub fn mass(&self, value: u64) -> BigRational {
        self.support.get(&value).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn total(&self) -> BigRational {
        self.support.values().fold(BigRational::zero(), |a, m| a + m)
    }

    pub fn mean(&self) -> BigRational {
        self.support
            .iter()
            .fold(BigRational::zero(), |a, (v, m)| a + m * BigRational::from_integer(BigInt::from(*v)))
    }

    /// Total-variation distance, exactly.
    pub fn tv_distance(&self, other: &Distribution) -> BigRational {
        let keys: std::collections::BTreeSet<u64> =
            self.support.keys().chain(other.support.keys()).copied().collect();
        let sum = keys
            .into_iter()
            .fold(BigRational::zero(), |a, k| a + (self.mass(k) - other.mass(k)).abs());
        sum / BigRational::from_integer(BigInt::from(2))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("distribution json")
    }
}

fn big_json(x: &BigInt) -> serde_json::Value {
    match x.to_i64() {
        Some(v) => serde_json::Value::from(v),
        None => serde_json::Value::String(x.to_string()),
    }
}

impl Serialize for Distribution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Support<'a>(&'a BTreeMap<u64, BigRational>);
        impl Serialize for Support<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut seq = s.serialize_seq(Some(self.0.len()))?;
                for (v, m) in self.0 {
                    seq.serialize_element(&(v, big_json(m.numer()), big_json(m.denom())))?;
                }
                seq.end()
            }
        }
        let mut map = std::collections::BTreeMap::new();
        map.insert("support", Support(&self.support));
        map.serialize(s)
    }
}

fn check_probability(p: &BigRational) -> Result<()> {
    if p.is_negative() || *p > BigRational::one() {
        return Err(Error::InvalidProbability(p.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(())
}

/// All environments on the relevant edges of length-`n` paths from the
/// origin, with their exact weights, reduced in parallel.
fn fold_environments<F>(d: usize, n: usize, p: &BigRational, f: F) -> Result<Distribution>
where
    F: Fn(&FiniteEnvironment, &BigRational) -> Result<Distribution> + Sync,
{
    check_probability(p)?;
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let index = Arc::new(EdgeIndex::new(relevant_edges(n as u64, &crate::lattice::Site::origin(d)))?);
    let m = index.len();
    if m > crate::environment::EXHAUSTIVE_EDGE_LIMIT {
        return Err(Error::TooManyEdges { size: m, limit: crate::environment::EXHAUSTIVE_EDGE_LIMIT });
    }
    let q = BigRational::one() - p;
    let weights: Vec<BigRational> =
        (0..=m).map(|k| Pow::pow(p.clone(), k as u32) * Pow::pow(q.clone(), (m - k) as u32)).collect();
    (0..1u64 << m)
        .into_par_iter()
        .map(|mask| {
            let env = FiniteEnvironment::from_mask(index.clone(), mask);
            f(&env, &weights[mask.count_ones() as usize])
        })
        .try_reduce(Distribution::default, |a, b| Ok(a.merge(b)))
}

/// Law of Z_N under the base measure P_p.
pub fn partition_law_exact(d: usize, n: usize, p: &BigRational) -> Result<Distribution> {
    let origin = crate::lattice::Site::origin(d);
    fold_environments(d, n, p, |env, w| {
        let z = count_open_saw(env, n, &origin)?;
        let mut out = Distribution::default();
        out.add(z.to_u64().expect("small"), w.clone());
        Ok(out)
    })
}

/// Law of Z_N under P̃ = W_N · P.
pub fn size_biased_law_exact(d: usize, n: usize, p: &BigRational) -> Result<Distribution> {
    if p.is_zero() {
        return Err(Error::InvalidProbability(0.0));
    }
    let origin = crate::lattice::Site::origin(d);
    let saw = BigRational::from_integer(BigInt::from(count_saw(d, n)?));
    let norm = Pow::pow(p.clone(), n as u32) * saw;
    fold_environments(d, n, p, |env, w| {
        let z = count_open_saw(env, n, &origin)?.to_u64().expect("small");
        let mut out = Distribution::default();
        out.add(z, w * BigRational::from_integer(BigInt::from(z)) / &norm);
        Ok(out)
    })
}

/// Law of Z̃_N(S, ω) under π_N ⊗ P: uniform spine, base environment on the
/// relevant edges. Spine edges are open in ω̃ whatever their base state, so
/// only off-spine edges are enumerated.
pub fn spine_law_exact(d: usize, n: usize, p: &BigRational) -> Result<Distribution> {
    check_probability(p)?;
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let origin = crate::lattice::Site::origin(d);
    let mut spines = Vec::new();
    for_each_walk(&AllOpen, &origin, n, Constraint::SelfAvoiding, |s| {
        spines.push(Path::from_origin(d, s.to_vec()).expect("valid"));
    })?;
    let index = Arc::new(EdgeIndex::new(relevant_edges(n as u64, &origin))?);
    let m = index.len();
    if m > crate::environment::EXHAUSTIVE_EDGE_LIMIT {
        return Err(Error::TooManyEdges { size: m, limit: crate::environment::EXHAUSTIVE_EDGE_LIMIT });
    }
    let share = BigRational::new(BigInt::one(), BigInt::from(spines.len()));
    let q = BigRational::one() - p;
    let free = m - n;
    let weights: Vec<BigRational> = (0..=free)
        .map(|k| Pow::pow(p.clone(), k as u32) * Pow::pow(q.clone(), (free - k) as u32) * &share)
        .collect();
    spines
        .par_iter()
        .map(|s| {
            let on_spine: Vec<usize> =
                s.edges().iter().map(|e| index.position(e).expect("relevant")).collect();
            let off: Vec<usize> = (0..m).filter(|i| !on_spine.contains(i)).collect();
            (0..1u64 << off.len())
                .into_par_iter()
                .map(|mask| {
                    let mut states = vec![false; m];
                    for (bit, &i) in off.iter().enumerate() {
                        states[i] = mask >> bit & 1 == 1;
                    }
                    let env = FiniteEnvironment::new(index.clone(), &states)?;
                    let z = tilde_partition(&make_spined(&env, s)?, n)?.to_u64().expect("small");
                    let mut out = Distribution::default();
                    out.add(z, weights[mask.count_ones() as usize].clone());
                    Ok(out)
                })
                .try_reduce(Distribution::default, |a, b| Ok(a.merge(b)))
        })
        .try_reduce(Distribution::default, |a, b| Ok(a.merge(b)))
}

/// Exact E_p[Z_N] over environments of `edges`, paired with p^N times the
/// number of self-avoiding paths from `start` that stay inside `edges`.
/// The two agree on every edge set.
pub fn annealed_identity_exact(
    edges: Vec<crate::lattice::Edge>,
    start: &crate::lattice::Site,
    n: usize,
    p: &BigRational,
) -> Result<(BigRational, BigRational)> {
    check_probability(p)?;
    let index = Arc::new(EdgeIndex::new(edges)?);
    let confined = count_open_saw(&FiniteEnvironment::all_open(index.clone()), n, start)?;
    let rhs = Pow::pow(p.clone(), n as u32) * BigRational::from_integer(BigInt::from(confined));
    let lhs = crate::environment::enumerate_index(index, p.clone())?
        .par_bridge()
        .map(|(env, w)| {
            count_open_saw(&env, n, start).map(|z| w * BigRational::from_integer(BigInt::from(z)))
        })
        .try_reduce(BigRational::zero, |a, b| Ok(a + b))?;
    Ok((lhs, rhs))
}

/// One row of the reweighting check: P[W ∈ (lo, hi]] against Ẽ[W⁻¹; W ∈ (lo, hi]].
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightRow {
    pub lo: BigRational,
    pub hi: BigRational,
    pub plain: BigRational,
    pub reweighted: BigRational,
}

/// Evaluates the reweighting identity on dyadic intervals (2^k, 2^{k+1}]
/// covering every positive value of W_N.
pub fn reweighting_rows(d: usize, n: usize, p: &BigRational) -> Result<Vec<ReweightRow>> {
    let plain = partition_law_exact(d, n, p)?;
    let biased = size_biased_law_exact(d, n, p)?;
    let saw = BigRational::from_integer(BigInt::from(count_saw(d, n)?));
    let norm = Pow::pow(p.clone(), n as u32) * saw;
    let w_of = |z: u64| BigRational::from_integer(BigInt::from(z)) / &norm;
    let two = BigRational::from_integer(BigInt::from(2));
    let positive: Vec<BigRational> =
        plain.support().filter(|(z, _)| *z > 0).map(|(z, _)| w_of(z)).collect();
    let Some(max_w) = positive.iter().max().cloned() else { return Ok(Vec::new()) };
    let min_w = positive.iter().min().cloned().expect("nonempty");
    let mut lo = BigRational::one();
    while lo >= min_w {
        lo /= &two;
    }
    let mut rows = Vec::new();
    while lo < max_w {
        let hi = &lo * &two;
        let inside = |z: u64| {
            let w = w_of(z);
            z > 0 && w > lo && w <= hi
        };
        let p_plain = plain.support().filter(|(z, _)| inside(*z)).fold(BigRational::zero(), |a, (_, m)| a + m);
        let p_rew = biased
            .support()
            .filter(|(z, _)| inside(*z))
            .fold(BigRational::zero(), |a, (z, m)| a + m / w_of(z));
        rows.push(ReweightRow { lo: lo.clone(), hi: hi.clone(), plain: p_plain, reweighted: p_rew });
        lo = hi;
    }
    Ok(rows)
}

/// Empirical frequency of Z̃_N ≤ e^{cN} p^N |S_N|, in the log domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub n: usize,
    pub c: f64,
    pub log_threshold: f64,
    pub samples: u64,
    pub below: u64,
    pub frequency: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

/// `log_tilde` holds ln Z̃_N per sample; `log_saw` is ln |S_N| (exact or
/// estimated by the caller).
pub fn strong_disorder_certificate(
    log_tilde: &[f64],
    c: f64,
    n: usize,
    p: f64,
    log_saw: f64,
) -> Result<CertificateReport> {
    if !(c > 0.0) {
        return Err(Error::OutOfRange { name: "c", detail: format!("{c} must be positive") });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let log_threshold = c * n as f64 + n as f64 * p.ln() + log_saw;
    // small slack absorbs rounding when the two sides are mathematically equal
    let slack = 1e-9 * log_threshold.abs().max(1.0);
    let below = log_tilde.iter().filter(|&&z| z <= log_threshold + slack).count() as u64;
    let samples = log_tilde.len() as u64;
    let (lo, hi) = wilson_interval(below, samples, 1.96);
    Ok(CertificateReport {
        n,
        c,
        log_threshold,
        samples,
        below,
        frequency: if samples == 0 { f64::NAN } else { below as f64 / samples as f64 },
        wilson_low: lo,
        wilson_high: hi,
    })
}

/// ln of a big count, re-exported for report code.
pub fn ln_count(z: &BigUint) -> f64 {
    ln_biguint(z)
}
