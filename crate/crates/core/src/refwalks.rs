//! Markovian reference walks and the quantities used to compare them with
//! the uniform self-avoiding walk.
//!
//! * π¹: non-backtracking walk, uniform on non-backtracking paths.
//! * π²: at each step a uniform neighbor other than S_{n-1} and S_{n-3};
//!   supported on the no-backtrack, no-4-loop paths S⁴_N but not uniform there.
//!
//! Samplers and the exact decision-tree law share [`choices`], so the exact
//! law is the law of the sampler.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Pow, ToPrimitive};
use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{directions, Direction, Site, SiteCodec};
use crate::paths::{
    count_saw, for_each_walk, AllOpen, Constraint, Path, PathCensus, SiteIndex, TConvention,
};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkKind {
    Simple,
    Pi1,
    Pi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkLaw {
    pub kind: WalkKind,
    pub d: usize,
    pub n: usize,
}

impl WalkLaw {
    pub fn new(kind: WalkKind, d: usize, n: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::DimensionTooSmall(d));
        }
        if n < 1 {
            return Err(Error::OutOfRange { name: "N", detail: "walk length must be >= 1".into() });
        }
        Ok(WalkLaw { kind, d, n })
    }

    pub fn sample(&self, rng: &mut Stream) -> Path {
        sample_walk(self.kind, self.d, self.n, rng)
    }
}

/// Admissible next steps from the end of `sites` (S_0..S_k), in neighbor order.
pub fn choices(kind: WalkKind, sites: &[Site]) -> Vec<Direction> {
    let k = sites.len() - 1;
    let cur = &sites[k];
    directions(cur.dim())
        .filter(|&dir| {
            let x = cur.step(dir);
            match kind {
                WalkKind::Simple => true,
                WalkKind::Pi1 => k < 1 || x != sites[k - 1],
                WalkKind::Pi2 => (k < 1 || x != sites[k - 1]) && (k < 3 || x != sites[k - 3]),
            }
        })
        .collect()
}

pub fn sample_walk(kind: WalkKind, d: usize, n: usize, rng: &mut Stream) -> Path {
    let mut sites = Vec::with_capacity(n + 1);
    sites.push(Site::origin(d));
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        let opts = choices(kind, &sites);
        let dir = opts[rng.random_range(0..opts.len())];
        let next = sites.last().expect("nonempty").step(dir);
        sites.push(next);
        steps.push(dir);
    }
    Path::from_origin(d, steps).expect("valid dimension")
}

pub fn sample_pi1(d: usize, n: usize, rng: &mut Stream) -> Path {
    sample_walk(WalkKind::Pi1, d, n, rng)
}

pub fn sample_pi2(d: usize, n: usize, rng: &mut Stream) -> Result<Path> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    Ok(sample_walk(WalkKind::Pi2, d, n, rng))
}

/// Exact law of the sampler: every reachable path with its probability, the
/// product of reciprocal choice counts along the decision tree.
pub fn exact_law(kind: WalkKind, d: usize, n: usize) -> Vec<(Path, BigRational)> {
    fn rec(
        kind: WalkKind,
        n: usize,
        sites: &mut Vec<Site>,
        steps: &mut Vec<Direction>,
        prob: BigRational,
        out: &mut Vec<(Path, BigRational)>,
    ) {
        if steps.len() == n {
            out.push((Path::from_origin(sites[0].dim(), steps.clone()).expect("valid"), prob));
            return;
        }
        let opts = choices(kind, sites);
        let share = prob / BigRational::from_integer(BigInt::from(opts.len()));
        for dir in opts {
            let next = sites.last().expect("nonempty").step(dir);
            sites.push(next);
            steps.push(dir);
            rec(kind, n, sites, steps, share.clone(), out);
            steps.pop();
            sites.pop();
        }
    }
    let mut out = Vec::new();
    rec(kind, n, &mut vec![Site::origin(d)], &mut Vec::new(), BigRational::one(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SawSample {
    pub path: Path,
    /// π¹ proposals drawn, including the accepted one.
    pub attempts: u64,
}

/// Exact uniform sample from S_N by rejecting π¹ proposals that intersect
/// themselves. A proposal is abandoned at its first self-intersection, which
/// does not change the accepted law.
pub fn sample_uniform_saw(
    d: usize,
    n: usize,
    rng: &mut Stream,
    max_attempts: u64,
) -> Result<SawSample> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let origin = Site::origin(d);
    let codec = SiteCodec::for_ball(&origin, n as u64)?;
    let start = codec.encode(origin.coords());
    let use_set = n > 48;
    let mut keys: Vec<u128> = Vec::with_capacity(n + 1);
    let mut set: FxHashSet<u128> = FxHashSet::default();
    let mut steps: Vec<Direction> = Vec::with_capacity(n);
    let q = 2 * d;
    for attempt in 1..=max_attempts {
        keys.clear();
        steps.clear();
        set.clear();
        keys.push(start);
        if use_set {
            set.insert(start);
        }
        let mut ok = true;
        for k in 0..n {
            let dir = if k == 0 {
                Direction::from_index(rng.random_range(0..q))
            } else {
                let back = steps[k - 1].negate().index();
                let mut i = rng.random_range(0..q - 1);
                if i >= back {
                    i += 1;
                }
                Direction::from_index(i)
            };
            let next = codec.step(keys[k], dir);
            let hit = if use_set { !set.insert(next) } else { keys.contains(&next) };
            if hit {
                ok = false;
                break;
            }
            keys.push(next);
            steps.push(dir);
        }
        if ok {
            let path = Path::from_origin(d, steps.clone())?;
            return Ok(SawSample { path, attempts: attempt });
        }
    }
    Err(Error::AttemptsExhausted { attempts: max_attempts })
}

/// |U_{N-1}|: U-turn times n in [3, N-1].
pub fn u_turns_before_end(path: &Path) -> usize {
    let sites = path.sites();
    let n = path.len();
    (3..n)
        .filter(|&k| crate::lattice::l1(sites[k].coords(), sites[k - 3].coords()) == 1)
        .count()
}

fn check_pi2_admissible(path: &Path) -> Result<()> {
    let s = path.sites();
    for k in 2..s.len() {
        if s[k] == s[k - 2] || (k >= 4 && s[k] == s[k - 4]) {
            return Err(Error::InvalidPath(format!("step {k} backtracks or closes a 4-loop")));
        }
    }
    Ok(())
}

/// Which way the U-turn factor is applied in the π² weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDirection {
    /// ((2d-2)/(2d-1))^{|U_{N-1}|}: the density of the uniform law on S⁴_N
    /// relative to π², up to normalization.
    #[default]
    Verified,
    /// The reciprocal; kept as a negative control.
    Flipped,
}

fn weight_ratio(d: usize, direction: WeightDirection) -> BigRational {
    let num = BigInt::from(2 * d as i64 - 2);
    let den = BigInt::from(2 * d as i64 - 1);
    match direction {
        WeightDirection::Verified => BigRational::new(num, den),
        WeightDirection::Flipped => BigRational::new(den, num),
    }
}

/// Unnormalized dπ²_N/dπ² at `path`, exactly.
pub fn rn_weight_pi2_exact(path: &Path, direction: WeightDirection) -> Result<BigRational> {
    check_pi2_admissible(path)?;
    Ok(Pow::pow(weight_ratio(path.dim(), direction), u_turns_before_end(path) as u32))
}

/// Unnormalized dπ²_N/dπ² at `path`: ((2d-2)/(2d-1))^{|U_{N-1}|}.
pub fn rn_weight_pi2(path: &Path) -> Result<f64> {
    rn_weight_pi2_with(path, WeightDirection::Verified)
}

pub fn rn_weight_pi2_with(path: &Path, direction: WeightDirection) -> Result<f64> {
    check_pi2_admissible(path)?;
    let d = path.dim() as f64;
    let r = (2.0 * d - 2.0) / (2.0 * d - 1.0);
    let r = match direction {
        WeightDirection::Verified => r,
        WeightDirection::Flipped => 1.0 / r,
    };
    Ok(r.powi(u_turns_before_end(path) as i32))
}

/// Outcome of checking the π² law against the U-turn weight by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Pi2LawReport {
    pub d: usize,
    pub n: usize,
    pub paths: usize,
    /// Support of the sampler equals S⁴_N.
    pub support_is_no4_set: bool,
    /// Probability ratio between two paths whose |U_{N-1}| differ by one
    /// (more U-turns over fewer), read off the enumeration.
    pub observed_ratio: Option<BigRational>,
    /// P(path) * ratio^{-|U_{N-1}|} is the same for every path.
    pub ratio_law_holds: bool,
    /// P(path) * weight(path) is constant, i.e. the weight turns π² into the
    /// uniform law on S⁴_N.
    pub weight_uniformizes: bool,
}

impl Pi2LawReport {
    pub fn passed(&self) -> bool {
        self.support_is_no4_set && self.ratio_law_holds && self.weight_uniformizes
    }
}

/// Enumerates the π² decision tree at (d, n) and tests the weight direction.
pub fn verify_pi2_law(d: usize, n: usize, direction: WeightDirection) -> Result<Pi2LawReport> {
    let law = exact_law(WalkKind::Pi2, d, n);
    let no4 = crate::paths::count_saw_no4(d, n)?;
    let support_is_no4_set = BigUint::from(law.len()) == no4
        && law.iter().all(|(p, _)| check_pi2_admissible(p).is_ok());

    let with_u: Vec<(usize, &BigRational)> =
        law.iter().map(|(p, pr)| (u_turns_before_end(p), pr)).collect();
    let observed_ratio = with_u.iter().find(|(u, _)| *u == 1).and_then(|(_, p1)| {
        with_u.iter().find(|(u, _)| *u == 0).map(|(_, p0)| (*p1).clone() / (*p0).clone())
    });
    let ratio_law_holds = match &observed_ratio {
        Some(r) => {
            let scaled: Vec<BigRational> = with_u
                .iter()
                .map(|(u, pr)| (*pr).clone() / Pow::pow(r.clone(), *u as u32))
                .collect();
            scaled.windows(2).all(|w| w[0] == w[1])
        }
        None => with_u.windows(2).all(|w| w[0].1 == w[1].1),
    };
    let mut weighted = Vec::with_capacity(law.len());
    for (p, pr) in &law {
        weighted.push(pr.clone() * rn_weight_pi2_exact(p, direction)?);
    }
    let weight_uniformizes = weighted.windows(2).all(|w| w[0] == w[1]);
    Ok(Pi2LawReport {
        d,
        n,
        paths: law.len(),
        support_is_no4_set,
        observed_ratio,
        ratio_law_holds,
        weight_uniformizes,
    })
}

/// Validated input of the Bernoulli large-deviation rate function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunctionInput {
    pub p: f64,
    pub x: f64,
}

impl RateFunctionInput {
    pub fn new(p: f64, x: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfRange { name: "x", detail: format!("{x} not in [0,1]") });
        }
        Ok(RateFunctionInput { p, x })
    }
}

/// h_p(x) = x log(x/p) + (1-x) log((1-x)/(1-p)), extended by continuity at 0 and 1.
pub fn rate_function(input: RateFunctionInput) -> f64 {
    let RateFunctionInput { p, x } = input;
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    (term(x, p) + term(1.0 - x, 1.0 - p)).max(0.0)
}

/// McDiarmid lower/upper tail bound exp(-2x² / (n L²)).
pub fn mcdiarmid_tail(x: f64, n_vars: usize, lipschitz: f64) -> f64 {
    (-2.0 * x * x / (n_vars as f64 * lipschitz * lipschitz)).exp()
}

/// |S_N| / (2d (2d-1)^{N-1}): probability that a π¹ path is self-avoiding.
pub fn pi1_saw_probability_exact(d: usize, n: usize) -> Result<BigRational> {
    if n == 0 {
        return Ok(BigRational::one());
    }
    let saw = count_saw(d, n)?;
    let nb = BigInt::from(2 * d) * Pow::pow(BigInt::from(2 * d - 1), (n - 1) as u32);
    Ok(BigRational::new(BigInt::from(saw), nb))
}

/// Per-trial census sizes of a walk. `U1`/`U2` split the U-turn indicators
/// H_n = 1{|S_n - S_{n-3}| = 1} over even and odd times in [3, N-1], so
/// `U1 + U2 = |U_{N-1}|`. `W1`/`W2` count times n that come within distance
/// 1 (resp. 2) of some S_m with m < n-1 (resp. m < n-2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkStats {
    pub trial: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "U1")]
    pub u1: usize,
    #[serde(rename = "U2")]
    pub u2: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "V1")]
    pub v1: usize,
    #[serde(rename = "V2")]
    pub v2: usize,
    #[serde(rename = "W1")]
    pub w1: usize,
    #[serde(rename = "W2")]
    pub w2: usize,
    pub tau2_count: usize,
}

/// Times at which the walk returns near its non-immediate past.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Excursions {
    pub w1: Vec<bool>,
    pub w2: Vec<bool>,
    /// τ²_1 < τ²_2 < ... <= N.
    pub tau2: Vec<usize>,
}

pub fn excursions(path: &Path, index: &SiteIndex) -> Excursions {
    let n = path.len();
    let w1: Vec<bool> = (0..=n)
        .map(|k| {
            let mut hit = false;
            index.near(k, 1, |m| hit |= m + 1 < k);
            hit
        })
        .collect();
    let w2: Vec<bool> = (0..=n)
        .map(|k| {
            let mut hit = false;
            index.near(k, 2, |m| hit |= m + 2 < k);
            hit
        })
        .collect();
    let at_two = |k: usize| {
        let mut hit = false;
        index.near(k, 2, |m| hit |= m + 2 < k && index.dist(m, k) == 2);
        hit
    };
    let mut tau2 = Vec::new();
    let mut prev = 0usize;
    let mut k = 2usize;
    while k <= n {
        if k >= prev + 2 && !w1[k] && !w1[k - 1] && at_two(k) {
            tau2.push(k);
            prev = k;
            k += 2;
        } else {
            k += 1;
        }
    }
    Excursions { w1, w2, tau2 }
}

/// Statistics record of one walk; self-avoidance is not required.
pub fn walk_statistics(trial: u64, path: &Path) -> Result<WalkStats> {
    let index = SiteIndex::new(path)?;
    let census = PathCensus::from_index(path, &index, TConvention::Backward);
    let n = path.len();
    let h = |k: usize| census.in_u(k) as usize;
    let u1 = (2..=n.saturating_sub(1) / 2).map(|i| h(2 * i)).sum();
    let u2 = (1..(n / 2)).map(|i| h(2 * i + 1)).sum();
    let ex = excursions(path, &index);
    Ok(WalkStats {
        trial,
        n,
        u: census.size_u(),
        u1,
        u2,
        t: census.size_t(),
        v1: census.size_v1(),
        v2: census.size_v2(),
        w1: ex.w1.iter().filter(|&&b| b).count(),
        w2: ex.w2.iter().filter(|&&b| b).count(),
        tau2_count: ex.tau2.len(),
    })
}

/// Independent trials of `law`, trial `i` driven by stream `(seed, WALK, i)`.
pub fn u_statistics_under(law: WalkLaw, trials: u64, seed: u64) -> Result<Vec<WalkStats>> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, rng::purpose::WALK, i);
            walk_statistics(i, &law.sample(&mut rng))
        })
        .collect()
}

pub fn write_stats_csv<W: std::io::Write>(rows: &[WalkStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-time U-turn probability under π¹: 2(d-1)/(2d-1)².
pub fn pi1_u_turn_rate(d: usize) -> f64 {
    let d = d as f64;
    2.0 * (d - 1.0) / (2.0 * d - 1.0).powi(2)
}

/// Self-normalized importance-sampling estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImportanceEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub ess: f64,
    pub samples: u64,
}

/// Expectation of `f` under the uniform law on S⁴_N, estimated from π²
/// samples reweighted by [`rn_weight_pi2`].
pub fn pi2n_expectation<F>(d: usize, n: usize, samples: u64, seed: u64, f: F) -> Result<ImportanceEstimate>
where
    F: Fn(&Path) -> f64 + Sync,
{
    let draws: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, rng::purpose::IMPORTANCE, i);
            let path = sample_walk(WalkKind::Pi2, d, n, &mut rng);
            Ok((rn_weight_pi2(&path)?, f(&path)))
        })
        .collect::<Result<_>>()?;
    let sw: f64 = draws.iter().map(|(w, _)| w).sum();
    let sw2: f64 = draws.iter().map(|(w, _)| w * w).sum();
    let mean = draws.iter().map(|(w, v)| w * v).sum::<f64>() / sw;
    let var = draws.iter().map(|(w, v)| w * w * (v - mean).powi(2)).sum::<f64>() / (sw * sw);
    Ok(ImportanceEstimate { mean, std_err: var.sqrt(), ess: sw * sw / sw2, samples })
}

/// Exact average of `f` over S⁴_N by enumeration.
pub fn no4_exact_mean(d: usize, n: usize, f: impl Fn(&Path) -> f64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0u64;
    for_each_walk(&AllOpen, &Site::origin(d), n, Constraint::No4, |steps| {
        let p = Path::from_origin(d, steps.to_vec()).expect("valid");
        total += f(&p);
        count += 1;
    })?;
    Ok(total / count as f64)
}

/// |U_N| as a real, for use with the expectation helpers.
pub fn u_turn_count(path: &Path) -> f64 {
    let s = path.sites();
    (3..s.len())
        .filter(|&k| crate::lattice::l1(s[k].coords(), s[k - 3].coords()) == 1)
        .count() as f64
}

pub fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
