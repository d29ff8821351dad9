//! Closed-form expansions, Monte Carlo experiments and the verification
//! manifest.

use std::f64::consts::LN_2;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Pow, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bridges::{audit_selections, count_lower_bound, detect_bridges, overlap_audit, CensusRow};
use crate::environment::{relevant_edges, Environment, HashRecipe};
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::paths::{
    census, count_saw, count_saw_no4, count_walks, growth_sequence, ln_biguint, AllOpen, Constraint,
    Path, PathCensus, TConvention,
};
use crate::refwalks::{
    exact_law, mcdiarmid_tail, pi1_saw_probability_exact, sample_uniform_saw, verify_pi2_law,
    WalkKind, WeightDirection,
};
use crate::rng::{self, purpose};
use crate::sizebias::{
    annealed_identity_exact, make_spined, reweighting_rows, size_biased_law_exact, spine_law_exact,
    strong_disorder_certificate, tilde_partition, CertificateReport,
};
use crate::stats::{quantile_sorted, summarize, wilson_interval, Summary};

/// Shared parameters of the Monte Carlo experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub eps: f64,
    pub trials: u64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::DimensionTooSmall(self.d));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidProbability(self.p));
        }
        if self.trials < 1 {
            return Err(Error::OutOfRange { name: "trials", detail: "need at least one trial".into() });
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::OutOfRange { name: "epsilon", detail: format!("{} not in (0,1]", self.eps) });
        }
        if self.n < 1 {
            return Err(Error::OutOfRange { name: "N", detail: "need N >= 1".into() });
        }
        Ok(())
    }
}

/// Coefficient of the form `constant + ln2 · log 2 + eps · ε`, with dyadic
/// parts so that coefficient arithmetic is exact.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coefficient {
    pub constant: f64,
    pub ln2: f64,
    pub eps: f64,
}

impl Coefficient {
    pub const fn new(constant: f64, ln2: f64, eps: f64) -> Self {
        Coefficient { constant, ln2, eps }
    }

    pub fn value(self, eps: f64) -> f64 {
        self.ln2 * LN_2 + self.constant + self.eps * eps
    }

    fn sub(self, o: Self) -> Self {
        Coefficient::new(self.constant - o.constant, self.ln2 - o.ln2, self.eps - o.eps)
    }
}

/// Polynomial in u = 1/(2d) truncated after u³.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Series(pub [Coefficient; 4]);

impl Series {
    pub fn eval(&self, d: usize, eps: f64) -> f64 {
        let u = 1.0 / (2 * d) as f64;
        self.0.iter().rev().fold(0.0, |acc, c| acc * u + c.value(eps))
    }

    pub fn sub(&self, o: &Series) -> Series {
        let mut out = self.0;
        for (a, b) in out.iter_mut().zip(&o.0) {
            *a = a.sub(*b);
        }
        Series(out)
    }
}

const ZERO: Coefficient = Coefficient::new(0.0, 0.0, 0.0);
const ONE: Coefficient = Coefficient::new(1.0, 0.0, 0.0);

/// u + u² + (2 + 3 log 2 - ε) u³.
pub fn threshold_series() -> Series {
    Series([ZERO, ONE, ONE, Coefficient::new(2.0, 3.0, -1.0)])
}

/// u + u² + (7/2) u³; the O(u⁴) remainder is dropped.
pub fn pc_series() -> Series {
    Series([ZERO, ONE, ONE, Coefficient::new(3.5, 0.0, 0.0)])
}

pub fn threshold_bound(d: usize, eps: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let top = 2.0 + 3.0 * LN_2;
    if !(0.0..top).contains(&eps) {
        return Err(Error::OutOfRange { name: "epsilon", detail: format!("{eps} not in [0, 2 + 3 log 2)") });
    }
    Ok(threshold_series().eval(d, eps))
}

pub fn pc_expansion(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    Ok(pc_series().eval(d, 0.0))
}

/// threshold_bound - pc_expansion, from the coefficient difference (no
/// cancellation between nearly equal values).
pub fn threshold_gap(d: usize, eps: f64) -> Result<f64> {
    threshold_bound(d, eps)?;
    Ok(threshold_series().sub(&pc_series()).eval(d, eps))
}

/// 2d - 1 - 1/(2d); the O(d⁻²) remainder is dropped.
pub fn mu_expansion(d: usize) -> f64 {
    let t = (2 * d) as f64;
    t - 1.0 - 1.0 / t
}

/// The no-4-loop growth rate agrees with [`mu_expansion`] to this order.
pub fn mu4_expansion(d: usize) -> f64 {
    mu_expansion(d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub d: usize,
    pub threshold_bound: f64,
    pub pc_expansion: f64,
    pub gap: f64,
    pub mu_expansion: f64,
    pub mu4_expansion: f64,
}

pub fn threshold_table(d_max: usize, eps: f64) -> Result<Vec<ThresholdRow>> {
    (2..=d_max)
        .map(|d| {
            Ok(ThresholdRow {
                d,
                threshold_bound: threshold_bound(d, eps)?,
                pc_expansion: pc_expansion(d)?,
                gap: threshold_gap(d, eps)?,
                mu_expansion: mu_expansion(d),
                mu4_expansion: mu4_expansion(d),
            })
        })
        .collect()
}

/// Enumeration budget used to pick the proxy length for the annealed constant.
pub const ANNEALED_BUDGET: f64 = 1.0e9;

/// Largest N whose self-avoiding enumeration estimate fits `budget`.
pub fn feasible_length(d: usize, budget: f64) -> usize {
    let mut n = 1;
    while Constraint::SelfAvoiding.estimate(d, n + 1) <= budget {
        n += 1;
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealedConstant {
    pub d: usize,
    pub p: f64,
    pub n_star: usize,
    pub saw: String,
    /// |S_{N*}|^{1/N*}
    pub mu_proxy: f64,
    pub value: f64,
}

/// p · |S_{N*}|^{1/N*} at the proxy length `n_star`.
pub fn annealed_constant_at(d: usize, p: f64, n_star: usize) -> Result<AnnealedConstant> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let saw = count_saw(d, n_star)?;
    let mu_proxy = match saw.to_f64().filter(|x| x.is_finite()) {
        Some(x) => x.powf(1.0 / n_star as f64),
        None => (ln_biguint(&saw) / n_star as f64).exp(),
    };
    Ok(AnnealedConstant { d, p, n_star, saw: saw.to_string(), mu_proxy, value: p * mu_proxy })
}

pub fn annealed_constant(d: usize, p: f64) -> Result<AnnealedConstant> {
    annealed_constant_at(d, p, feasible_length(d, ANNEALED_BUDGET))
}

/// Exact |S_N| / (2d(2d-1)^{N-1}) and its step-to-step ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalRow {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub saw: String,
    pub probability: f64,
    /// P_N / P_{N-1}; absent at N = 1.
    pub rate: Option<f64>,
    pub band_low: f64,
    pub band_high: f64,
}

impl SurvivalRow {
    pub fn in_band(&self) -> bool {
        self.rate.is_some_and(|r| r >= self.band_low && r <= self.band_high)
    }
}

/// The calibrated band width constant for the per-step survival rate.
pub const SURVIVAL_BAND_K: f64 = 8.0;

/// Survival probabilities of π¹ paths for N = 1..=n_max, with the band
/// 1 - u² ± K u³ (u = 1/(2d)) around each step-to-step rate.
pub fn survival_rows(d: usize, n_max: usize, k: f64) -> Result<Vec<SurvivalRow>> {
    let counts = count_walks(&AllOpen, &Site::origin(d), n_max, Constraint::SelfAvoiding)?;
    let u = 1.0 / (2 * d) as f64;
    let mut rows = Vec::with_capacity(n_max);
    let mut prev: Option<BigRational> = None;
    for (n, saw) in counts.iter().enumerate().skip(1) {
        let prob = pi1_saw_probability_exact(d, n)?;
        debug_assert_eq!(
            prob,
            BigRational::new(
                BigInt::from(saw.clone()),
                BigInt::from(2 * d) * Pow::pow(BigInt::from(2 * d - 1), (n - 1) as u32)
            )
        );
        let rate = prev.as_ref().map(|q| (&prob / q).to_f64().expect("finite"));
        rows.push(SurvivalRow {
            d,
            n,
            saw: saw.to_string(),
            probability: prob.to_f64().expect("finite"),
            rate,
            band_low: 1.0 - u * u - k * u * u * u,
            band_high: 1.0 - u * u + k * u * u * u,
        });
        prev = Some(prob);
    }
    Ok(rows)
}

fn env_seed(master: u64, trial: u64, attempt: u64) -> u64 {
    let mut r = rng::stream(master, purpose::ENVIRONMENT, trial);
    let mut s = 0;
    for _ in 0..=attempt {
        s = r.random::<u64>();
    }
    s
}

/// Monte Carlo mean of Z_N from the origin against p^N |S_N|.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealedCheck {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub trials: u64,
    pub mean: f64,
    pub std_err: f64,
    pub expected: f64,
}

impl AnnealedCheck {
    pub fn z_score(&self) -> f64 {
        (self.mean - self.expected) / self.std_err
    }
}

pub fn annealed_mc_check(d: usize, n: usize, p: f64, trials: u64, seed: u64) -> Result<AnnealedCheck> {
    let origin = Site::origin(d);
    let zs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let env = Environment::new(p, env_seed(seed, t, 0))?;
            Ok(crate::paths::count_open_saw(&env, n, &origin)?.to_f64().expect("finite"))
        })
        .collect::<Result<_>>()?;
    let s = summarize(&zs);
    let expected = p.powi(n as i32) * count_saw(d, n)?.to_f64().expect("finite");
    Ok(AnnealedCheck { d, n, p, trials, mean: s.mean, std_err: s.std_err, expected })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuenchedRow {
    pub trial: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "Z")]
    pub z: String,
    pub root: f64,
    /// Z_N^{1/N} over p|S_N|^{1/N} when |S_N| is enumerable, else over the
    /// annealed constant.
    pub ratio: f64,
    pub exact_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuenchedReport {
    pub config: ExperimentConfig,
    pub annealed: AnnealedConstant,
    pub warning: Option<String>,
    pub attempts: Vec<u64>,
    /// 10%, 50% and 90% quantiles of the ratio at N_max.
    pub final_ratio_quantiles: [f64; 3],
    pub rows: Vec<QuenchedRow>,
}

/// Environment retries allowed per trial when looking for Z_{N_max} > 0.
pub const PERCOLATION_BUDGET: u64 = 1000;

pub fn run_quenched_estimate(config: &ExperimentConfig) -> Result<QuenchedReport> {
    config.validate()?;
    let ExperimentConfig { d, n, p, seed, trials, .. } = *config;
    let warning = (p <= pc_expansion(d)?)
        .then(|| format!("p = {p} is not above the expansion threshold {:.6}", pc_expansion(d).unwrap_or(0.0)));
    let annealed = annealed_constant(d, p)?;
    let exact_len = annealed.n_star.min(n);
    let reference = count_walks(&AllOpen, &Site::origin(d), exact_len, Constraint::SelfAvoiding)?;
    let origin = Site::origin(d);
    let per_trial: Vec<(u64, Vec<QuenchedRow>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            for attempt in 0..PERCOLATION_BUDGET {
                let env = Environment::new(p, env_seed(seed, t, attempt))?;
                let growth = growth_sequence(&env, n, &origin)?;
                if growth.last().is_none_or(|r| r.z.is_zero()) {
                    continue;
                }
                let rows = growth
                    .into_iter()
                    .map(|r| {
                        let exact = r.n <= exact_len;
                        let denom = if exact {
                            p * (ln_biguint(&reference[r.n]) / r.n as f64).exp()
                        } else {
                            annealed.value
                        };
                        QuenchedRow {
                            trial: t,
                            n: r.n,
                            z: r.z.to_string(),
                            root: r.root,
                            ratio: r.root / denom,
                            exact_reference: exact,
                        }
                    })
                    .collect();
                return Ok((attempt + 1, rows));
            }
            Err(Error::NoPercolatingStart { budget: PERCOLATION_BUDGET })
        })
        .collect::<Result<_>>()?;
    let attempts = per_trial.iter().map(|(a, _)| *a).collect();
    let rows: Vec<QuenchedRow> = per_trial.into_iter().flat_map(|(_, r)| r).collect();
    let mut finals: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.ratio).collect();
    finals.sort_by(|a, b| a.total_cmp(b));
    let final_ratio_quantiles =
        [quantile_sorted(&finals, 0.1), quantile_sorted(&finals, 0.5), quantile_sorted(&finals, 0.9)];
    Ok(QuenchedReport { config: *config, annealed, warning, attempts, final_ratio_quantiles, rows })
}

/// π¹ proposals allowed per uniform self-avoiding sample.
pub const SAMPLER_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpineRow {
    pub trial: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "V1")]
    pub v1: usize,
    #[serde(rename = "V2")]
    pub v2: usize,
    pub good: bool,
    pub attempts: u64,
}

pub fn spine_row(trial: u64, path: &Path, eps: f64, attempts: u64) -> Result<SpineRow> {
    let c = census(path)?;
    Ok(SpineRow {
        trial,
        n: path.len(),
        u: c.size_u(),
        t: c.size_t(),
        v1: c.size_v1(),
        v2: c.size_v2(),
        good: c.is_good(eps),
        attempts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodSpineReport {
    pub config: ExperimentConfig,
    pub good: u64,
    pub frequency: f64,
    pub wilson: (f64, f64),
    pub u_over_n: Summary,
    pub t_over_n: Summary,
    pub v1_over_n: Summary,
    pub v2_over_n: Summary,
    pub mean_attempts: f64,
    pub rows: Vec<SpineRow>,
}

pub fn run_good_spine_experiment(config: &ExperimentConfig) -> Result<GoodSpineReport> {
    config.validate()?;
    let ExperimentConfig { d, n, eps, seed, trials, .. } = *config;
    let rows: Vec<SpineRow> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, purpose::WALK, t);
            let s = sample_uniform_saw(d, n, &mut r, SAMPLER_BUDGET)?;
            spine_row(t, &s.path, eps, s.attempts)
        })
        .collect::<Result<_>>()?;
    good_spine_summary(config, rows)
}

pub fn good_spine_summary(config: &ExperimentConfig, rows: Vec<SpineRow>) -> Result<GoodSpineReport> {
    let nf = config.n as f64;
    let frac = |f: fn(&SpineRow) -> usize| summarize(&rows.iter().map(|r| f(r) as f64 / nf).collect::<Vec<_>>());
    let good = rows.iter().filter(|r| r.good).count() as u64;
    let total = rows.len() as u64;
    Ok(GoodSpineReport {
        config: *config,
        good,
        frequency: good as f64 / total as f64,
        wilson: wilson_interval(good, total, 1.96),
        u_over_n: frac(|r| r.u),
        t_over_n: frac(|r| r.t),
        v1_over_n: frac(|r| r.v1),
        v2_over_n: frac(|r| r.v2),
        mean_attempts: rows.iter().map(|r| r.attempts as f64).sum::<f64>() / total as f64,
        rows,
    })
}

/// ln |S_N| from the rejection sampler: ln(2d(2d-1)^{N-1}) plus the log of
/// the fraction of π¹ proposals accepted.
pub fn log_saw_from_acceptance(d: usize, n: usize, samples: u64, attempts: u64) -> f64 {
    let q = (2 * d) as f64;
    q.ln() + (n as f64 - 1.0) * (q - 1.0).ln() + (samples as f64 / attempts as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateRun {
    pub config: ExperimentConfig,
    pub log_saw: f64,
    /// ln |S_N| enumerated rather than estimated.
    pub log_saw_exact: bool,
    pub report: CertificateReport,
}

/// Samples (S, ω) from π_N ⊗ P_p and reports how often Z̃_N ≤ e^{cN} p^N |S_N|.
pub fn run_certificate(config: &ExperimentConfig, c: f64) -> Result<CertificateRun> {
    config.validate()?;
    let ExperimentConfig { d, n, p, seed, trials, .. } = *config;
    let draws: Vec<(f64, u64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, purpose::SPINE, t);
            let s = sample_uniform_saw(d, n, &mut r, SAMPLER_BUDGET)?;
            let env = Environment::new(p, env_seed(seed, t, 0))?;
            let z = tilde_partition(&make_spined(env, &s.path)?, n)?;
            Ok((ln_biguint(&z), s.attempts))
        })
        .collect::<Result<_>>()?;
    let log_saw_exact = n <= feasible_length(d, ANNEALED_BUDGET);
    let log_saw = if log_saw_exact {
        ln_biguint(&count_saw(d, n)?)
    } else {
        log_saw_from_acceptance(d, n, trials, draws.iter().map(|x| x.1).sum())
    };
    let log_tilde: Vec<f64> = draws.iter().map(|x| x.0).collect();
    let report = strong_disorder_certificate(&log_tilde, c, n, p, log_saw)?;
    Ok(CertificateRun { config: *config, log_saw, log_saw_exact, report })
}

/// Environments drawn per good spine in the bridge experiment.
pub const ENVIRONMENTS_PER_SPINE: u64 = 25;

/// Uniform self-avoiding spines are drawn until one is good, at most this often.
pub const GOOD_SPINE_BUDGET: u64 = 10_000;

/// Every this-many-th trial also runs the injection audit.
pub const INJECTION_STRIDE: u64 = 10;

pub const INJECTION_CAP: u64 = 1 << 12;

pub fn sample_good_spine(d: usize, n: usize, eps: f64, seed: u64, group: u64) -> Result<Path> {
    let mut r = rng::stream(seed, purpose::SPINE, group);
    for _ in 0..GOOD_SPINE_BUDGET {
        let s = sample_uniform_saw(d, n, &mut r, SAMPLER_BUDGET)?.path;
        if census(&s)?.is_good(eps) {
            return Ok(s);
        }
    }
    Err(Error::AttemptsExhausted { attempts: GOOD_SPINE_BUDGET })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeTrial {
    pub trial: u64,
    pub group: u64,
    pub size_a0: usize,
    pub size_u: usize,
    pub sizes: (usize, usize, usize),
    pub floor_log2: f64,
    /// log₂ floor ≥ |A| + 2m - log₂(4m), m = min(|B|, |C|).
    pub lowb_ok: bool,
    pub injection_ok: Option<bool>,
    pub overlap_ok: bool,
}

/// Empirical lower tail of a bridge count against its McDiarmid bound,
/// within one spine group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheck {
    pub set: &'static str,
    pub group: u64,
    pub sigmas: f64,
    pub n_vars: usize,
    pub empirical: f64,
    pub bound: f64,
}

impl TailCheck {
    pub fn ok(&self) -> bool {
        self.empirical <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeReport {
    pub config: ExperimentConfig,
    pub target: f64,
    pub a_over_n: Summary,
    pub b_over_n: Summary,
    pub c_over_n: Summary,
    pub floor_log2_over_n: Summary,
    pub lowb_violations: u64,
    pub injection_checked: u64,
    pub injection_failures: u64,
    pub overlap_failures: u64,
    pub tails: Vec<TailCheck>,
    pub trials: Vec<BridgeTrial>,
}

impl BridgeReport {
    pub fn census_rows(&self) -> Vec<CensusRow> {
        self.trials
            .iter()
            .map(|t| CensusRow {
                trial: t.trial,
                n: self.config.n,
                p: self.config.p,
                d: self.config.d,
                size_a: t.sizes.0,
                size_b: t.sizes.1,
                size_c: t.sizes.2,
                floor_log2: t.floor_log2,
            })
            .collect()
    }
}

fn lowb_holds(floor_log2: f64, a: usize, b: usize, c: usize) -> bool {
    let m = b.min(c);
    if m == 0 {
        return floor_log2 >= a as f64 - 1e-9;
    }
    floor_log2 >= a as f64 + 2.0 * m as f64 - (4.0 * m as f64).log2() - 1e-9
}

/// Bridge sets over good spines: `trials` (spine, environment) pairs, with
/// [`ENVIRONMENTS_PER_SPINE`] environments per spine.
pub fn run_bridge_experiment(config: &ExperimentConfig) -> Result<BridgeReport> {
    config.validate()?;
    let ExperimentConfig { d, n, p, eps, seed, trials } = *config;
    let per = ENVIRONMENTS_PER_SPINE.min(trials);
    let groups = trials.div_ceil(per);
    let spines: Vec<(Path, usize, usize)> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let s = sample_good_spine(d, n, eps, seed, g)?;
            let c = PathCensus::compute(&s, TConvention::Backward)?;
            let a0 = detect_bridges(&Environment::new(0.0, 0)?, &s)?.a0.len();
            Ok((s, a0, c.size_u()))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<BridgeTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let g = t / per;
            let (spine, a0, u) = &spines[g as usize];
            let env = Environment::new(p, env_seed(seed, t, 0))?;
            let sets = detect_bridges(&env, spine)?;
            let sizes = sets.sizes();
            let bound = count_lower_bound(sizes.0, sizes.1, sizes.2);
            let floor_log2 = ln_biguint(&bound) / LN_2;
            let injection_ok = if t % INJECTION_STRIDE == 0 {
                let spined = make_spined(&env, spine)?;
                Some(audit_selections(&spined, &sets, INJECTION_CAP)?.passed())
            } else {
                None
            };
            Ok(BridgeTrial {
                trial: t,
                group: g,
                size_a0: *a0,
                size_u: *u,
                sizes,
                floor_log2,
                lowb_ok: lowb_holds(floor_log2, sizes.0, sizes.1, sizes.2),
                injection_ok,
                overlap_ok: overlap_audit(spine, &sets).is_empty(),
            })
        })
        .collect::<Result<_>>()?;
    let nf = n as f64;
    let frac = |f: &dyn Fn(&BridgeTrial) -> f64| summarize(&rows.iter().map(|r| f(r) / nf).collect::<Vec<_>>());
    let mut tails = Vec::new();
    for g in 0..groups {
        let members: Vec<&BridgeTrial> = rows.iter().filter(|r| r.group == g).collect();
        for (name, pick, n_vars) in [
            ("A", (|r: &BridgeTrial| r.sizes.0) as fn(&BridgeTrial) -> usize, members[0].size_a0),
            ("B", |r: &BridgeTrial| r.sizes.1, members[0].size_u),
        ] {
            let xs: Vec<f64> = members.iter().map(|r| pick(r) as f64).collect();
            let s = summarize(&xs);
            if !(s.std_dev > 0.0) || n_vars == 0 {
                continue;
            }
            for k in [2.0, 3.0] {
                let x = k * s.std_dev;
                let below = xs.iter().filter(|&&v| v <= s.mean - x).count();
                tails.push(TailCheck {
                    set: name,
                    group: g,
                    sigmas: k,
                    n_vars,
                    empirical: below as f64 / xs.len() as f64,
                    bound: mcdiarmid_tail(x, n_vars, 1.0),
                });
            }
        }
    }
    Ok(BridgeReport {
        config: *config,
        target: 1.0 / ((2 * d) as f64).powi(2),
        a_over_n: frac(&|r| r.sizes.0 as f64),
        b_over_n: frac(&|r| r.sizes.1 as f64),
        c_over_n: frac(&|r| r.sizes.2 as f64),
        floor_log2_over_n: frac(&|r| r.floor_log2),
        lowb_violations: rows.iter().filter(|r| !r.lowb_ok).count() as u64,
        injection_checked: rows.iter().filter(|r| r.injection_ok.is_some()).count() as u64,
        injection_failures: rows.iter().filter(|r| r.injection_ok == Some(false)).count() as u64,
        overlap_failures: rows.iter().filter(|r| !r.overlap_ok).count() as u64,
        tails,
        trials: rows,
    })
}

/// One seeded instance of the injection audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectionInstance {
    pub instance: u64,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub sizes: (usize, usize, usize),
    pub bound: String,
    pub enumerated: u64,
    pub complete: bool,
    pub passed: bool,
    pub overlap_problems: usize,
    pub first_violation: Option<String>,
}

/// Injection audit over `instances` seeded (spine, environment) pairs with
/// d in {4, 5}, N in {50, ..., 200} and p = 1/(2d).
pub fn injection_audit(instances: u64, seed: u64, cap: u64) -> Result<Vec<InjectionInstance>> {
    (0..instances)
        .into_par_iter()
        .map(|i| {
            let d = 4 + (i % 2) as usize;
            let n = 50 + ((i / 2) % 151) as usize;
            let mut r = rng::stream(seed, purpose::SPINE, i);
            let spine = sample_uniform_saw(d, n, &mut r, SAMPLER_BUDGET)?.path;
            let env = Environment::new(1.0 / (2 * d) as f64, env_seed(seed, i, 0))?;
            let sets = detect_bridges(&env, &spine)?;
            let spined = make_spined(&env, &spine)?;
            let audit = audit_selections(&spined, &sets, cap)?;
            Ok(InjectionInstance {
                instance: i,
                d,
                n,
                sizes: sets.sizes(),
                bound: audit.bound.to_string(),
                enumerated: audit.enumerated,
                complete: audit.complete,
                passed: audit.passed(),
                overlap_problems: overlap_audit(&spine, &sets).len(),
                first_violation: audit.violations.first().cloned(),
            })
        })
        .collect()
}

/// Result of one verification case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Case {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub suite: String,
    pub cases: Vec<Case>,
}

impl Manifest {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.status == Status::Pass)
    }

    pub fn failures(&self) -> Vec<&Case> {
        self.cases.iter().filter(|c| c.status == Status::Fail).collect()
    }
}

/// Knobs for the negative controls; the defaults are the verified settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerifyOptions {
    pub recipe: HashRecipe,
    pub weight_direction: WeightDirection,
}

/// Frozen edge-hash vectors: (base, axis, seed, raw hash, 53-bit uniform).
pub const HASH_VECTORS: [(&[i64], usize, u64, u64, u64); 5] = [
    (&[0, 0], 0, 1, 0x8d1ace904a398d17, 2768654964659479),
    (&[0, 0], 1, 1, 0x8d1acd904a398b64, 1930587344188080),
    (&[3, -2], 0, 42, 0x7bcb3e90406c72ea, 809217813119583),
    (&[0, 0, 0], 2, 0, 0xf16b3103a27b504c, 5488270684356892),
    (&[-1, 5, 7, 0], 3, 123456789, 0x4cb5723617394fab, 1723423690404050),
];

fn hash_vectors_match(recipe: HashRecipe) -> (bool, String) {
    let mut bad = Vec::new();
    for (i, (base, axis, seed, fnv, u53)) in HASH_VECTORS.iter().enumerate() {
        let env = Environment::with_recipe(0.5, *seed, recipe).expect("valid p");
        if recipe.edge_hash(base, *axis) != *fnv || env.uniform_bits(base, *axis) != *u53 {
            bad.push(i);
        }
    }
    (bad.is_empty(), format!("{} of {} vectors differ {:?}", bad.len(), HASH_VECTORS.len(), bad))
}

fn rat(a: i64, b: i64) -> BigRational {
    BigRational::new(a.into(), b.into())
}

/// Runs every exhaustive oracle and returns the manifest. Output depends
/// only on `opts`, never on timing or thread count.
pub fn run_all_verifications(opts: VerifyOptions) -> Manifest {
    let checks: Vec<(&str, Box<dyn Fn() -> Result<(bool, String)> + Sync>)> = vec![
        ("environment.hash_vectors", Box::new(move || Ok(hash_vectors_match(opts.recipe)))),
        (
            "environment.negative_control_corrupted_recipe",
            Box::new(|| {
                let bad = HashRecipe { prime: HashRecipe::default().prime ^ 2, ..HashRecipe::default() };
                let (ok, detail) = hash_vectors_match(bad);
                Ok((!ok, format!("corrupted prime detected: {detail}")))
            }),
        ),
        (
            "paths.saw_spot_values",
            Box::new(|| {
                let d2: Vec<u64> = (1..=4).map(|n| count_saw(2, n).map(|c| c.to_u64().unwrap())).collect::<Result<_>>()?;
                let d3: Vec<u64> = (1..=3).map(|n| count_saw(3, n).map(|c| c.to_u64().unwrap())).collect::<Result<_>>()?;
                Ok((d2 == [4, 12, 36, 100] && d3 == [6, 30, 150], format!("d=2 {d2:?}, d=3 {d3:?}")))
            }),
        ),
        (
            "paths.no4_spot_values",
            Box::new(|| {
                let v: Vec<u64> = (1..=4).map(|n| count_saw_no4(2, n).map(|c| c.to_u64().unwrap())).collect::<Result<_>>()?;
                Ok((v == [4, 12, 36, 100], format!("d=2 {v:?}")))
            }),
        ),
        (
            "sizebias.spine_lemma_d2_n2",
            Box::new(|| {
                let mut detail = Vec::new();
                let mut ok = true;
                for p in [rat(1, 4), rat(1, 2), rat(3, 4)] {
                    let tv = size_biased_law_exact(2, 2, &p)?.tv_distance(&spine_law_exact(2, 2, &p)?);
                    ok &= tv.is_zero();
                    detail.push(format!("p={p}: tv={tv}"));
                }
                Ok((ok, detail.join("; ")))
            }),
        ),
        (
            "sizebias.annealed_identity",
            Box::new(|| {
                let mut detail = Vec::new();
                let mut ok = true;
                for (d, n) in [(2usize, 1usize), (2, 2), (3, 1)] {
                    for p in [rat(1, 3), rat(1, 2)] {
                        let (lhs, rhs) = annealed_identity_exact(relevant_edges(n as u64, &Site::origin(d)), &Site::origin(d), n, &p)?;
                        let saw = BigRational::from_integer(BigInt::from(count_saw(d, n)?));
                        let good = lhs == rhs && rhs == Pow::pow(p.clone(), n as u32) * saw;
                        ok &= good;
                        detail.push(format!("d={d} N={n} p={p}: E Z={lhs}"));
                    }
                }
                Ok((ok, detail.join("; ")))
            }),
        ),
        (
            "sizebias.reweighting_identity",
            Box::new(|| {
                let rows = reweighting_rows(2, 2, &rat(1, 2))?;
                let ok = !rows.is_empty() && rows.iter().all(|r| r.plain == r.reweighted);
                Ok((ok, format!("{} dyadic intervals", rows.len())))
            }),
        ),
        (
            "sizebias.density_normalization",
            Box::new(|| {
                let total = size_biased_law_exact(2, 2, &rat(1, 4))?.total();
                Ok((total.is_one(), format!("total mass {total}")))
            }),
        ),
        (
            "refwalks.pi1_exact_uniform",
            Box::new(|| {
                let mut ok = true;
                for n in 1..=4usize {
                    let law = exact_law(WalkKind::Pi1, 2, n);
                    let expect = rat(1, 4 * 3i64.pow(n as u32 - 1));
                    ok &= law.iter().all(|(_, pr)| *pr == expect);
                }
                Ok((ok, "d=2, N<=4".into()))
            }),
        ),
        (
            "refwalks.pi2_law_direction",
            Box::new(move || {
                let r = verify_pi2_law(2, 5, opts.weight_direction)?;
                let ratio = r.observed_ratio.as_ref().map(|x| x.to_string()).unwrap_or_default();
                Ok((r.passed(), format!("{} paths, one more U-turn multiplies by {ratio}, weight uniformizes: {}", r.paths, r.weight_uniformizes)))
            }),
        ),
        (
            "refwalks.negative_control_flipped_weight",
            Box::new(|| {
                let r = verify_pi2_law(2, 5, WeightDirection::Flipped)?;
                Ok((!r.passed(), format!("flipped weight uniformizes: {}", r.weight_uniformizes)))
            }),
        ),
        (
            "bridges.count_lower_bound",
            Box::new(|| {
                let v = count_lower_bound(3, 4, 3);
                Ok((v == BigUint::from(280u32) && count_lower_bound(0, 0, 0).is_one(), format!("(3,4,3) -> {v}")))
            }),
        ),
        (
            "bridges.injection_audit",
            Box::new(|| {
                let rows = injection_audit(40, 7, 1 << 12)?;
                let bad: Vec<u64> = rows.iter().filter(|r| !r.passed || r.overlap_problems > 0).map(|r| r.instance).collect();
                let paths: u64 = rows.iter().map(|r| r.enumerated).sum();
                Ok((bad.is_empty(), format!("{} instances, {paths} paths, failing {bad:?}", rows.len())))
            }),
        ),
        (
            "experiments.threshold_gap",
            Box::new(|| {
                let mut worst = 0.0f64;
                let mut positive = true;
                for d in 2..=64usize {
                    let gap = threshold_gap(d, 0.1)?;
                    let closed = (3.0 * LN_2 - 1.5 - 0.1) / ((2 * d) as f64).powi(3);
                    worst = worst.max(((gap - closed) / closed).abs());
                    positive &= gap > 0.0;
                }
                Ok((worst <= 1e-15 && positive, format!("max relative error {worst:e}")))
            }),
        ),
        (
            "experiments.annealed_constant_identity",
            Box::new(|| {
                let mut ok = true;
                for n in 1..=8usize {
                    let a = annealed_constant_at(3, 0.3, n)?;
                    let direct = 0.3 * count_saw(3, n)?.to_f64().unwrap().powf(1.0 / n as f64);
                    ok &= ((a.value - direct) / direct).abs() < 1e-12;
                }
                Ok((ok, "E[Z_N]^(1/N) = p |S_N|^(1/N), d=3, N<=8".into()))
            }),
        ),
    ];
    let cases = checks
        .par_iter()
        .map(|(name, f)| {
            let (status, detail) = match f() {
                Ok((true, d)) => (Status::Pass, d),
                Ok((false, d)) => (Status::Fail, d),
                Err(e) => (Status::Fail, format!("error: {e}")),
            };
            Case { name: (*name).to_string(), status, detail }
        })
        .collect();
    Manifest { suite: "dilute-saw verification".into(), cases }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_values() {
        let c = threshold_series().0[3].value(0.0);
        assert!((c - 4.079_441_541_679_836).abs() < 1e-15);
        let t = threshold_bound(10, 0.0).unwrap();
        assert!((t - (0.05 + 0.0025 + (2.0 + 3.0 * LN_2) / 8000.0)).abs() < 1e-16);
        assert!((t - 0.0530099).abs() < 1e-7);
        assert!(threshold_bound(10, 5.0).is_err());
        assert!(threshold_bound(10, -0.1).is_err());
        for d in 2..40 {
            assert!(threshold_bound(d + 1, 0.0).unwrap() < threshold_bound(d, 0.0).unwrap());
        }
    }

    #[test]
    fn pc_values() {
        assert_eq!(pc_series().0[3].value(0.0), 3.5);
        assert!((pc_expansion(10).unwrap() - 0.0529375).abs() < 1e-16);
    }

    #[test]
    fn gap_sign_change() {
        let crit = 3.0 * LN_2 - 1.5;
        for d in 2..=64 {
            assert!(threshold_gap(d, crit - 1e-6).unwrap() > 0.0);
            assert!(threshold_gap(d, crit + 1e-6).unwrap() < 0.0);
        }
    }

    #[test]
    fn mu_values() {
        assert_eq!(mu_expansion(4), 6.875);
        assert_eq!(mu_expansion(7), mu4_expansion(7));
        let root = count_saw(3, 10).unwrap().to_f64().unwrap().powf(0.1);
        assert!(root > mu_expansion(3));
    }

    #[test]
    fn annealed_constant_cases() {
        assert_eq!(annealed_constant(3, 0.0).unwrap().value, 0.0);
        let a = annealed_constant_at(4, 1.0, 1).unwrap();
        assert_eq!(a.value, 8.0);
        assert!(feasible_length(3, ANNEALED_BUDGET) >= 10);
    }

    #[test]
    fn survival_rates_d2() {
        let rows = survival_rows(2, 5, SURVIVAL_BAND_K).unwrap();
        assert_eq!(rows[2].probability, 1.0);
        assert!((rows[3].probability - 100.0 / 108.0).abs() < 1e-15);
        assert!(rows[0].rate.is_none());
    }

    #[test]
    fn acceptance_estimate_of_saw_count() {
        let (d, n, trials) = (3, 10, 4000u64);
        let attempts: u64 = (0..trials)
            .map(|t| sample_uniform_saw(d, n, &mut rng::stream(4, purpose::WALK, t), SAMPLER_BUDGET).unwrap().attempts)
            .sum();
        let est = log_saw_from_acceptance(d, n, trials, attempts);
        let exact = ln_biguint(&count_saw(d, n).unwrap());
        // acceptance is about 0.4 here, so 5% is many standard errors
        assert!((est - exact).abs() < 0.05, "{est} vs {exact}");
    }

    #[test]
    fn certificate_d3_n24() {
        let config = ExperimentConfig { d: 3, n: 24, p: 0.26, eps: 0.5, trials: 1000, seed: 8 };
        let run = run_certificate(&config, 0.02).unwrap();
        assert!(!run.log_saw_exact);
        let r = &run.report;
        assert_eq!(r.samples, 1000);
        assert!(r.wilson_low <= r.frequency && r.frequency <= r.wilson_high);
        let p1 = run_certificate(&ExperimentConfig { p: 1.0, n: 8, trials: 20, ..config }, 0.02).unwrap();
        assert!(p1.log_saw_exact);
        assert_eq!(p1.report.frequency, 1.0);
    }

    #[test]
    fn annealed_mc_small() {
        let c = annealed_mc_check(2, 4, 0.5, 2000, 3).unwrap();
        assert!(c.z_score().abs() < 4.0, "{c:?}");
    }

    #[test]
    fn quenched_full_density() {
        let cfg = ExperimentConfig { d: 3, n: 6, p: 1.0, eps: 0.5, trials: 3, seed: 1 };
        let r = run_quenched_estimate(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| (row.ratio - 1.0).abs() < 1e-12 && row.exact_reference));
    }

    #[test]
    fn quenched_monotone_in_p() {
        let origin = Site::origin(3);
        for t in 0..10 {
            let s = env_seed(5, t, 0);
            let lo = Environment::new(0.3, s).unwrap();
            let hi = Environment::new(0.5, s).unwrap();
            let zl = growth_sequence(&lo, 8, &origin).unwrap();
            let zh = growth_sequence(&hi, 8, &origin).unwrap();
            assert!(zl.iter().zip(&zh).all(|(a, b)| a.z <= b.z));
        }
    }

    #[test]
    fn quenched_reports_budget() {
        let cfg = ExperimentConfig { d: 2, n: 6, p: 0.0, eps: 0.5, trials: 1, seed: 1 };
        assert_eq!(run_quenched_estimate(&cfg), Err(Error::NoPercolatingStart { budget: PERCOLATION_BUDGET }));
    }

    #[test]
    fn good_spine_pipeline() {
        let cfg = ExperimentConfig { d: 4, n: 40, p: 0.5, eps: 0.5, trials: 200, seed: 2 };
        let r = run_good_spine_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 200);
        assert!(r.frequency > 0.0);
        let straight = spine_row(0, &Path::straight(4, 40), 0.5, 1).unwrap();
        assert!(!straight.good);
    }

    #[test]
    fn bridge_experiment_closed() {
        let cfg = ExperimentConfig { d: 4, n: 60, p: 0.0, eps: 0.5, trials: 30, seed: 3 };
        let r = run_bridge_experiment(&cfg).unwrap();
        assert!(r.trials.iter().all(|t| t.floor_log2 == 0.0));
        assert_eq!(r.lowb_violations, 0);
    }

    #[test]
    fn config_validation() {
        let ok = ExperimentConfig { d: 3, n: 5, p: 0.5, eps: 0.5, trials: 1, seed: 0 };
        assert!(ok.validate().is_ok());
        assert!(ExperimentConfig { d: 1, ..ok }.validate().is_err());
        assert!(ExperimentConfig { p: 1.5, ..ok }.validate().is_err());
        assert!(ExperimentConfig { trials: 0, ..ok }.validate().is_err());
        assert!(ExperimentConfig { eps: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn negative_controls_trip() {
        let corrupted = VerifyOptions {
            recipe: HashRecipe { offset_basis: HashRecipe::default().offset_basis + 1, ..HashRecipe::default() },
            ..Default::default()
        };
        let hash_only = |m: &Manifest, name: &str| m.cases.iter().find(|c| c.name == name).unwrap().status;
        let m = run_all_verifications(corrupted);
        assert_eq!(hash_only(&m, "environment.hash_vectors"), Status::Fail);
        let m = run_all_verifications(VerifyOptions { weight_direction: WeightDirection::Flipped, ..Default::default() });
        assert_eq!(hash_only(&m, "refwalks.pi2_law_direction"), Status::Fail);
        assert_eq!(hash_only(&m, "environment.hash_vectors"), Status::Pass);
    }
}
