//! The size-biased tagged lineage.
//!
//! Under the size-biased measure the log-size of the tagged individual is a
//! random walk whose steps follow [`StepDistribution`], and the individual of
//! size `y` lives an exponential time of rate `y^α`. Two equivalent ways of
//! reading the size at a fixed time are provided: walking the lineage and
//! adding up lifetimes, or time-changing a compound Poisson process `η`:
//!
//! ```text
//! χ(t) = x · exp(η(τ(t x^α))),   ∫_0^{τ(u)} exp(-α η_s) ds = u.
//! ```
//!
//! The exponential functional `I = ∫_0^∞ exp(α η_s) ds` and the variable `Y`
//! with `E k(Y^α) = E(k(I) / I) / (α m1)` describe the large-time behavior.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replaw::{Estimate, LawError, ReproductionLaw, StepDistribution};
use crate::streams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaggedError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),
    #[error("compound Poisson path too short: clock reached {reached} of {needed}")]
    PathTooShort { reached: f64, needed: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// The spine of a law at its Malthusian exponent.
#[derive(Debug, Clone)]
pub struct Spine {
    law: ReproductionLaw,
    p0: f64,
    kappa_prime: f64,
    steps: StepDistribution,
}

impl Spine {
    /// `pool_size` only matters for continuous laws (see [`StepDistribution`]).
    pub fn new(law: &ReproductionLaw, p0: f64, pool_size: usize, seed: u64) -> Result<Self, TaggedError> {
        let k = law.kappa(p0)?;
        if k.abs() > 1e-9 {
            return Err(LawError::InconsistentExponent { total: 1.0 - k }.into());
        }
        let mut rng = streams::stream(seed);
        let steps = StepDistribution::new(law, p0, pool_size, &mut rng)?;
        Ok(Self {
            law: law.clone(),
            p0,
            kappa_prime: law.kappa_prime(p0)?,
            steps,
        })
    }

    pub fn law(&self) -> &ReproductionLaw {
        &self.law
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// `κ'(p0)`; the walk drifts to `-∞` iff this is positive.
    pub fn kappa_prime(&self) -> f64 {
        self.kappa_prime
    }

    /// `|κ'(p0)|`.
    pub fn m1(&self) -> f64 {
        self.kappa_prime.abs()
    }

    pub fn steps(&self) -> &StepDistribution {
        &self.steps
    }

    pub fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.steps.sample(rng)
    }
}

/// Log-sizes, lifetimes and birth times along the tagged lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedPath {
    pub log_sizes: Vec<f64>,
    pub lifetimes: Vec<f64>,
    pub birth_times: Vec<f64>,
}

impl TaggedPath {
    /// Size of the tagged individual alive at `t`, if the path reaches `t`.
    pub fn chi_at(&self, t: f64) -> Option<f64> {
        let k = self.birth_times.partition_point(|&b| b <= t);
        if k == 0 {
            return None;
        }
        let k = k - 1;
        (t < self.birth_times[k] + self.lifetimes[k]).then(|| self.log_sizes[k].exp())
    }
}

/// `n` generations of the tagged lineage from a root of size `x`:
/// `S_0 = ln x`, i.i.d. steps, and lifetime `k` exponential of rate
/// `exp(α S_k)`.
pub fn simulate_tagged_walk<R: Rng + ?Sized>(
    spine: &Spine,
    alpha: f64,
    n: usize,
    x: f64,
    rng: &mut R,
) -> Result<TaggedPath, TaggedError> {
    if n == 0 || !(x > 0.0) || !(alpha >= 0.0) {
        return Err(TaggedError::Invalid(format!(
            "need n >= 1, x > 0, alpha >= 0 (got n={n}, x={x}, alpha={alpha})"
        )));
    }
    let mut log_sizes = Vec::with_capacity(n + 1);
    let mut lifetimes = Vec::with_capacity(n);
    let mut birth_times = Vec::with_capacity(n);
    let mut s = x.ln();
    let mut birth = 0.0;
    log_sizes.push(s);
    for _ in 0..n {
        let e: f64 = Exp1.sample(rng);
        let life = e * (-alpha * s).exp();
        birth_times.push(birth);
        lifetimes.push(life);
        birth += life;
        s += spine.step(rng);
        log_sizes.push(s);
    }
    Ok(TaggedPath {
        log_sizes,
        lifetimes,
        birth_times,
    })
}

/// `χ(t)` read off the lineage clock: walk down the lineage, adding up
/// lifetimes, until the current individual is alive at `t`.
pub fn chi_by_walk<R: Rng + ?Sized>(spine: &Spine, alpha: f64, x: f64, t: f64, rng: &mut R) -> f64 {
    let mut s = x.ln();
    let mut birth = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        let death = birth + e * (-alpha * s).exp();
        if death > t {
            return s.exp();
        }
        birth = death;
        s += spine.step(rng);
    }
}

/// A piecewise-constant path of `η = S ∘ N`, `N` a unit-rate Poisson process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoissonPath {
    pub jump_times: Vec<f64>,
    /// Levels between jumps; `values[0] = 0` and `values.len() = jump_times.len() + 1`.
    pub values: Vec<f64>,
    pub horizon: f64,
}

impl CompoundPoissonPath {
    /// `η_s` for `s` within the horizon.
    pub fn value_at(&self, s: f64) -> Option<f64> {
        (s <= self.horizon).then(|| self.values[self.jump_times.partition_point(|&j| j <= s)])
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }
}

pub fn simulate_eta<R: Rng + ?Sized>(
    spine: &Spine,
    horizon: f64,
    rng: &mut R,
) -> Result<CompoundPoissonPath, TaggedError> {
    if !(horizon > 0.0) {
        return Err(TaggedError::Invalid(format!("horizon {horizon} must be > 0")));
    }
    let mut jump_times = Vec::new();
    let mut values = vec![0.0];
    let mut t = 0.0;
    let mut level = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e;
        if t > horizon {
            break;
        }
        level += spine.step(rng);
        jump_times.push(t);
        values.push(level);
    }
    Ok(CompoundPoissonPath {
        jump_times,
        values,
        horizon,
    })
}

/// `χ(t) = x exp(η_{τ(t x^α)})` with `τ` the inverse of
/// `s -> ∫_0^s exp(-α η_r) dr`. The integral is piecewise linear, so `τ` is
/// exact up to rounding. With `α = 0` the clock is the identity.
pub fn lamperti_chi(eta: &CompoundPoissonPath, alpha: f64, x: f64, t: f64) -> Result<f64, TaggedError> {
    if !(t >= 0.0) || !(x > 0.0) || !(alpha >= 0.0) {
        return Err(TaggedError::Invalid(format!(
            "need t >= 0, x > 0, alpha >= 0 (got t={t}, x={x}, alpha={alpha})"
        )));
    }
    let target = t * x.powf(alpha);
    let mut clock = 0.0;
    let mut start = 0.0;
    for (k, &level) in eta.values.iter().enumerate() {
        let end = eta.jump_times.get(k).copied().unwrap_or(eta.horizon);
        let rate = (-alpha * level).exp();
        let span = (end - start) * rate;
        if clock + span > target {
            return Ok(x * level.exp());
        }
        clock += span;
        start = end;
    }
    Err(TaggedError::PathTooShort {
        reached: clock,
        needed: target,
    })
}

/// `χ(t)` through the Lamperti representation, extending the simulated `η`
/// path until its clock covers `t`.
pub fn chi_by_lamperti<R: Rng + ?Sized>(
    spine: &Spine,
    alpha: f64,
    x: f64,
    t: f64,
    rng: &mut R,
) -> Result<f64, TaggedError> {
    let mut horizon = (t * x.powf(alpha)).max(1.0);
    let mut eta = simulate_eta(spine, horizon, rng)?;
    loop {
        match lamperti_chi(&eta, alpha, x, t) {
            Err(TaggedError::PathTooShort { .. }) => {
                // continue the same path on (horizon, 2 horizon]
                let new_horizon = 2.0 * horizon;
                // memorylessness: restart the Poisson clock at the old horizon
                let mut s = horizon;
                let mut level = *eta.values.last().expect("nonempty");
                loop {
                    let e: f64 = Exp1.sample(rng);
                    s += e;
                    if s > new_horizon {
                        break;
                    }
                    level += spine.step(rng);
                    eta.jump_times.push(s);
                    eta.values.push(level);
                }
                eta.horizon = new_horizon;
                horizon = new_horizon;
            }
            other => return other,
        }
    }
}

/// One draw of `I` together with its certified relative truncation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub value: f64,
    /// Bound on `E(remaining tail | path so far) / value`.
    pub truncation_error: f64,
}

/// Sampler for `I = ∫_0^∞ exp(α η_s) ds`.
#[derive(Debug, Clone)]
pub struct ExponentialFunctional<'a> {
    spine: &'a Spine,
    alpha: f64,
    tail_tol: f64,
    mean_bound: f64,
    exact_mean: bool,
}

const MAX_JUMPS: usize = 100_000_000;

impl<'a> ExponentialFunctional<'a> {
    /// Requires `κ'(p0) > 0` (so `η` drifts to `-∞` and `I < ∞`) and `α > 0`.
    ///
    /// The tail after a jump to level `h` is `exp(α h)` times an independent
    /// copy of `I`, so a bound on `E(I)` certifies the truncation. When
    /// `κ(p0 + α) > 0` that mean is exactly `1 / κ(p0 + α)`; otherwise it is
    /// estimated by a pilot run.
    pub fn new(spine: &'a Spine, alpha: f64, tail_tol: f64, seed: u64) -> Result<Self, TaggedError> {
        if !(spine.kappa_prime() > 0.0) {
            return Err(TaggedError::UnsupportedRegime(format!(
                "kappa'(p0) = {} <= 0: the tagged log-size does not drift to -infinity",
                spine.kappa_prime()
            )));
        }
        if !(alpha > 0.0) {
            return Err(TaggedError::UnsupportedRegime(format!(
                "alpha = {alpha}: the exponential functional needs alpha > 0"
            )));
        }
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return Err(TaggedError::Invalid(format!("tail_tol {tail_tol} not in (0, 1)")));
        }
        let laplace = spine.law().kappa(spine.p0() + alpha).ok();
        let mut sampler = Self {
            spine,
            alpha,
            tail_tol,
            mean_bound: f64::NAN,
            exact_mean: false,
        };
        match laplace {
            Some(k) if k > 0.0 => {
                sampler.mean_bound = 1.0 / k;
                sampler.exact_mean = true;
            }
            _ => {
                sampler.mean_bound = sampler.pilot_mean(seed)?;
            }
        }
        Ok(sampler)
    }

    fn pilot_mean(&self, seed: u64) -> Result<f64, TaggedError> {
        let mut rng = streams::stream(seed);
        let n = 2000;
        let mut total = 0.0;
        for _ in 0..n {
            let mut acc = 0.0;
            let mut level = 0.0;
            for _ in 0..MAX_JUMPS {
                let e: f64 = Exp1.sample(&mut rng);
                acc += (self.alpha * level).exp() * e;
                level += self.spine.step(&mut rng);
                if (self.alpha * level).exp() < 1e-12 * acc {
                    break;
                }
            }
            total += acc;
        }
        Ok(2.0 * total / n as f64)
    }

    /// The bound on `E(I)` used by the stopping rule.
    pub fn mean_bound(&self) -> f64 {
        self.mean_bound
    }

    /// Whether `mean_bound` is the exact `E(I)` rather than a pilot estimate.
    pub fn has_exact_mean(&self) -> bool {
        self.exact_mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FunctionalSample, TaggedError> {
        let mut acc = 0.0;
        let mut level = 0.0;
        for _ in 0..MAX_JUMPS {
            let e: f64 = Exp1.sample(rng);
            acc += (self.alpha * level).exp() * e;
            level += self.spine.step(rng);
            let tail = (self.alpha * level).exp() * self.mean_bound;
            if tail <= self.tail_tol * acc {
                return Ok(FunctionalSample {
                    value: acc,
                    truncation_error: tail / acc,
                });
            }
        }
        Err(TaggedError::UnsupportedRegime(format!(
            "exponential functional did not converge within {MAX_JUMPS} jumps"
        )))
    }
}

/// Convenience wrapper: one draw of `I` for a spine.
pub fn sample_exponential_functional<R: Rng + ?Sized>(
    spine: &Spine,
    alpha: f64,
    tail_tol: f64,
    rng: &mut R,
) -> Result<FunctionalSample, TaggedError> {
    ExponentialFunctional::new(spine, alpha, tail_tol, rng.random())?.sample(rng)
}

/// A pool of `I` draws reweighted by `1/I`, representing the law of `Y^α`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YPool {
    pub alpha: f64,
    /// The raw `I` draws.
    pub functionals: Vec<f64>,
    /// Largest certified truncation error in the pool.
    pub max_truncation_error: f64,
    /// Mean of `1/I`; should match `α m1`.
    pub normalization: Estimate,
    pub effective_sample_size: f64,
    /// Set when the effective sample size is below 10% of the pool.
    pub degenerate: bool,
}

impl YPool {
    /// `E k(Y) = E(k(I^{1/α}) / I) / E(1/I)`, as a ratio estimate with a
    /// delta-method standard error.
    pub fn expectation<F: Fn(f64) -> f64>(&self, k: F) -> Estimate {
        let n = self.functionals.len() as f64;
        let (mut sa, mut sb) = (0.0, 0.0);
        let terms: Vec<(f64, f64)> = self
            .functionals
            .iter()
            .map(|&i| {
                let w = 1.0 / i;
                let a = k(i.powf(1.0 / self.alpha)) * w;
                sa += a;
                sb += w;
                (a, w)
            })
            .collect();
        let ratio = sa / sb;
        let b_bar = sb / n;
        let resid_var = terms
            .iter()
            .map(|(a, w)| (a - ratio * w).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        Estimate {
            mean: ratio,
            std_err: (resid_var / n).sqrt() / b_bar,
            n: self.functionals.len(),
            flagged: self.degenerate,
        }
    }

    /// Draws `n` values of `Y` by resampling the pool with weights `1/I`.
    pub fn resample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = self
            .functionals
            .iter()
            .map(|i| {
                acc += 1.0 / i;
                acc
            })
            .collect();
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let j = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                self.functionals[j].powf(1.0 / self.alpha)
            })
            .collect()
    }
}

/// Draws a pool of `n_pool` exponential functionals for building `Y`.
pub fn sample_y_pool<R: Rng + ?Sized>(
    spine: &Spine,
    alpha: f64,
    tail_tol: f64,
    n_pool: usize,
    rng: &mut R,
) -> Result<YPool, TaggedError> {
    if n_pool < 1000 {
        return Err(TaggedError::Invalid(format!("pool size {n_pool} < 1000")));
    }
    let sampler = ExponentialFunctional::new(spine, alpha, tail_tol, rng.random())?;
    let mut functionals = Vec::with_capacity(n_pool);
    let mut max_err: f64 = 0.0;
    for _ in 0..n_pool {
        let s = sampler.sample(rng)?;
        max_err = max_err.max(s.truncation_error);
        functionals.push(s.value);
    }
    let inv: Vec<f64> = functionals.iter().map(|i| 1.0 / i).collect();
    let normalization = Estimate::from_samples(&inv);
    let sum_w: f64 = inv.iter().sum();
    let sum_w2: f64 = inv.iter().map(|w| w * w).sum();
    let ess = sum_w * sum_w / sum_w2;
    Ok(YPool {
        alpha,
        functionals,
        max_truncation_error: max_err,
        normalization,
        effective_sample_size: ess,
        degenerate: ess < 0.1 * n_pool as f64,
    })
}

/// `n_pool` draws of `Y`, resampled from a pool of the same size.
pub fn sample_y<R: Rng + ?Sized>(
    spine: &Spine,
    alpha: f64,
    tail_tol: f64,
    n_pool: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, YPool), TaggedError> {
    let pool = sample_y_pool(spine, alpha, tail_tol, n_pool, rng)?;
    let ys = pool.resample(n_pool, rng);
    Ok((ys, pool))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replaw::SolverConfig;
    use std::f64::consts::LN_2;

    fn spine(law: ReproductionLaw) -> Spine {
        let p0 = law.malthusian_exponent(&SolverConfig::default()).unwrap();
        Spine::new(&law, p0, 200_000, 1).unwrap()
    }

    fn mixed() -> ReproductionLaw {
        ReproductionLaw::discrete(vec![(0.2, vec![1.3, 0.5]), (0.8, vec![0.4])]).unwrap()
    }

    #[test]
    fn deterministic_walk() {
        let sp = spine(ReproductionLaw::DeterministicBinary);
        let mut rng = streams::stream(3);
        let path = simulate_tagged_walk(&sp, 1.0, 10, 2.0, &mut rng).unwrap();
        for (k, s) in path.log_sizes.iter().enumerate() {
            assert!((s - (2.0f64.ln() - k as f64 * LN_2)).abs() < 1e-12);
        }
        assert!(path.birth_times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(path.chi_at(0.0), Some(2.0));
    }

    #[test]
    fn eta_paths() {
        let sp = spine(ReproductionLaw::DeterministicBinary);
        let mut rng = streams::stream(4);
        let eta = simulate_eta(&sp, 50.0, &mut rng).unwrap();
        assert_eq!(eta.values.len(), eta.jump_count() + 1);
        assert_eq!(eta.values[0], 0.0);
        let n = eta.jump_count() as f64;
        assert!((eta.value_at(50.0).unwrap() + n * LN_2).abs() < 1e-9);
        assert!(simulate_eta(&sp, 0.0, &mut rng).is_err());
    }

    #[test]
    fn lamperti_examples() {
        let eta = CompoundPoissonPath {
            jump_times: vec![1.0, 3.0],
            values: vec![0.0, -LN_2, -2.0 * LN_2],
            horizon: 10.0,
        };
        let x = 4.0;
        let alpha = 1.0;
        assert_eq!(lamperti_chi(&eta, alpha, x, 0.0).unwrap(), x);
        // no jump before additive time 1, i.e. real time x^-α · 1 = 0.25
        assert_eq!(lamperti_chi(&eta, alpha, x, 0.2499).unwrap(), x);
        assert!((lamperti_chi(&eta, alpha, x, 0.2501).unwrap() - 2.0).abs() < 1e-12);
        // second segment contributes 2 · e^{ln 2} = 4 to the clock: x^α t in (1, 5)
        assert!((lamperti_chi(&eta, alpha, x, 1.2).unwrap() - 2.0).abs() < 1e-12);
        assert!((lamperti_chi(&eta, alpha, x, 1.26).unwrap() - 1.0).abs() < 1e-12);
        // α = 0: plain compound Poisson
        assert!((lamperti_chi(&eta, 0.0, 1.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            lamperti_chi(&eta, alpha, x, 1e6),
            Err(TaggedError::PathTooShort { .. })
        ));
    }

    #[test]
    fn lamperti_and_walk_agree_on_deterministic_law() {
        // a lattice law where χ(t) only takes values 2^-k: compare the laws of k
        let sp = spine(ReproductionLaw::DeterministicBinary);
        let mut rng = streams::stream(6);
        let n = 20_000;
        let mut a = vec![0usize; 40];
        let mut b = vec![0usize; 40];
        for _ in 0..n {
            let x = chi_by_walk(&sp, 1.0, 1.0, 3.0, &mut rng);
            let y = chi_by_lamperti(&sp, 1.0, 1.0, 3.0, &mut rng).unwrap();
            a[(-x.log2()).round() as usize] += 1;
            b[(-y.log2()).round() as usize] += 1;
        }
        for k in 0..40 {
            let (pa, pb) = (a[k] as f64 / n as f64, b[k] as f64 / n as f64);
            let se = ((pa * (1.0 - pa) + pb * (1.0 - pb)) / n as f64).sqrt();
            assert!((pa - pb).abs() <= 4.0 * se + 1e-12, "k={k}: {pa} vs {pb}");
        }
    }

    #[test]
    fn exponential_functional_deterministic() {
        let sp = spine(ReproductionLaw::DeterministicBinary);
        let f = ExponentialFunctional::new(&sp, 1.0, 1e-8, 0).unwrap();
        assert!(f.has_exact_mean());
        assert!((f.mean_bound() - 2.0).abs() < 1e-12);
        let mut rng = streams::stream(7);
        let xs: Vec<FunctionalSample> = (0..20_000).map(|_| f.sample(&mut rng).unwrap()).collect();
        assert!(xs.iter().all(|s| s.truncation_error <= 1e-8));
        let est = Estimate::from_samples(&xs.iter().map(|s| s.value).collect::<Vec<_>>());
        assert!((est.mean - 2.0).abs() < 4.0 * est.std_err);
        let inv = Estimate::from_samples(&xs.iter().map(|s| 1.0 / s.value).collect::<Vec<_>>());
        assert!((inv.mean - LN_2).abs() < 4.0 * inv.std_err);
    }

    #[test]
    fn drift_check() {
        // κ'(p0) < 0: atoms above 1 dominate at the first root
        let law = ReproductionLaw::discrete(vec![(0.5, vec![2.0]), (0.5, vec![])]).unwrap();
        let p0 = law.malthusian_exponent(&SolverConfig::default()).unwrap();
        assert!((p0 - 1.0).abs() < 1e-12);
        let sp = Spine::new(&law, p0, 0, 0).unwrap();
        assert!(sp.kappa_prime() < 0.0);
        assert!(matches!(
            ExponentialFunctional::new(&sp, 1.0, 1e-6, 0),
            Err(TaggedError::UnsupportedRegime(_))
        ));
        let sp = spine(ReproductionLaw::UniformBinary);
        assert!(ExponentialFunctional::new(&sp, 0.0, 1e-6, 0).is_err());
    }

    #[test]
    fn y_pool_normalization() {
        let sp = spine(mixed());
        let mut rng = streams::stream(9);
        let (ys, pool) = sample_y(&sp, 1.0, 1e-6, 20_000, &mut rng).unwrap();
        assert_eq!(ys.len(), 20_000);
        assert!(!pool.degenerate);
        let norm = pool.normalization;
        assert!((norm.mean - sp.m1()).abs() < 4.0 * norm.std_err);
        // E(Y^α) = 1/(α m1)
        let ey = pool.expectation(|y| y);
        assert!((ey.mean - 1.0 / sp.m1()).abs() < 4.0 * ey.std_err + 0.02 / sp.m1());
        assert!(sample_y_pool(&sp, 1.0, 1e-6, 10, &mut rng).is_err());
    }

    #[test]
    fn spine_rejects_wrong_exponent() {
        assert!(Spine::new(&mixed(), 0.5, 0, 0).is_err());
        assert!(Spine::new(&ReproductionLaw::UniformBinary, 1.5, 1000, 0).is_err());
    }
}
