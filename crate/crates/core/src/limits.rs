//! Estimators and statistical checks for the large-time limit theorems.
//!
//! Every check returns a [`TestReport`] that can be reproduced from its
//! metadata. Finite-time checks of asymptotic statements carry an explicit
//! bias budget on top of the `4σ` statistical slack.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::FinitePointMeasure;
use crate::replaw::{Estimate, LawError, ReproductionLaw, SolverConfig, DEFAULT_STEP_POOL};
use crate::streams;
use crate::tagged::{self, Spine, TaggedError, YPool};
use crate::tree::{self, TreeError, TreeParams, DEFAULT_NODE_CAP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Tagged(#[from] TaggedError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),
    #[error("exponent {p} outside the admissible range ({lo}, {hi})")]
    Domain { p: f64, lo: f64, hi: f64 },
    #[error("empty sample")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// `Σ w_i δ_{x_i}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedEmpiricalMeasure {
    pub items: Vec<(f64, f64)>,
    pub total_weight: f64,
}

impl WeightedEmpiricalMeasure {
    pub fn integrate<F: Fn(f64) -> f64>(&self, k: F) -> f64 {
        self.items.iter().map(|&(x, w)| w * k(x)).sum()
    }
}

/// `σ_t = Σ X_i(t)^p0 δ_{t^{1/α} X_i(t)}`, whose total weight is `M(t)`.
pub fn sigma_t(
    snapshot: &FinitePointMeasure,
    t: f64,
    alpha: f64,
    p0: f64,
) -> Result<WeightedEmpiricalMeasure, LimitError> {
    if !(alpha > 0.0) {
        return Err(LimitError::UnsupportedRegime(format!(
            "sigma_t needs alpha > 0, got {alpha}"
        )));
    }
    if !(t > 0.0) {
        return Err(LimitError::Invalid(format!("sigma_t needs t > 0, got {t}")));
    }
    let scale = t.powf(1.0 / alpha);
    let items: Vec<(f64, f64)> = snapshot
        .atoms()
        .iter()
        .map(|&x| (scale * x, x.powf(p0)))
        .collect();
    let total_weight = items.iter().map(|(_, w)| w).sum();
    Ok(WeightedEmpiricalMeasure {
        items,
        total_weight,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The law lives on a lattice, where the distributional limit theorems
    /// do not apply; the numbers are reported but not judged.
    LatticeCaveat,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::LatticeCaveat => "lattice caveat",
        })
    }
}

/// Which side of the threshold passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub law: String,
    /// `None` for checks that do not involve time (solver, generations).
    pub alpha: Option<f64>,
    pub t: Option<f64>,
    pub seed: u64,
    pub statistic: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub p_value: Option<f64>,
    pub n_samples: usize,
    pub verdict: Verdict,
    /// Side conditions that must also hold for a pass.
    pub conditions: BTreeMap<String, bool>,
    /// Auxiliary numbers (estimates, standard errors, ...).
    pub values: BTreeMap<String, f64>,
}

impl TestReport {
    pub fn new(
        name: impl Into<String>,
        law: impl Into<String>,
        alpha: impl Into<Option<f64>>,
        seed: u64,
    ) -> Self {
        Self {
            name: name.into(),
            law: law.into(),
            alpha: alpha.into(),
            t: None,
            seed,
            statistic: f64::NAN,
            threshold: f64::NAN,
            direction: Direction::AtMost,
            p_value: None,
            n_samples: 0,
            verdict: Verdict::Fail,
            conditions: BTreeMap::new(),
            values: BTreeMap::new(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.into(), v);
        self
    }

    pub fn condition(mut self, key: &str, ok: bool) -> Self {
        self.conditions.insert(key.into(), ok);
        self
    }

    /// Sets the statistic and threshold and computes the verdict.
    pub fn judge(mut self, statistic: f64, threshold: f64, direction: Direction) -> Self {
        self.statistic = statistic;
        self.threshold = threshold;
        self.direction = direction;
        self.recompute();
        self
    }

    fn recompute(&mut self) {
        let within = match self.direction {
            Direction::AtMost => self.statistic <= self.threshold,
            Direction::AtLeast => self.statistic >= self.threshold,
        };
        let ok = within && self.conditions.values().all(|&c| c);
        if self.verdict != Verdict::LatticeCaveat {
            self.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        }
    }

    pub fn lattice_caveat(mut self) -> Self {
        self.verdict = Verdict::LatticeCaveat;
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Not a failure: passes and lattice caveats.
    pub fn acceptable(&self) -> bool {
        self.verdict != Verdict::Fail
    }

    pub const CSV_HEADER: &'static str = "name,law,alpha,t,statistic,threshold,verdict,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.name,
            self.law,
            self.alpha.map(|a| a.to_string()).unwrap_or_default(),
            self.t.map(|t| t.to_string()).unwrap_or_default(),
            self.statistic,
            self.threshold,
            self.verdict,
            self.seed
        )
    }
}

impl fmt::Display for TestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.direction {
            Direction::AtMost => "<=",
            Direction::AtLeast => ">=",
        };
        write!(
            f,
            "[{}] {} ({}{}{}): {:.6} {} {:.6}",
            self.verdict,
            self.name,
            self.law,
            self.alpha.map(|a| format!(", alpha={a}")).unwrap_or_default(),
            self.t.map(|t| format!(", t={t}")).unwrap_or_default(),
            self.statistic,
            op,
            self.threshold
        )?;
        for (k, v) in &self.conditions {
            if !v {
                write!(f, " [violated: {k}]")?;
            }
        }
        Ok(())
    }
}

pub fn write_reports_csv<W: Write>(reports: &[TestReport], mut out: W) -> io::Result<()> {
    writeln!(out, "{}", TestReport::CSV_HEADER)?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form, accurate for small λ
        let y = (-PI * PI / (8.0 * lambda * lambda)).exp();
        let s: f64 = (1..=20)
            .map(|j| y.powi((2 * j - 1) * (2 * j - 1)))
            .sum();
        (1.0 - (2.0 * PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample KS statistic with its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, LimitError> {
    if a.is_empty() || b.is_empty() {
        return Err(LimitError::EmptyInput);
    }
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let p_value = kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d);
    Ok(KsResult {
        statistic: d,
        p_value,
    })
}

/// One-sample KS distance `sup |F_n - F|` against a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64, LimitError> {
    if samples.is_empty() {
        return Err(LimitError::EmptyInput);
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    Ok(s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max))
}

pub fn ks_two_sample_report(
    name: &str,
    a: &[f64],
    b: &[f64],
    min_p: f64,
) -> Result<TestReport, LimitError> {
    let ks = ks_two_sample(a, b)?;
    let mut r = TestReport::new(name, "", None, 0)
        .samples(a.len().min(b.len()))
        .value("ks_statistic", ks.statistic)
        .judge(ks.p_value, min_p, Direction::AtLeast);
    r.p_value = Some(ks.p_value);
    Ok(r)
}

// ---------------------------------------------------------------------------
// replica plumbing

/// Runs `f(i, seed_i)` for `i < n` with per-replica derived seeds; the result
/// order (and content) is independent of scheduling.
pub fn replicate<T, E, F>(n: usize, seed: u64, tag: &str, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, u64) -> Result<T, E> + Sync + Send,
{
    let tag = streams::tag(tag);
    (0..n)
        .into_par_iter()
        .map(|i| f(i, streams::replica_seed(seed, tag, i)))
        .collect()
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Knobs shared by the limit-theorem checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitConfig {
    pub solver: SolverConfig,
    pub tail_tol: f64,
    /// Number of exponential functionals drawn to represent `Y`.
    pub y_pool: usize,
    /// Reproduction draws backing the step law of continuous laws.
    pub step_pool: usize,
    /// Multiples of the combined standard error allowed.
    pub sigmas: f64,
    /// Finite-time bias budget, as a fraction of the limit's magnitude.
    pub bias_fraction: f64,
    /// Exponent of the `L^p` distance.
    pub lp_exponent: f64,
    /// Upper bound for the final mean `L^p` distance, as a fraction of
    /// `sup |k|^p` on the sampled values.
    pub lp_threshold_fraction: f64,
    /// `M_∞` is read as `M(T)` at `T = minf_time_factor · max(t_grid)`.
    pub minf_time_factor: f64,
    pub node_cap: usize,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            tail_tol: 1e-6,
            y_pool: 100_000,
            step_pool: DEFAULT_STEP_POOL,
            sigmas: 4.0,
            bias_fraction: 0.05,
            lp_exponent: 1.5,
            lp_threshold_fraction: 0.01,
            minf_time_factor: 4.0,
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

/// A law prepared for the limit checks: exponent, spine and `Y` pool.
pub struct LimitSetup {
    pub law: Arc<ReproductionLaw>,
    pub p0: f64,
    pub p_plus: Option<f64>,
    pub spine: Spine,
    pub lattice: bool,
}

impl LimitSetup {
    pub fn new(law: &ReproductionLaw, alpha: f64, cfg: &LimitConfig, seed: u64) -> Result<Self, LimitError> {
        if !(alpha > 0.0) {
            return Err(LimitError::UnsupportedRegime(format!(
                "limit theorems need alpha > 0, got {alpha}"
            )));
        }
        let p0 = law.malthusian_exponent(&cfg.solver)?;
        let p_plus = law.second_root(&cfg.solver)?;
        let spine = Spine::new(law, p0, cfg.step_pool, streams::derive(seed, 0x5350, &[]))?;
        if !(spine.kappa_prime() > 0.0) {
            return Err(LimitError::UnsupportedRegime(format!(
                "kappa'(p0) = {} is not > 0",
                spine.kappa_prime()
            )));
        }
        Ok(Self {
            law: Arc::new(law.clone()),
            p0,
            p_plus,
            spine,
            lattice: law.is_lattice(),
        })
    }

    pub fn y_pool(&self, alpha: f64, cfg: &LimitConfig, seed: u64) -> Result<YPool, LimitError> {
        let mut rng = streams::stream(streams::derive(seed, 0x5950, &[]));
        Ok(tagged::sample_y_pool(
            &self.spine,
            alpha,
            cfg.tail_tol,
            cfg.y_pool,
            &mut rng,
        )?)
    }

    fn tree_params(&self, alpha: f64, seed: u64, cfg: &LimitConfig) -> TreeParams {
        TreeParams::new(alpha, 1.0, seed).with_cap(cfg.node_cap)
    }
}

/// `E<x^p0 k(t^{1/α} x), X(t)>` from trees against `E k(Y)` from the
/// exponential functional.
pub fn mean_measure_test<K>(
    law: &ReproductionLaw,
    alpha: f64,
    t: f64,
    k: K,
    n: usize,
    seed: u64,
    cfg: &LimitConfig,
) -> Result<TestReport, LimitError>
where
    K: Fn(f64) -> f64 + Sync,
{
    let setup = LimitSetup::new(law, alpha, cfg, seed)?;
    let pool = setup.y_pool(alpha, cfg, seed)?;
    let y_side = pool.expectation(&k);
    let values: Vec<f64> = replicate(n, seed, "mean-measure", |_, s| {
        let tree = tree::grow_to_time(setup.law.clone(), setup.tree_params(alpha, s, cfg), t)?;
        let sigma = sigma_t(&tree.snapshot(t)?, t, alpha, setup.p0)?;
        Ok::<_, LimitError>(sigma.integrate(&k))
    })?;
    let tree_side = Estimate::from_samples(&values);
    let se = combined(tree_side.std_err, y_side.std_err);
    let tol = cfg.sigmas * se + cfg.bias_fraction * y_side.mean.abs();
    let report = TestReport::new("mean_measure", law.name(), alpha, seed)
        .at_time(t)
        .samples(n)
        .value("tree_estimate", tree_side.mean)
        .value("tree_std_err", tree_side.std_err)
        .value("y_estimate", y_side.mean)
        .value("y_std_err", y_side.std_err)
        .condition("y_pool_not_degenerate", !pool.degenerate)
        .judge((tree_side.mean - y_side.mean).abs(), tol, Direction::AtMost);
    Ok(if setup.lattice { report.lattice_caveat() } else { report })
}

/// `t^{(p-p0)/α} E<x^p, X(t)>` along `t_grid` against `E(Y^{p-p0})`.
pub fn moment_scaling_test(
    law: &ReproductionLaw,
    alpha: f64,
    p: f64,
    t_grid: &[f64],
    n: usize,
    seed: u64,
    cfg: &LimitConfig,
) -> Result<TestReport, LimitError> {
    let setup = LimitSetup::new(law, alpha, cfg, seed)?;
    let Some(p_plus) = setup.p_plus else {
        return Err(LimitError::Domain {
            p,
            lo: setup.p0,
            hi: f64::INFINITY,
        });
    };
    if !(p > setup.p0 && p < p_plus) {
        return Err(LimitError::Domain {
            p,
            lo: setup.p0,
            hi: p_plus,
        });
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(LimitError::Invalid("t_grid must be nonempty and positive".into()));
    }
    let pool = setup.y_pool(alpha, cfg, seed)?;
    let expo = p - setup.p0;
    let target = pool.expectation(|y| y.powf(expo));
    let t_max = t_grid.iter().cloned().fold(0.0, f64::max);
    // one tree per replica, read at every grid time
    let rows: Vec<Vec<f64>> = replicate(n, seed, "moment-scaling", |_, s| {
        let tree = tree::grow_to_time(setup.law.clone(), setup.tree_params(alpha, s, cfg), t_max)?;
        t_grid
            .iter()
            .map(|&t| Ok(t.powf(expo / alpha) * tree.snapshot(t)?.power_mass(p)))
            .collect::<Result<Vec<f64>, LimitError>>()
    })?;
    let mut report = TestReport::new("moment_scaling", law.name(), alpha, seed)
        .at_time(t_max)
        .samples(n)
        .value("p", p)
        .value("y_moment", target.mean)
        .value("y_moment_std_err", target.std_err);
    let mut deviations = Vec::new();
    let mut last_tol = 0.0;
    for (j, &t) in t_grid.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let est = Estimate::from_samples(&col);
        let dev = (est.mean - target.mean).abs();
        report = report
            .value(&format!("scaled_moment_t{t}"), est.mean)
            .value(&format!("scaled_moment_std_err_t{t}"), est.std_err)
            .value(&format!("deviation_t{t}"), dev);
        deviations.push(dev);
        last_tol = cfg.sigmas * combined(est.std_err, target.std_err) + cfg.bias_fraction * target.mean.abs();
    }
    let monotone = deviations.windows(2).all(|w| w[1] <= w[0]);
    let report = report
        .condition("deviation_non_increasing", monotone)
        .judge(*deviations.last().expect("nonempty grid"), last_tol, Direction::AtMost);
    Ok(if setup.lattice { report.lattice_caveat() } else { report })
}

/// Per replica `D(t) = |∫k dσ_t - M_∞ E k(Y)|`; the mean of `D(t)^q` must
/// decrease along `t_grid` and end below a threshold.
pub fn lp_convergence_test<K>(
    law: &ReproductionLaw,
    alpha: f64,
    k: K,
    t_grid: &[f64],
    n: usize,
    seed: u64,
    cfg: &LimitConfig,
) -> Result<TestReport, LimitError>
where
    K: Fn(f64) -> f64 + Sync,
{
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(LimitError::Invalid("t_grid must be nonempty and positive".into()));
    }
    let setup = LimitSetup::new(law, alpha, cfg, seed)?;
    let pool = setup.y_pool(alpha, cfg, seed)?;
    let eky = pool.expectation(&k);
    let q = cfg.lp_exponent;
    let t_max = t_grid.iter().cloned().fold(0.0, f64::max);
    let t_inf = cfg.minf_time_factor * t_max;
    let rows: Vec<(Vec<f64>, f64)> = replicate(n, seed, "lp-convergence", |_, s| {
        let tree = tree::grow_to_time(setup.law.clone(), setup.tree_params(alpha, s, cfg), t_inf)?;
        let m_inf = tree.intrinsic_martingale_time(setup.p0, t_inf)?;
        let mut sup_k: f64 = 0.0;
        let ds = t_grid
            .iter()
            .map(|&t| {
                let sigma = sigma_t(&tree.snapshot(t)?, t, alpha, setup.p0)?;
                for &(x, _) in &sigma.items {
                    sup_k = sup_k.max(k(x).abs());
                }
                Ok((sigma.integrate(&k) - m_inf * eky.mean).abs().powf(q))
            })
            .collect::<Result<Vec<f64>, LimitError>>()?;
        Ok::<_, LimitError>((ds, sup_k))
    })?;
    let sup_k = rows.iter().map(|r| r.1).fold(0.0, f64::max).max(eky.mean.abs());
    let threshold = cfg.lp_threshold_fraction * sup_k.powf(q);
    let mut report = TestReport::new("lp_convergence", law.name(), alpha, seed)
        .at_time(t_max)
        .samples(n)
        .value("lp_exponent", q)
        .value("y_expectation", eky.mean)
        .value("minf_time", t_inf);
    let mut means = Vec::new();
    for (j, &t) in t_grid.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
        let est = Estimate::from_samples(&col);
        report = report
            .value(&format!("mean_lp_distance_t{t}"), est.mean)
            .value(&format!("mean_lp_distance_std_err_t{t}"), est.std_err);
        means.push(est.mean);
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]) || means.iter().all(|&m| m == 0.0);
    let report = report
        .condition("decreasing_in_t", decreasing)
        .judge(*means.last().expect("nonempty grid"), threshold, Direction::AtMost);
    Ok(if setup.lattice { report.lattice_caveat() } else { report })
}

/// `E<x^p0 k(x), X(t)>` over trees against `E* k(χ(t))` along the tagged
/// lineage.
pub fn spine_identity_test<K>(
    law: &ReproductionLaw,
    alpha: f64,
    t: f64,
    k: K,
    n: usize,
    seed: u64,
    cfg: &LimitConfig,
) -> Result<TestReport, LimitError>
where
    K: Fn(f64) -> f64 + Sync,
{
    let p0 = law.malthusian_exponent(&cfg.solver)?;
    let spine = Spine::new(law, p0, cfg.step_pool, streams::derive(seed, 0x5350, &[]))?;
    let shared = Arc::new(law.clone());
    let trees: Vec<f64> = replicate(n, seed, "spine-identity-tree", |_, s| {
        let params = TreeParams::new(alpha, 1.0, s).with_cap(cfg.node_cap);
        let tree = tree::grow_to_time(shared.clone(), params, t)?;
        Ok::<_, LimitError>(tree.snapshot(t)?.atoms().iter().map(|&x| x.powf(p0) * k(x)).sum())
    })?;
    let tagged: Vec<f64> = replicate(n, seed, "spine-identity-tagged", |_, s| {
        let mut rng = streams::stream(s);
        Ok::<_, LimitError>(k(tagged::chi_by_walk(&spine, alpha, 1.0, t, &mut rng)))
    })?;
    let a = Estimate::from_samples(&trees);
    let b = Estimate::from_samples(&tagged);
    Ok(TestReport::new("spine_identity", law.name(), alpha, seed)
        .at_time(t)
        .samples(n)
        .value("tree_estimate", a.mean)
        .value("tree_std_err", a.std_err)
        .value("tagged_estimate", b.mean)
        .value("tagged_std_err", b.std_err)
        .judge((a.mean - b.mean).abs(), cfg.sigmas * combined(a.std_err, b.std_err), Direction::AtMost))
}

/// Law of `t^{1/α} χ(t)` from the tagged lineage against `Y`.
pub fn tagged_limit_test(
    law: &ReproductionLaw,
    alpha: f64,
    t: f64,
    n: usize,
    max_distance: f64,
    seed: u64,
    cfg: &LimitConfig,
) -> Result<TestReport, LimitError> {
    let setup = LimitSetup::new(law, alpha, cfg, seed)?;
    let pool = setup.y_pool(alpha, cfg, seed)?;
    let mut rng = streams::stream(streams::derive(seed, 0x5952, &[]));
    let ys = pool.resample(n, &mut rng);
    let scale = t.powf(1.0 / alpha);
    let chis: Vec<f64> = replicate(n, seed, "tagged-limit", |_, s| {
        let mut rng = streams::stream(s);
        Ok::<_, LimitError>(scale * tagged::chi_by_walk(&setup.spine, alpha, 1.0, t, &mut rng))
    })?;
    let ks = ks_two_sample(&chis, &ys)?;
    let mut report = TestReport::new("tagged_limit", law.name(), alpha, seed)
        .at_time(t)
        .samples(n)
        .value("max_truncation_error", pool.max_truncation_error)
        .condition("y_pool_not_degenerate", !pool.degenerate)
        .judge(ks.statistic, max_distance, Direction::AtMost);
    report.p_value = Some(ks.p_value);
    Ok(if setup.lattice { report.lattice_caveat() } else { report })
}

// ---------------------------------------------------------------------------
// generator

/// `G φ_g(y) = Σ_i y_i^α e^{-Σ_{j≠i} g(y_j)} ∫ (e^{-<g(x y_i), s>} - e^{-g(y_i)}) ν(ds)`
/// for `φ_g(s) = exp(-<g, s>)`. Exact (zero standard error) for finite laws;
/// otherwise the inner integral uses `mc_budget` reproduction draws.
pub fn generator_apply<G, R>(
    law: &ReproductionLaw,
    alpha: f64,
    g: G,
    y: &FinitePointMeasure,
    mc_budget: usize,
    rng: &mut R,
) -> Result<Estimate, LimitError>
where
    G: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    let gy: Vec<f64> = y.atoms().iter().map(|&a| g(a)).collect();
    if gy.iter().any(|v| !(*v >= 0.0)) {
        return Err(LimitError::Invalid("g must be nonnegative".into()));
    }
    let total: f64 = gy.iter().sum();
    let mut mean = 0.0;
    let mut var = 0.0;
    let mut n_mc = 0;
    for (i, &yi) in y.atoms().iter().enumerate() {
        let weight = yi.powf(alpha) * (-(total - gy[i])).exp();
        let base = (-gy[i]).exp();
        let inner = |s: &[f64]| (-s.iter().map(|&x| g(x * yi)).sum::<f64>()).exp() - base;
        let (m, v) = match law {
            ReproductionLaw::DeterministicBinary => (inner(&[0.5, 0.5]), 0.0),
            ReproductionLaw::DiscreteMixture(mix) => (
                mix.components()
                    .iter()
                    .map(|c| c.prob * inner(&c.atoms))
                    .sum(),
                0.0,
            ),
            _ => {
                if mc_budget < 2 {
                    return Err(LimitError::Invalid("Monte Carlo budget must be >= 2".into()));
                }
                let mut buf = Vec::new();
                let xs: Vec<f64> = (0..mc_budget)
                    .map(|_| {
                        law.sample_into(rng, &mut buf);
                        inner(&buf)
                    })
                    .collect();
                n_mc = mc_budget;
                let e = Estimate::from_samples(&xs);
                (e.mean, e.std_err * e.std_err)
            }
        };
        mean += weight * m;
        var += weight * weight * v;
    }
    Ok(Estimate {
        mean,
        std_err: var.sqrt(),
        n: n_mc,
        flagged: false,
    })
}

/// `(E φ_g(X(h)) - φ_g(y)) / h` by direct simulation from `X(0) = y`.
pub fn generator_finite_difference<G>(
    law: &ReproductionLaw,
    alpha: f64,
    g: G,
    y: &FinitePointMeasure,
    h: f64,
    n: usize,
    seed: u64,
) -> Result<Estimate, LimitError>
where
    G: Fn(f64) -> f64 + Sync,
{
    if !(h > 0.0) {
        return Err(LimitError::Invalid(format!("step h = {h} must be > 0")));
    }
    let law = Arc::new(law.clone());
    let phi = |s: &FinitePointMeasure| (-s.atoms().iter().map(|&x| g(x)).sum::<f64>()).exp();
    let phi_y = phi(y);
    let diffs: Vec<f64> = replicate(n, seed, "generator-fd", |_, s| {
        let xh = tree::snapshot_from(y, &law, alpha, h, s, DEFAULT_NODE_CAP)?;
        Ok::<_, LimitError>((phi(&xh) - phi_y) / h)
    })?;
    Ok(Estimate::from_samples(&diffs))
}

/// Relative agreement of the generator with its short-time difference
/// quotient.
pub fn generator_test<G>(
    law: &ReproductionLaw,
    alpha: f64,
    g: G,
    y: &FinitePointMeasure,
    h: f64,
    n: usize,
    max_relative: f64,
    seed: u64,
) -> Result<TestReport, LimitError>
where
    G: Fn(f64) -> f64 + Sync,
{
    let mut rng = streams::stream(streams::derive(seed, 0x4745, &[]));
    let exact = generator_apply(law, alpha, &g, y, 1_000_000, &mut rng)?;
    let fd = generator_finite_difference(law, alpha, &g, y, h, n, seed)?;
    let rel = (fd.mean - exact.mean).abs() / exact.mean.abs();
    Ok(TestReport::new("generator", law.name(), alpha, seed)
        .at_time(h)
        .samples(n)
        .value("generator", exact.mean)
        .value("generator_std_err", exact.std_err)
        .value("finite_difference", fd.mean)
        .value("finite_difference_std_err", fd.std_err)
        .judge(rel, max_relative, Direction::AtMost))
}

/// Draws `n` unit exponentials scaled by `1/rate`.
pub fn exponential_samples<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e / rate
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> ReproductionLaw {
        ReproductionLaw::discrete(vec![(0.2, vec![1.3, 0.5]), (0.8, vec![0.4])]).unwrap()
    }

    #[test]
    fn sigma_examples() {
        let s = FinitePointMeasure::new([0.3]).unwrap();
        let sig = sigma_t(&s, 0.01, 1.0, 0.5).unwrap();
        assert_eq!(sig.items, vec![(0.01 * 0.3, 0.3f64.sqrt())]);
        let e = sigma_t(&FinitePointMeasure::empty(), 3.0, 1.0, 0.5).unwrap();
        assert_eq!(e.total_weight, 0.0);
        assert!(e.items.is_empty());
        assert!(matches!(
            sigma_t(&s, 1.0, 0.0, 0.5),
            Err(LimitError::UnsupportedRegime(_))
        ));
        let s = FinitePointMeasure::new([0.25, 0.25, 0.5]).unwrap();
        let sig = sigma_t(&s, 7.0, 2.0, 1.0).unwrap();
        assert_eq!(sig.total_weight, 1.0);
        assert_eq!(sig.total_weight, s.power_mass(1.0));
    }

    #[test]
    fn ks_examples() {
        let a = vec![0.3, 0.1, 0.7, 0.2];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(ks_two_sample(&[], &a).is_err());
        // disjoint supports
        let r = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // reference values of the Kolmogorov distribution
        assert!((kolmogorov_survival(1.0) - 0.26999967).abs() < 1e-6);
        assert!((kolmogorov_survival(1.36) - 0.04942).abs() < 1e-4);
        assert!((kolmogorov_survival(0.5) - 0.96394524).abs() < 1e-6);
        // both series agree where they meet
        let l = 1.18;
        let y = (-PI * PI / (8.0 * l * l)).exp();
        let theta: f64 = 1.0 - (2.0 * PI).sqrt() / l * (1..=20).map(|j| y.powi((2 * j - 1) * (2 * j - 1))).sum::<f64>();
        assert!((theta - kolmogorov_survival(l)).abs() < 1e-10);
    }

    #[test]
    fn ks_calibration() {
        let mut passes = 0;
        for seed in 0..40 {
            let mut rng = streams::stream(seed);
            let a = exponential_samples(10_000, 1.0, &mut rng);
            let b = exponential_samples(10_000, 1.0, &mut rng);
            if ks_two_sample(&a, &b).unwrap().p_value > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 38, "{passes}/40");
        let mut rng = streams::stream(99);
        let a = exponential_samples(10_000, 1.0, &mut rng);
        let b = exponential_samples(10_000, 2.0, &mut rng);
        assert!(ks_two_sample(&a, &b).unwrap().p_value < 1e-6);
    }

    #[test]
    fn one_sample_distance() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance(&xs, |x| x).unwrap() <= 0.0005 + 1e-12);
    }

    #[test]
    fn generator_values() {
        let mut rng = streams::stream(0);
        let y = FinitePointMeasure::new([1.0]).unwrap();
        for law in [mixed(), ReproductionLaw::UniformBinary, ReproductionLaw::DeterministicBinary] {
            let z = generator_apply(&law, 1.0, |_| 0.0, &y, 1000, &mut rng).unwrap();
            assert_eq!(z.mean, 0.0);
            let y2 = FinitePointMeasure::new([0.3, 2.0, 0.7]).unwrap();
            assert_eq!(generator_apply(&law, 0.5, |_| 0.0, &y2, 1000, &mut rng).unwrap().mean, 0.0);
        }
        // single atom of size 1
        let g = generator_apply(&mixed(), 2.0, |x| x, &y, 0, &mut rng).unwrap();
        let expect = 0.2 * (-1.8f64).exp() + 0.8 * (-0.4f64).exp() - (-1.0f64).exp();
        assert!((g.mean - expect).abs() < 1e-15);
        // UniformBinary with g(x) = x is constant on the mass-preserving split
        let u = generator_apply(&ReproductionLaw::UniformBinary, 1.0, |x| x, &y, 1000, &mut rng).unwrap();
        assert!(u.mean.abs() < 1e-12);
    }

    #[test]
    fn generator_two_atoms() {
        let mut rng = streams::stream(0);
        let y = FinitePointMeasure::new([2.0, 0.5]).unwrap();
        let alpha = 1.0;
        let g = |x: f64| x * x;
        let got = generator_apply(&ReproductionLaw::DeterministicBinary, alpha, g, &y, 0, &mut rng)
            .unwrap()
            .mean;
        let term = |yi: f64, other: f64| {
            yi.powf(alpha) * (-g(other)).exp() * ((-2.0 * g(0.5 * yi)).exp() - (-g(yi)).exp())
        };
        let expect = term(2.0, 0.5) + term(0.5, 2.0);
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn report_verdicts() {
        let r = TestReport::new("x", "law", 1.0, 1).judge(0.5, 1.0, Direction::AtMost);
        assert!(r.passed());
        let r = TestReport::new("x", "law", 1.0, 1)
            .condition("c", false)
            .judge(0.5, 1.0, Direction::AtMost);
        assert!(!r.passed());
        let r = TestReport::new("x", "law", 1.0, 1).judge(0.5, 1.0, Direction::AtLeast);
        assert_eq!(r.verdict, Verdict::Fail);
        let r = r.lattice_caveat();
        assert!(r.acceptable());
        assert_eq!(r.csv_row(), "x,law,1,,0.5,1,lattice caveat,1");
        let json = serde_json::to_string(&r).unwrap();
        let back: TestReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.verdict, Verdict::LatticeCaveat);
    }

    #[test]
    fn replicate_is_order_independent() {
        let a: Vec<u64> = replicate(100, 5, "x", |_, s| Ok::<_, ()>(s)).unwrap();
        let b: Vec<u64> = replicate(100, 5, "x", |_, s| Ok::<_, ()>(s)).unwrap();
        assert_eq!(a, b);
        let c: Vec<u64> = replicate(100, 5, "y", |_, s| Ok::<_, ()>(s)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn preconditions() {
        let cfg = LimitConfig {
            y_pool: 1000,
            ..LimitConfig::default()
        };
        assert!(matches!(
            moment_scaling_test(&ReproductionLaw::UniformBinary, 1.0, 1.5, &[10.0], 10, 0, &cfg),
            Err(LimitError::Domain { .. })
        ));
        assert!(matches!(
            moment_scaling_test(&mixed(), 1.0, 7.0, &[10.0], 10, 0, &cfg),
            Err(LimitError::Domain { .. })
        ));
        assert!(matches!(
            mean_measure_test(&mixed(), 0.0, 1.0, |_| 1.0, 10, 0, &cfg),
            Err(LimitError::UnsupportedRegime(_))
        ));
    }

    #[test]
    fn constant_test_function_is_normalized() {
        let cfg = LimitConfig {
            y_pool: 2000,
            ..LimitConfig::default()
        };
        let r = mean_measure_test(&mixed(), 1.0, 5.0, |_| 1.0, 2000, 3, &cfg).unwrap();
        assert_eq!(r.values["y_estimate"], 1.0);
        assert!(r.passed(), "{r}");
        let r = lp_convergence_test(&mixed(), 1.0, |_| 0.0, &[1.0, 2.0], 50, 1, &cfg).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn lattice_laws_are_flagged() {
        let cfg = LimitConfig {
            y_pool: 2000,
            ..LimitConfig::default()
        };
        let r = lp_convergence_test(
            &ReproductionLaw::DeterministicBinary,
            1.0,
            |y| (-y).exp(),
            &[2.0, 4.0],
            100,
            1,
            &cfg,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::LatticeCaveat);
    }
}
