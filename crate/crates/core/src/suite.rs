//! The fixed acceptance suite: eighteen checks with pinned laws, sample
//! sizes and tolerances.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::limits::{
    self, ks_distance, ks_two_sample, replicate, Direction, LimitConfig, LimitError, TestReport,
};
use crate::measures::FinitePointMeasure;
use crate::replaw::{Estimate, LawError, ReproductionLaw, SolverConfig};
use crate::streams;
use crate::tagged::{self, ExponentialFunctional, Spine};
use crate::tree::{self, Line, NodeLabel, TreeParams};

pub const CRITERIA: [(u32, &str); 18] = [
    (1, "malthusian solver exactness"),
    (2, "martingale normalization"),
    (3, "martingale step"),
    (4, "supermartingale above p0"),
    (5, "extinction dichotomy"),
    (6, "branching (Markov) property"),
    (7, "scaling property"),
    (8, "spine identity"),
    (9, "tagged random-walk law"),
    (10, "normalized lifetimes"),
    (11, "lamperti equivalence"),
    (12, "exponential functional moments"),
    (13, "tagged limit law"),
    (14, "moment scaling"),
    (15, "Lp convergence of sigma_t"),
    (16, "generator"),
    (17, "covering-line martingale"),
    (18, "no malthusian exponent for default dirichlet"),
];

/// Absolute slack for sums that are conserved exactly in exact arithmetic.
const ROUNDING_FLOOR: f64 = 1e-12;
const MIN_P_VALUE: f64 = 0.01;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub seed: u64,
    pub reports: Vec<TestReport>,
    pub error: Option<String>,
    /// Wall-clock time; kept out of serialized output so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

impl CriterionResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.reports.is_empty() && self.reports.iter().all(|r| r.acceptable())
    }

    pub fn summary_line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let mut line = format!(
            "criterion {:>2} {status}: {} ({:.1}s)",
            self.id, self.title, self.elapsed_secs
        );
        if let Some(e) = &self.error {
            line.push_str(&format!(" error: {e}"));
        }
        line
    }
}

pub fn mixed_law() -> ReproductionLaw {
    ReproductionLaw::discrete(vec![(0.2, vec![1.3, 0.5]), (0.8, vec![0.4])]).expect("valid law")
}

pub fn extinction_law() -> ReproductionLaw {
    ReproductionLaw::discrete(vec![(0.75, vec![0.6, 0.6]), (0.25, vec![])]).expect("valid law")
}

pub fn criterion_seed(seed: u64, id: u32) -> u64 {
    streams::derive(seed, streams::tag("acceptance"), &[id])
}

/// Runs one criterion by number.
pub fn run_criterion(id: u32, seed: u64) -> CriterionResult {
    let title = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1.to_string())
        .unwrap_or_else(|| format!("unknown criterion {id}"));
    let s = criterion_seed(seed, id);
    let start = Instant::now();
    let out = match id {
        1 => solver_exactness(),
        2 => martingale_normalization(s),
        3 => martingale_step(s),
        4 => supermartingale(s),
        5 => extinction_dichotomy(s),
        6 => markov_property(s),
        7 => scaling_property(s),
        8 => spine_identity(s),
        9 => random_walk_law(s),
        10 => lifetimes(s),
        11 => lamperti_equivalence(s),
        12 => exponential_functional(s),
        13 => tagged_limit(s),
        14 => moment_scaling(s),
        15 => lp_convergence(s),
        16 => generator(s),
        17 => covering_line(s),
        18 => dirichlet_failure(),
        _ => Err(LimitError::Invalid(format!("no criterion {id}"))),
    };
    let (reports, error) = match out {
        Ok(r) => (r, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    CriterionResult {
        id,
        title,
        seed: s,
        reports,
        error,
        elapsed_secs: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|c| run_criterion(c.0, seed)).collect()
}

type Reports = Result<Vec<TestReport>, LimitError>;

fn within_sigmas(name: &str, law: &ReproductionLaw, seed: u64, est: Estimate, target: f64) -> TestReport {
    TestReport::new(name, law.name(), None, seed)
        .samples(est.n)
        .value("estimate", est.mean)
        .value("std_err", est.std_err)
        .value("target", target)
        .judge((est.mean - target).abs(), 4.0 * est.std_err + ROUNDING_FLOOR, Direction::AtMost)
}

fn p0_of(law: &ReproductionLaw) -> Result<f64, LimitError> {
    Ok(law.malthusian_exponent(&SolverConfig::default())?)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let flo = f(lo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn solver_exactness() -> Reports {
    let det = p0_of(&ReproductionLaw::DeterministicBinary)?;
    let ext = p0_of(&extinction_law())?;
    let mixed = p0_of(&mixed_law())?;
    let oracle = bisect(
        |p| 1.0 - (0.2 * (1.3f64.powf(p) + 0.5f64.powf(p)) + 0.8 * 0.4f64.powf(p)),
        0.01,
        1.0,
        1e-10,
    );
    let ext_exact = (2.0f64 / 3.0).ln() / 0.6f64.ln();
    let check = |name: &str, law: String, got: f64, want: f64, tol: f64| {
        TestReport::new(name, law, None, 0)
            .value("p0", got)
            .value("oracle", want)
            .judge((got - want).abs(), tol, Direction::AtMost)
    };
    Ok(vec![
        check("p0_deterministic_binary", "deterministic_binary".into(), det, 1.0, 1e-12),
        check("p0_extinction", "discrete".into(), ext, ext_exact, 1e-9),
        check("p0_mixed", "discrete".into(), mixed, oracle, 1e-8),
    ])
}

/// `Σ ξ_u^p` over generation `g` for each `g` in `gens`, one row per tree.
fn generation_sums(
    law: &ReproductionLaw,
    p: f64,
    gens: &[usize],
    n: usize,
    seed: u64,
    tag: &str,
) -> Result<Vec<Vec<f64>>, LimitError> {
    let law = Arc::new(law.clone());
    let max = *gens.iter().max().expect("nonempty");
    replicate(n, seed, tag, |_, s| {
        let tree = tree::grow_to_generation(law.clone(), TreeParams::new(1.0, 1.0, s), max)?;
        gens.iter()
            .map(|&g| Ok(tree.power_sum_generation(p, g)?))
            .collect::<Result<Vec<f64>, LimitError>>()
    })
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn martingale_normalization(seed: u64) -> Reports {
    let mut out = Vec::new();
    for law in [ReproductionLaw::UniformBinary, mixed_law()] {
        let p0 = p0_of(&law)?;
        let rows = generation_sums(&law, p0, &[8], 10_000, seed, "m8")?;
        let est = Estimate::from_samples(&column(&rows, 0));
        out.push(within_sigmas("mean_m8", &law, seed, est, 1.0));
    }
    let law = ReproductionLaw::DeterministicBinary;
    let gens: Vec<usize> = (0..=8).collect();
    let rows = generation_sums(&law, 1.0, &gens, 100, seed, "m-det")?;
    let worst = rows.iter().flatten().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    out.push(
        TestReport::new("m_n_exactly_one", law.name(), None, seed)
            .samples(rows.len())
            .judge(worst, 0.0, Direction::AtMost),
    );
    Ok(out)
}

fn increments(rows: &[Vec<f64>], j: usize) -> Estimate {
    let d: Vec<f64> = rows.iter().map(|r| r[j + 1] - r[j]).collect();
    Estimate::from_samples(&d)
}

fn martingale_step(seed: u64) -> Reports {
    let gens: Vec<usize> = (5..=9).collect();
    let mut out = Vec::new();
    for law in [ReproductionLaw::UniformBinary, mixed_law()] {
        let p0 = p0_of(&law)?;
        let rows = generation_sums(&law, p0, &gens, 10_000, seed, "m-step")?;
        for (j, g) in gens.iter().take(4).enumerate() {
            let est = increments(&rows, j);
            out.push(within_sigmas(&format!("mean_increment_n{g}"), &law, seed, est, 0.0));
        }
    }
    Ok(out)
}

fn supermartingale(seed: u64) -> Reports {
    let law = mixed_law();
    let gens: Vec<usize> = (5..=9).collect();
    let rows = generation_sums(&law, 1.0, &gens, 10_000, seed, "super")?;
    Ok((0..4)
        .map(|j| {
            let est = increments(&rows, j);
            TestReport::new(format!("p1_increment_n{}", gens[j]), law.name(), None, seed)
                .samples(est.n)
                .value("mean", est.mean)
                .value("std_err", est.std_err)
                .judge(est.mean, 4.0 * est.std_err, Direction::AtMost)
        })
        .collect())
}

fn extinction_dichotomy(seed: u64) -> Reports {
    let law = extinction_law();
    let p0 = p0_of(&law)?;
    let rows = generation_sums(&law, p0, &[20], 10_000, seed, "extinction")?;
    let hits: Vec<f64> = rows.iter().map(|r| if r[0] < 1e-6 { 1.0 } else { 0.0 }).collect();
    let est = Estimate::from_samples(&hits);
    Ok(vec![within_sigmas("fraction_m20_vanishing", &law, seed, est, 1.0 / 3.0)])
}

fn ks_report(name: &str, law: &ReproductionLaw, seed: u64, a: &[f64], b: &[f64]) -> Result<TestReport, LimitError> {
    let ks = ks_two_sample(a, b)?;
    let mut r = TestReport::new(name, law.name(), 1.0, seed)
        .samples(a.len().min(b.len()))
        .value("ks_statistic", ks.statistic)
        .judge(ks.p_value, MIN_P_VALUE, Direction::AtLeast);
    r.p_value = Some(ks.p_value);
    Ok(r)
}

/// Mass, atom count and second moment of a snapshot.
fn features(s: &FinitePointMeasure, p0: f64) -> [f64; 3] {
    [s.power_mass(p0), s.count() as f64, s.power_mass(2.0)]
}

// `M` is conserved exactly for mass-preserving laws; rounding noise of a
// few ulps must not count as a distributional difference.
fn round_mass(m: f64) -> f64 {
    (m * 1e9).round() / 1e9
}

fn markov_property(seed: u64) -> Reports {
    let law = ReproductionLaw::UniformBinary;
    let shared = Arc::new(law.clone());
    let p0 = p0_of(&law)?;
    let (t, r, n) = (1.0, 1.0, 10_000);
    let direct: Vec<[f64; 3]> = replicate(n, seed, "markov-direct", |_, s| {
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(1.0, 1.0, s), t + r)?;
        Ok::<_, LimitError>(features(&tree.snapshot(t + r)?, p0))
    })?;
    let regrown: Vec<[f64; 3]> = replicate(n, seed, "markov-regrow", |_, s| {
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(1.0, 1.0, s), t)?;
        let mid = tree.snapshot(t)?;
        let end = tree::snapshot_from(&mid, &shared, 1.0, r, streams::derive(s, 1, &[]), tree::DEFAULT_NODE_CAP)?;
        Ok::<_, LimitError>(features(&end, p0))
    })?;
    let names = ["mass", "atom_count", "second_moment"];
    (0..3)
        .map(|j| {
            let f = |v: &[f64; 3]| if j == 0 { round_mass(v[0]) } else { v[j] };
            let a: Vec<f64> = direct.iter().map(f).collect();
            let b: Vec<f64> = regrown.iter().map(f).collect();
            ks_report(&format!("markov_{}", names[j]), &law, seed, &a, &b).map(|rep| rep.at_time(t + r))
        })
        .collect()
}

fn scaling_property(seed: u64) -> Reports {
    let law = mixed_law();
    let shared = Arc::new(law.clone());
    let p0 = p0_of(&law)?;
    let (c, alpha, t, n) = (2.0f64, 1.0f64, 1.0, 10_000);
    let scaled: Vec<[f64; 3]> = replicate(n, seed, "scaling-unit", |_, s| {
        let ct = c.powf(alpha) * t;
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(alpha, 1.0, s), ct)?;
        Ok::<_, LimitError>(features(&tree.snapshot(ct)?.scaled(c), p0))
    })?;
    let direct: Vec<[f64; 3]> = replicate(n, seed, "scaling-big", |_, s| {
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(alpha, c, s), t)?;
        Ok::<_, LimitError>(features(&tree.snapshot(t)?, p0))
    })?;
    let names = ["mass", "atom_count"];
    (0..2)
        .map(|j| {
            let a: Vec<f64> = scaled.iter().map(|v| v[j]).collect();
            let b: Vec<f64> = direct.iter().map(|v| v[j]).collect();
            ks_report(&format!("scaling_{}", names[j]), &law, seed, &a, &b).map(|r| r.at_time(t))
        })
        .collect()
}

fn suite_config() -> LimitConfig {
    LimitConfig::default()
}

fn spine_identity(seed: u64) -> Reports {
    let cfg = suite_config();
    let mut out = Vec::new();
    for law in [ReproductionLaw::DeterministicBinary, mixed_law()] {
        for t in [1.0, 3.0] {
            out.push(limits::spine_identity_test(&law, 1.0, t, |x| (-x).exp(), 10_000, seed, &cfg)?);
        }
    }
    Ok(out)
}

fn uniform_spine(seed: u64) -> Result<Spine, LimitError> {
    let law = ReproductionLaw::UniformBinary;
    let p0 = p0_of(&law)?;
    Ok(Spine::new(&law, p0, suite_config().step_pool, streams::derive(seed, 2, &[]))?)
}

fn random_walk_law(seed: u64) -> Reports {
    let law = ReproductionLaw::UniformBinary;
    let spine = uniform_spine(seed)?;
    let n = 100_000;
    let mut rng = streams::stream(streams::derive(seed, 3, &[]));
    let steps: Vec<f64> = (0..n).map(|_| spine.step(&mut rng)).collect();
    let d = ks_distance(&steps, |y| (2.0 * y).exp().min(1.0))?;
    let mut out = vec![TestReport::new("step_ks_distance", law.name(), None, seed)
        .samples(n)
        .judge(d, 0.02, Direction::AtMost)];
    for p in [0.1, 0.5] {
        let v: Vec<f64> = steps.iter().map(|s| (p * s).exp()).collect();
        let target = 1.0 - law.kappa(p + spine.p0())?;
        out.push(
            within_sigmas(&format!("step_laplace_p{p}"), &law, seed, Estimate::from_samples(&v), target),
        );
    }
    Ok(out)
}

fn lifetimes(seed: u64) -> Reports {
    let n = 100_000;
    let mut out = Vec::new();
    // deep enough that every tree has at least 20 nodes
    for (alpha, law, depth) in [(1.0, ReproductionLaw::UniformBinary, 4), (0.5, mixed_law(), 19)] {
        let shared = Arc::new(law.clone());
        let per_tree: Vec<Vec<f64>> = replicate(n / 20, seed, "lifetimes", |_, s| {
            let tree = tree::grow_to_generation(shared.clone(), TreeParams::new(alpha, 1.0, s), depth)?;
            Ok::<_, LimitError>(
                tree.nodes()
                    .iter()
                    .take(20)
                    .map(|u| u.size.powf(alpha) * u.lifetime)
                    .collect(),
            )
        })?;
        let pooled: Vec<f64> = per_tree.into_iter().flatten().collect();
        let d = ks_distance(&pooled, |x| 1.0 - (-x).exp())?;
        out.push(
            TestReport::new("tree_lifetime_ks_distance", law.name(), alpha, seed)
                .samples(pooled.len())
                .condition("pool_complete", pooled.len() == n)
                .judge(d, 0.02, Direction::AtMost),
        );
    }
    // along the tagged lineage
    let spine = uniform_spine(seed)?;
    let paths: Vec<Vec<f64>> = replicate(n / 10, seed, "tagged-lifetimes", |_, s| {
        let mut rng = streams::stream(s);
        let path = tagged::simulate_tagged_walk(&spine, 1.0, 10, 1.0, &mut rng)?;
        Ok::<_, LimitError>(
            path.lifetimes
                .iter()
                .zip(&path.log_sizes)
                .map(|(z, s)| s.exp() * z)
                .collect(),
        )
    })?;
    let pooled: Vec<f64> = paths.into_iter().flatten().collect();
    let d = ks_distance(&pooled, |x| 1.0 - (-x).exp())?;
    out.push(
        TestReport::new("tagged_lifetime_ks_distance", "uniform_binary", 1.0, seed)
            .samples(pooled.len())
            .judge(d, 0.02, Direction::AtMost),
    );
    Ok(out)
}

fn lamperti_equivalence(seed: u64) -> Reports {
    let law = mixed_law();
    let p0 = p0_of(&law)?;
    let spine = Spine::new(&law, p0, 0, streams::derive(seed, 2, &[]))?;
    let (t, n) = (5.0, 10_000);
    let walk: Vec<f64> = replicate(n, seed, "walk", |_, s| {
        Ok::<_, LimitError>(tagged::chi_by_walk(&spine, 1.0, 1.0, t, &mut streams::stream(s)))
    })?;
    let lamperti: Vec<f64> = replicate(n, seed, "lamperti", |_, s| {
        Ok::<_, LimitError>(tagged::chi_by_lamperti(&spine, 1.0, 1.0, t, &mut streams::stream(s))?)
    })?;
    Ok(vec![ks_report("walk_vs_lamperti", &law, seed, &walk, &lamperti)?.at_time(t)])
}

fn exponential_functional(seed: u64) -> Reports {
    let tail_tol = suite_config().tail_tol;
    let n = 100_000;
    let mut out = Vec::new();
    let cases: [(ReproductionLaw, Option<f64>, f64); 2] = [
        (ReproductionLaw::DeterministicBinary, Some(2.0), std::f64::consts::LN_2),
        (ReproductionLaw::UniformBinary, None, 0.5),
    ];
    for (law, mean_i, mean_inv) in cases {
        let p0 = p0_of(&law)?;
        let spine = Spine::new(&law, p0, suite_config().step_pool, streams::derive(seed, 2, &[]))?;
        let sampler = ExponentialFunctional::new(&spine, 1.0, tail_tol, streams::derive(seed, 4, &[]))?;
        let draws = replicate(n, seed, "functional", |_, s| sampler.sample(&mut streams::stream(s)))?;
        let values: Vec<f64> = draws.iter().map(|d| d.value).collect();
        let worst = draws.iter().map(|d| d.truncation_error).fold(0.0, f64::max);
        if let Some(m) = mean_i {
            out.push(within_sigmas("mean_i", &law, seed, Estimate::from_samples(&values), m));
        }
        let inv: Vec<f64> = values.iter().map(|v| 1.0 / v).collect();
        out.push(within_sigmas("mean_inverse_i", &law, seed, Estimate::from_samples(&inv), mean_inv));
        out.push(
            TestReport::new("max_truncation_error", law.name(), 1.0, seed)
                .samples(n)
                .judge(worst, tail_tol, Direction::AtMost),
        );
    }
    Ok(out)
}

fn tagged_limit(seed: u64) -> Reports {
    let cfg = suite_config();
    [ReproductionLaw::UniformBinary, mixed_law()]
        .iter()
        .map(|law| limits::tagged_limit_test(law, 1.0, 50.0, 10_000, 0.05, seed, &cfg))
        .collect()
}

fn moment_scaling(seed: u64) -> Reports {
    Ok(vec![limits::moment_scaling_test(
        &mixed_law(),
        1.0,
        1.0,
        &[10.0, 30.0, 50.0],
        MOMENT_SCALING_REPLICAS,
        seed,
        &suite_config(),
    )?])
}

pub const MOMENT_SCALING_REPLICAS: usize = 100_000;
pub const GENERATOR_REPLICAS: usize = 10_000_000;

fn lp_convergence(seed: u64) -> Reports {
    Ok(vec![limits::lp_convergence_test(
        &ReproductionLaw::UniformBinary,
        1.0,
        |y| (-y).exp(),
        &[10.0, 30.0, 50.0],
        4000,
        seed,
        &suite_config(),
    )?])
}

fn generator(seed: u64) -> Reports {
    let y = FinitePointMeasure::new([1.0]).expect("valid");
    Ok(vec![limits::generator_test(
        &mixed_law(),
        1.0,
        |x| x,
        &y,
        1e-3,
        GENERATOR_REPLICAS,
        0.05,
        seed,
    )?])
}

fn covering_line(seed: u64) -> Reports {
    let root = NodeLabel::root();
    let mut out = Vec::new();
    let cases = [
        (
            mixed_law(),
            Line::new([root.child(1), root.child(2).child(1), root.child(2).child(2)])?,
            true,
        ),
        (extinction_law(), Line::new([root.child(1)])?, false),
    ];
    for (law, line, covering) in cases {
        let p0 = p0_of(&law)?;
        let shared = Arc::new(law.clone());
        let rows: Vec<(f64, bool)> = replicate(10_000, seed, "covering", |_, s| {
            let tree = tree::grow_to_generation(shared.clone(), TreeParams::new(1.0, 1.0, s), 2)?;
            Ok::<_, LimitError>((tree.line_mass(&line, p0)?, tree.is_covering(&line)?))
        })?;
        let masses: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let est = Estimate::from_samples(&masses);
        let report = if covering {
            within_sigmas("covering_line_mean", &law, seed, est, 1.0)
                .condition("covering_on_every_tree", rows.iter().all(|r| r.1))
        } else {
            TestReport::new("non_covering_line_mean", law.name(), None, seed)
                .samples(est.n)
                .value("std_err", est.std_err)
                .condition("not_covering_somewhere", rows.iter().any(|r| !r.1))
                .judge(est.mean, 1.0 - 4.0 * est.std_err, Direction::AtMost)
        };
        out.push(report);
    }
    Ok(out)
}

fn dirichlet_failure() -> Reports {
    let law = ReproductionLaw::dirichlet(vec![1.0, 1.0], None)?;
    let report = TestReport::new("no_malthusian_exponent", law.name(), None, 0);
    Ok(vec![match law.malthusian_exponent(&SolverConfig::default()) {
        Err(LawError::NoMalthusianExponent { min_moment, .. }) => report
            .value("min_moment", min_moment)
            .condition("no_exponent_reported", true)
            .judge((min_moment - 1.47).abs(), 0.01, Direction::AtMost),
        Ok(p0) => report
            .value("p0", p0)
            .condition("no_exponent_reported", false)
            .judge(f64::INFINITY, 0.01, Direction::AtMost),
        Err(e) => return Err(e.into()),
    }])
}

/// Settings for [`verify_law`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub replicas: usize,
    /// Depth of the generation-indexed checks.
    pub generation: usize,
    /// Times of the time-indexed limit checks; the last one is used for the
    /// single-time tests.
    pub t_grid: [f64; 3],
    pub generator_replicas: usize,
    pub limits: LimitConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            replicas: 10_000,
            generation: 8,
            t_grid: [10.0, 30.0, 50.0],
            generator_replicas: GENERATOR_REPLICAS,
            limits: LimitConfig::default(),
        }
    }
}

/// The checks of the acceptance suite that apply to any law, run on `law`.
/// The supermartingale and moment-scaling checks need a second root of
/// `κ` and are left out without one.
pub fn verify_law(law: &ReproductionLaw, alpha: f64, cfg: &VerifyConfig, seed: u64) -> Reports {
    if !(alpha > 0.0) {
        return Err(LimitError::UnsupportedRegime(format!(
            "the verification suite needs alpha > 0, got {alpha}"
        )));
    }
    let lc = &cfg.limits;
    let n = cfg.replicas;
    let p0 = law.malthusian_exponent(&lc.solver)?;
    let p_plus = law.second_root(&lc.solver)?;
    let shared = Arc::new(law.clone());
    let lattice = law.is_lattice();
    let sub = |i: u32| streams::derive(seed, streams::tag("verify"), &[i]);
    let mut out = Vec::new();

    let kappa = law.kappa(p0)?;
    out.push(
        TestReport::new("kappa_at_p0", law.name(), None, seed)
            .value("p0", p0)
            .judge(kappa.abs(), 1e-9, Direction::AtMost),
    );

    // generation-indexed martingales
    let g = cfg.generation;
    let gens = [g, g + 1];
    let rows: Vec<(Vec<f64>, bool)> = replicate(n, sub(1), "verify-gen", |_, s| {
        let tree = tree::grow_to_generation(shared.clone(), TreeParams::new(alpha, 1.0, s), g + 1)
            .map_err(LimitError::from)?;
        let m: Vec<f64> = gens
            .iter()
            .map(|&k| tree.power_sum_generation(p0, k))
            .collect::<Result<_, _>>()?;
        Ok::<_, LimitError>((m, tree.is_extinct_by(g)?))
    })?;
    let m: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    out.push(within_sigmas(&format!("mean_m{g}"), law, seed, Estimate::from_samples(&column(&m, 0)), 1.0));
    out.push(within_sigmas(&format!("mean_increment_n{g}"), law, seed, increments(&m, 0), 0.0));
    let extinct: Vec<f64> = rows.iter().map(|r| if r.1 { 1.0 } else { 0.0 }).collect();
    let mut target = 0.0;
    for _ in 0..g {
        target = law.offspring_gf(target)?;
    }
    out.push(within_sigmas(
        &format!("extinct_by_generation_{g}"),
        law,
        seed,
        Estimate::from_samples(&extinct),
        target,
    ));
    if let Some(pp) = p_plus {
        let p = 0.5 * (p0 + pp.min(p0 + 2.0));
        let rows = generation_sums(law, p, &gens, n, sub(2), "verify-super")?;
        let est = increments(&rows, 0);
        out.push(
            TestReport::new(format!("supermartingale_p{p:.3}"), law.name(), None, seed)
                .samples(est.n)
                .value("mean", est.mean)
                .value("std_err", est.std_err)
                .judge(est.mean, 4.0 * est.std_err, Direction::AtMost),
        );
    }

    // Markov and scaling properties
    let direct: Vec<[f64; 3]> = replicate(n, sub(3), "verify-markov-direct", |_, s| {
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(alpha, 1.0, s).with_cap(lc.node_cap), 2.0)?;
        Ok::<_, LimitError>(features(&tree.snapshot(2.0)?, p0))
    })?;
    let regrown: Vec<[f64; 3]> = replicate(n, sub(3), "verify-markov-regrow", |_, s| {
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(alpha, 1.0, s).with_cap(lc.node_cap), 1.0)?;
        let end = tree::snapshot_from(&tree.snapshot(1.0)?, &shared, alpha, 1.0, streams::derive(s, 1, &[]), lc.node_cap)?;
        Ok::<_, LimitError>(features(&end, p0))
    })?;
    let scaled: Vec<[f64; 3]> = replicate(n, sub(4), "verify-scaling", |_, s| {
        let ct = 2f64.powf(alpha);
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(alpha, 1.0, s).with_cap(lc.node_cap), ct)?;
        Ok::<_, LimitError>(features(&tree.snapshot(ct)?.scaled(2.0), p0))
    })?;
    let big: Vec<[f64; 3]> = replicate(n, sub(4), "verify-scaling-big", |_, s| {
        let tree = tree::grow_to_time(shared.clone(), TreeParams::new(alpha, 2.0, s).with_cap(lc.node_cap), 1.0)?;
        Ok::<_, LimitError>(features(&tree.snapshot(1.0)?, p0))
    })?;
    for (j, name) in ["mass", "atom_count", "second_moment"].iter().enumerate() {
        let pick = |v: &[f64; 3]| if j == 0 { round_mass(v[0]) } else { v[j] };
        let a: Vec<f64> = direct.iter().map(pick).collect();
        let b: Vec<f64> = regrown.iter().map(pick).collect();
        out.push(ks_report(&format!("markov_{name}"), law, seed, &a, &b)?.with_alpha(alpha));
        let a: Vec<f64> = scaled.iter().map(pick).collect();
        let b: Vec<f64> = big.iter().map(pick).collect();
        out.push(ks_report(&format!("scaling_{name}"), law, seed, &a, &b)?.with_alpha(alpha));
    }

    // spine
    for t in [1.0, 3.0] {
        out.push(limits::spine_identity_test(law, alpha, t, |x| (-x).exp(), n, sub(5), lc)?);
    }
    let spine = Spine::new(law, p0, lc.step_pool, sub(6))?;
    let mut rng = streams::stream(sub(7));
    let steps: Vec<f64> = (0..n.max(10_000)).map(|_| spine.step(&mut rng)).collect();
    for p in [0.1, 0.5] {
        let v: Vec<f64> = steps.iter().map(|s| (p * s).exp()).collect();
        let target = 1.0 - law.kappa(p + p0)?;
        out.push(within_sigmas(&format!("step_laplace_p{p}"), law, seed, Estimate::from_samples(&v), target));
    }
    let per_tree: Vec<Vec<f64>> = replicate(n, sub(8), "verify-lifetimes", |_, s| {
        let tree = tree::grow_to_generation(shared.clone(), TreeParams::new(alpha, 1.0, s), 1)?;
        Ok::<_, LimitError>(tree.nodes().iter().map(|u| u.size.powf(alpha) * u.lifetime).collect())
    })?;
    let pooled: Vec<f64> = per_tree.into_iter().flatten().collect();
    let d = ks_distance(&pooled, |x| 1.0 - (-x).exp())?;
    out.push(
        TestReport::new("lifetime_ks_distance", law.name(), alpha, seed)
            .samples(pooled.len())
            .judge(d, 0.02, Direction::AtMost),
    );
    let t = 5.0;
    let walk: Vec<f64> = replicate(n, sub(9), "verify-walk", |_, s| {
        Ok::<_, LimitError>(tagged::chi_by_walk(&spine, alpha, 1.0, t, &mut streams::stream(s)))
    })?;
    let lamperti: Vec<f64> = replicate(n, sub(9), "verify-lamperti", |_, s| {
        Ok::<_, LimitError>(tagged::chi_by_lamperti(&spine, alpha, 1.0, t, &mut streams::stream(s))?)
    })?;
    out.push(ks_report("walk_vs_lamperti", law, seed, &walk, &lamperti)?.with_alpha(alpha).at_time(t));

    // limit theorems
    let setup = limits::LimitSetup::new(law, alpha, lc, sub(10))?;
    let pool = setup.y_pool(alpha, lc, sub(10))?;
    out.push(
        within_sigmas("mean_inverse_i", law, seed, pool.normalization, alpha * spine.m1())
            .with_alpha(alpha)
            .condition("truncation_within_tail_tol", pool.max_truncation_error <= lc.tail_tol),
    );
    let t_last = cfg.t_grid[2];
    out.push(limits::tagged_limit_test(law, alpha, t_last, n, 0.05, sub(11), lc)?);
    out.push(limits::mean_measure_test(law, alpha, t_last, |y| 1.0 / (1.0 + y), n, sub(12), lc)?);
    if let Some(pp) = p_plus {
        let p = p0 + (0.5 * (pp - p0)).min(1.0);
        // the bias steps between grid times are small next to the noise at n
        out.push(limits::moment_scaling_test(law, alpha, p, &cfg.t_grid, 10 * n, sub(13), lc)?);
    }
    out.push(limits::lp_convergence_test(law, alpha, |y| (-y).exp(), &cfg.t_grid, n, sub(14), lc)?);
    let y = FinitePointMeasure::new([1.0]).expect("valid");
    // g(x) = x would give G = 0 for every mass-conserving law
    out.push(limits::generator_test(law, alpha, |x| x * x, &y, 1e-3, cfg.generator_replicas, 0.05, sub(15))?);
    if lattice {
        out = out
            .into_iter()
            .map(|r| match r.name.as_str() {
                "tagged_limit" | "mean_measure" | "moment_scaling" | "lp_convergence" => r.lattice_caveat(),
                _ => r,
            })
            .collect();
    }
    Ok(out)
}
