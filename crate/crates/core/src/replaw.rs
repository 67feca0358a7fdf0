//! Reproduction laws and their Malthusian profile.
//!
//! A reproduction law is the distribution of the point measure of relative
//! daughter sizes. This module provides sampling, the moment function
//! `p -> E<x^p, s>`, the concave function `kappa(p) = 1 - E<x^p, s>`, its
//! roots, the offspring-count generating function and the step law of the
//! size-biased random walk.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::measures::FinitePointMeasure;
use crate::streams;

const PROB_SUM_TOL: f64 = 1e-12;
const STEP_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("invalid reproduction law: {0}")]
    Invalid(String),
    #[error("moment of order {p} diverges (lower integrability bound is {p_lower})")]
    Domain { p: f64, p_lower: f64 },
    #[error(
        "no Malthusian exponent: kappa has no sign change on the scan grid \
         (max kappa {max_kappa:.6} at p = {argmax:.6}, i.e. min moment {min_moment:.6})"
    )]
    NoMalthusianExponent {
        max_kappa: f64,
        argmax: f64,
        min_moment: f64,
    },
    #[error("kappa vanishes on a whole bracket around p = {p}; the root is not isolated")]
    AmbiguousRoot { p: f64 },
    #[error("generating function argument {0} is outside [0, 1]")]
    GfDomain(f64),
    #[error("step masses sum to {total}, not 1: the supplied exponent is not a root of kappa")]
    InconsistentExponent { total: f64 },
}

/// One atom configuration of a finite mixture, chosen with probability `prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub prob: f64,
    pub atoms: Vec<f64>,
}

/// Serialized form of a law, as accepted in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LawSpec {
    DeterministicBinary,
    UniformBinary,
    Discrete {
        components: Vec<Component>,
    },
    Dirichlet {
        weights: Vec<f64>,
        #[serde(default)]
        scale: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct DiscreteMixture {
    components: Vec<Component>,
    cumulative: Vec<f64>,
    // sorted descending, cached for sampling
    measures: Vec<FinitePointMeasure>,
}

impl DiscreteMixture {
    pub fn new(components: Vec<Component>) -> Result<Self, LawError> {
        if components.is_empty() {
            return Err(LawError::Invalid("mixture has no components".into()));
        }
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(components.len());
        for c in &components {
            if !(c.prob >= 0.0) || !c.prob.is_finite() {
                return Err(LawError::Invalid(format!("bad probability {}", c.prob)));
            }
            if let Some(a) = c.atoms.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
                return Err(LawError::Invalid(format!(
                    "atom sizes must be finite and > 0, got {a}"
                )));
            }
            total += c.prob;
            cumulative.push(total);
        }
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(LawError::Invalid(format!(
                "component probabilities sum to {total}"
            )));
        }
        let measures = components
            .iter()
            .map(|c| FinitePointMeasure::from_iter(c.atoms.iter().copied()))
            .collect();
        Ok(Self {
            components,
            cumulative,
            measures,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.components.len() - 1)
    }
}

#[derive(Debug, Clone)]
pub struct DirichletScaled {
    weights: Vec<f64>,
    scale: f64,
    gammas: Vec<Gamma<f64>>,
}

impl DirichletScaled {
    /// `scale = None` selects the default `w(w+1) / sum w_i(w_i+1)` with
    /// `w = sum w_i`.
    pub fn new(weights: Vec<f64>, scale: Option<f64>) -> Result<Self, LawError> {
        if weights.len() < 2 {
            return Err(LawError::Invalid("Dirichlet law needs at least 2 weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(LawError::Invalid(format!("Dirichlet weight {w} is not > 0")));
        }
        let scale = match scale {
            Some(a) if a > 0.0 && a.is_finite() => a,
            Some(a) => return Err(LawError::Invalid(format!("Dirichlet scale {a} is not > 0"))),
            None => Self::default_scale(&weights),
        };
        let gammas = weights
            .iter()
            .map(|&w| Gamma::new(w, 1.0).map_err(|e| LawError::Invalid(e.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            weights,
            scale,
            gammas,
        })
    }

    pub fn default_scale(weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().sum();
        let denom: f64 = weights.iter().map(|w| w * (w + 1.0)).sum();
        total * (total + 1.0) / denom
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// The law of the relative daughter sizes.
#[derive(Debug, Clone)]
pub enum ReproductionLaw {
    /// Two daughters of relative size 1/2 each.
    DeterministicBinary,
    /// Two daughters of relative sizes `U` and `1 - U`, `U` uniform.
    UniformBinary,
    DiscreteMixture(DiscreteMixture),
    /// `a * (D_1, ..., D_n)` with `D` Dirichlet distributed.
    DirichletScaled(DirichletScaled),
}

impl TryFrom<LawSpec> for ReproductionLaw {
    type Error = LawError;

    fn try_from(spec: LawSpec) -> Result<Self, LawError> {
        Ok(match spec {
            LawSpec::DeterministicBinary => Self::DeterministicBinary,
            LawSpec::UniformBinary => Self::UniformBinary,
            LawSpec::Discrete { components } => {
                Self::DiscreteMixture(DiscreteMixture::new(components)?)
            }
            LawSpec::Dirichlet { weights, scale } => {
                Self::DirichletScaled(DirichletScaled::new(weights, scale)?)
            }
        })
    }
}

impl From<&ReproductionLaw> for LawSpec {
    fn from(law: &ReproductionLaw) -> Self {
        match law {
            ReproductionLaw::DeterministicBinary => LawSpec::DeterministicBinary,
            ReproductionLaw::UniformBinary => LawSpec::UniformBinary,
            ReproductionLaw::DiscreteMixture(m) => LawSpec::Discrete {
                components: m.components.clone(),
            },
            ReproductionLaw::DirichletScaled(d) => LawSpec::Dirichlet {
                weights: d.weights.clone(),
                scale: Some(d.scale),
            },
        }
    }
}

impl Serialize for ReproductionLaw {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LawSpec::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ReproductionLaw {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let spec = LawSpec::deserialize(deserializer)?;
        ReproductionLaw::try_from(spec).map_err(serde::de::Error::custom)
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
    /// Set when the variance of the summand may be infinite, in which case
    /// `std_err` is not meaningful.
    pub flagged: bool,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            n,
            flagged: false,
        }
    }
}

/// Root-scan settings for `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Required `|kappa(root)|`.
    pub tol: f64,
    pub grid_points: usize,
    /// Upper end of the scanned exponent range.
    pub p_cap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            grid_points: 512,
            p_cap: 64.0,
        }
    }
}

impl ReproductionLaw {
    pub fn discrete(components: Vec<(f64, Vec<f64>)>) -> Result<Self, LawError> {
        DiscreteMixture::new(
            components
                .into_iter()
                .map(|(prob, atoms)| Component { prob, atoms })
                .collect(),
        )
        .map(Self::DiscreteMixture)
    }

    pub fn dirichlet(weights: Vec<f64>, scale: Option<f64>) -> Result<Self, LawError> {
        DirichletScaled::new(weights, scale).map(Self::DirichletScaled)
    }

    pub fn name(&self) -> String {
        match self {
            Self::DeterministicBinary => "deterministic_binary".into(),
            Self::UniformBinary => "uniform_binary".into(),
            Self::DiscreteMixture(_) => "discrete".into(),
            Self::DirichletScaled(_) => "dirichlet".into(),
        }
    }

    /// Draws relative daughter sizes into `out` (cleared first), sorted in
    /// descending order. An empty draw means the individual leaves no
    /// offspring.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match self {
            Self::DeterministicBinary => out.extend_from_slice(&[0.5, 0.5]),
            Self::UniformBinary => {
                let u: f64 = Open01.sample(rng);
                let (a, b) = (u, 1.0 - u);
                if a >= b {
                    out.extend_from_slice(&[a, b]);
                } else {
                    out.extend_from_slice(&[b, a]);
                }
            }
            Self::DiscreteMixture(m) => {
                let k = m.pick(rng);
                out.extend_from_slice(m.measures[k].atoms());
            }
            Self::DirichletScaled(d) => {
                let mut total = 0.0;
                for g in &d.gammas {
                    let x = g.sample(rng);
                    total += x;
                    out.push(x);
                }
                for x in out.iter_mut() {
                    *x *= d.scale / total;
                }
                out.retain(|x| *x > 0.0);
                out.sort_by(|a, b| b.total_cmp(a));
            }
        }
    }

    /// An independent draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FinitePointMeasure {
        let mut buf = Vec::new();
        self.sample_into(rng, &mut buf);
        FinitePointMeasure::from_iter(buf)
    }

    /// Infimum of the exponents for which `E<x^p, s>` is finite.
    pub fn p_lower(&self) -> f64 {
        match self {
            Self::DeterministicBinary | Self::DiscreteMixture(_) => f64::NEG_INFINITY,
            Self::UniformBinary => -1.0,
            // each marginal is Beta(w_i, w - w_i)
            Self::DirichletScaled(d) => -d.weights.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    /// Divergence boundary above `p_lower`; `None` means `+infinity`.
    pub fn p_upper(&self) -> Option<f64> {
        None
    }

    fn check_domain(&self, p: f64) -> Result<(), LawError> {
        let p_lower = self.p_lower();
        if !(p > p_lower) || !p.is_finite() {
            return Err(LawError::Domain { p, p_lower });
        }
        Ok(())
    }

    /// `E<x^p, s>`, in closed form for every built-in law.
    pub fn moment(&self, p: f64) -> Result<f64, LawError> {
        self.check_domain(p)?;
        Ok(match self {
            Self::DeterministicBinary => 2.0 * 0.5f64.powf(p),
            Self::UniformBinary => 2.0 / (p + 1.0),
            Self::DiscreteMixture(m) => m
                .components
                .iter()
                .map(|c| c.prob * c.atoms.iter().map(|a| a.powf(p)).sum::<f64>())
                .sum(),
            Self::DirichletScaled(d) => {
                let w: f64 = d.weights.iter().sum();
                let ratio: f64 = d
                    .weights
                    .iter()
                    .map(|&wi| (ln_gamma(p + wi) - ln_gamma(wi)).exp())
                    .sum();
                (p * d.scale.ln() + ln_gamma(w) - ln_gamma(w + p)).exp() * ratio
            }
        })
    }

    /// Monte Carlo estimate of `E<x^p, s>` from `n` independent draws.
    pub fn moment_mc<R: Rng + ?Sized>(&self, p: f64, n: usize, rng: &mut R) -> Result<Estimate, LawError> {
        self.check_domain(p)?;
        let mut buf = Vec::new();
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                self.sample_into(rng, &mut buf);
                buf.iter().map(|a| a.powf(p)).sum()
            })
            .collect();
        let mut est = Estimate::from_samples(&xs);
        est.flagged = !(2.0 * p > self.p_lower()) || !est.std_err.is_finite();
        Ok(est)
    }

    pub fn kappa(&self, p: f64) -> Result<f64, LawError> {
        Ok(1.0 - self.moment(p)?)
    }

    /// `kappa'(p) = -E<x^p ln x, s>`.
    pub fn kappa_prime(&self, p: f64) -> Result<f64, LawError> {
        self.check_domain(p)?;
        Ok(match self {
            Self::DeterministicBinary => 2.0 * 0.5f64.powf(p) * LN_2,
            Self::UniformBinary => 2.0 / ((p + 1.0) * (p + 1.0)),
            Self::DiscreteMixture(m) => -m
                .components
                .iter()
                .map(|c| c.prob * c.atoms.iter().map(|a| a.powf(p) * a.ln()).sum::<f64>())
                .sum::<f64>(),
            Self::DirichletScaled(_) => {
                // Richardson-refined central difference
                let h = 1e-5_f64.min(0.25 * (p - self.p_lower()));
                let d = |h: f64| -> Result<f64, LawError> {
                    Ok((self.kappa(p + h)? - self.kappa(p - h)?) / (2.0 * h))
                };
                (4.0 * d(0.5 * h)? - d(h)?) / 3.0
            }
        })
    }

    fn scan_grid(&self, cfg: &SolverConfig) -> Vec<f64> {
        let n = cfg.grid_points.max(4);
        let p_lower = self.p_lower();
        if p_lower.is_finite() {
            // geometric offsets from the integrability bound
            let span = cfg.p_cap - p_lower;
            let first = 1e-9 * span.max(1.0);
            let ratio = (span / first).powf(1.0 / (n - 1) as f64);
            (0..n).map(|i| p_lower + first * ratio.powi(i as i32)).collect()
        } else {
            // geometric in |p| on both sides of zero
            let half = n / 2;
            let first = 1e-6;
            let ratio = (cfg.p_cap / first).powf(1.0 / (half - 1) as f64);
            let pos: Vec<f64> = (0..half).map(|i| first * ratio.powi(i as i32)).collect();
            pos.iter().rev().map(|p| -p).chain(pos.iter().copied()).collect()
        }
    }

    fn kappa_on_grid(&self, cfg: &SolverConfig) -> Result<Vec<(f64, f64)>, LawError> {
        self.scan_grid(cfg)
            .into_iter()
            .filter(|p| p.is_finite())
            .map(|p| self.kappa(p).map(|k| (p, k)))
            .filter(|r| !matches!(r, Ok((_, k)) if !k.is_finite()))
            .collect()
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, cfg: &SolverConfig) -> Result<f64, LawError> {
        let mut k_lo = self.kappa(lo)?;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let k_mid = self.kappa(mid)?;
            if k_mid == 0.0 {
                return Ok(mid);
            }
            if (k_mid > 0.0) == (k_lo > 0.0) {
                lo = mid;
                k_lo = k_mid;
            } else {
                hi = mid;
            }
        }
        let k_hi = self.kappa(hi)?;
        let root = if k_lo.abs() <= k_hi.abs() { lo } else { hi };
        let residual = self.kappa(root)?;
        if residual.abs() > cfg.tol {
            return Err(LawError::AmbiguousRoot { p: root });
        }
        Ok(root)
    }

    /// Sign changes of `kappa` on the scan grid, refined by bisection, in
    /// increasing order. At most two exist since `kappa` is concave.
    fn roots(&self, cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<(f64, f64)>), LawError> {
        let grid = self.kappa_on_grid(cfg)?;
        let mut roots = Vec::new();
        for w in grid.windows(2) {
            let ((p1, k1), (p2, k2)) = (w[0], w[1]);
            if k1 == 0.0 {
                if k2 == 0.0 {
                    return Err(LawError::AmbiguousRoot { p: p1 });
                }
                if roots.last() != Some(&p1) {
                    roots.push(p1);
                }
            } else if k2 == 0.0 {
                roots.push(p2);
            } else if (k1 > 0.0) != (k2 > 0.0) {
                roots.push(self.bisect(p1, p2, cfg)?);
            }
        }
        Ok((roots, grid))
    }

    /// The smallest root of `kappa`, the Malthusian exponent.
    pub fn malthusian_exponent(&self, cfg: &SolverConfig) -> Result<f64, LawError> {
        let (roots, grid) = self.roots(cfg)?;
        match roots.first() {
            Some(&p0) => Ok(p0),
            None => {
                let (argmax, max_kappa) = grid
                    .iter()
                    .copied()
                    .fold((f64::NAN, f64::NEG_INFINITY), |best, pk| {
                        if pk.1 > best.1 { pk } else { best }
                    });
                Err(LawError::NoMalthusianExponent {
                    max_kappa,
                    argmax,
                    min_moment: 1.0 - max_kappa,
                })
            }
        }
    }

    /// The next root of `kappa` above the Malthusian exponent, if the scan
    /// finds one.
    pub fn second_root(&self, cfg: &SolverConfig) -> Result<Option<f64>, LawError> {
        let (roots, _) = self.roots(cfg)?;
        Ok(roots.get(1).copied())
    }

    /// Generating function of the number of daughters, `E u^{#s}`.
    pub fn offspring_gf(&self, u: f64) -> Result<f64, LawError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(LawError::GfDomain(u));
        }
        Ok(match self {
            Self::DeterministicBinary | Self::UniformBinary => u * u,
            Self::DiscreteMixture(m) => m
                .components
                .iter()
                .map(|c| c.prob * u.powi(c.atoms.len() as i32))
                .sum(),
            Self::DirichletScaled(d) => u.powi(d.weights.len() as i32),
        })
    }

    /// Mean number of daughters.
    pub fn mean_offspring(&self) -> f64 {
        match self {
            Self::DeterministicBinary | Self::UniformBinary => 2.0,
            Self::DiscreteMixture(m) => m
                .components
                .iter()
                .map(|c| c.prob * c.atoms.len() as f64)
                .sum(),
            Self::DirichletScaled(d) => d.weights.len() as f64,
        }
    }

    /// Probability that the daughter count is zero.
    pub fn death_probability(&self) -> f64 {
        match self {
            Self::DiscreteMixture(m) => m
                .components
                .iter()
                .filter(|c| c.atoms.is_empty())
                .map(|c| c.prob)
                .sum(),
            _ => 0.0,
        }
    }

    /// Extinction probability of the embedded Galton-Watson process: the
    /// smallest fixed point of the generating function, by monotone iteration
    /// from 0.
    pub fn extinction_prob(&self, tol: f64) -> f64 {
        let f0 = self.death_probability();
        if f0 == 0.0 {
            return 0.0;
        }
        if self.mean_offspring() <= 1.0 {
            return 1.0;
        }
        let mut q = 0.0;
        for _ in 0..10_000_000 {
            let next = self.offspring_gf(q).expect("iterates stay in [0,1]");
            if (next - q).abs() < tol {
                return next;
            }
            q = next;
        }
        q
    }

    /// `E(<x^p0, s>^2)`; exact for finite laws, Monte Carlo otherwise.
    pub fn martingale_second_moment(&self, p0: f64, n_mc: usize, seed: u64) -> Estimate {
        let exact = |mean: f64| Estimate {
            mean,
            std_err: 0.0,
            n: 0,
            flagged: false,
        };
        match self {
            Self::DeterministicBinary => exact((2.0 * 0.5f64.powf(p0)).powi(2)),
            Self::DiscreteMixture(m) => exact(
                m.components
                    .iter()
                    .map(|c| c.prob * c.atoms.iter().map(|a| a.powf(p0)).sum::<f64>().powi(2))
                    .sum(),
            ),
            _ => {
                let mut rng = streams::stream(seed);
                let mut buf = Vec::new();
                let xs: Vec<f64> = (0..n_mc)
                    .map(|_| {
                        self.sample_into(&mut rng, &mut buf);
                        buf.iter().map(|a| a.powf(p0)).sum::<f64>().powi(2)
                    })
                    .collect();
                Estimate::from_samples(&xs)
            }
        }
    }

    /// True when the log-sizes of the daughters live on a lattice `rZ`, the
    /// case excluded by the distributional limit theorems.
    pub fn is_lattice(&self) -> bool {
        match self {
            Self::DeterministicBinary => true,
            Self::UniformBinary | Self::DirichletScaled(_) => false,
            Self::DiscreteMixture(m) => {
                let logs: Vec<f64> = m
                    .components
                    .iter()
                    .filter(|c| c.prob > 0.0)
                    .flat_map(|c| c.atoms.iter().map(|a| a.ln()))
                    .filter(|l| l.abs() > 1e-12)
                    .collect();
                match logs.first() {
                    None => true,
                    Some(&base) => logs.iter().all(|l| is_rational(l / base, 1000, 1e-9)),
                }
            }
        }
    }

    /// Everything the simulators need to know about the law at its
    /// Malthusian exponent.
    pub fn profile(&self, cfg: &SolverConfig) -> Result<MalthusianProfile, LawError> {
        let (roots, grid) = self.roots(cfg)?;
        let Some(&p0) = roots.first() else {
            return Err(self.malthusian_exponent(cfg).unwrap_err());
        };
        let kappa_prime = self.kappa_prime(p0)?;
        let kappa_positive_right = grid.iter().any(|&(p, k)| p > p0 && k > 0.0);
        Ok(MalthusianProfile {
            p_lower: self.p_lower(),
            p_upper: self.p_upper(),
            p0,
            p_plus: roots.get(1).copied(),
            kappa_prime_at_p0: kappa_prime,
            m1: kappa_prime.abs(),
            mean_offspring: self.mean_offspring(),
            extinction_prob: self.extinction_prob(1e-14),
            kappa_positive_right,
            martingale_second_moment: self.martingale_second_moment(p0, 100_000, 0x5eed),
        })
    }
}

fn is_rational(x: f64, max_den: u64, tol: f64) -> bool {
    // continued-fraction convergents
    let (mut h0, mut h1) = (0.0f64, 1.0f64);
    let (mut k0, mut k1) = (1.0f64, 0.0f64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_den as f64 {
            return false;
        }
        if (x - h2 / k2).abs() <= tol * x.abs().max(1.0) {
            return true;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac.abs() < 1e-15 {
            return false;
        }
        r = 1.0 / frac;
    }
    false
}

/// Malthusian quantities of a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalthusianProfile {
    pub p_lower: f64,
    /// `None` stands for `+infinity`.
    pub p_upper: Option<f64>,
    pub p0: f64,
    pub p_plus: Option<f64>,
    pub kappa_prime_at_p0: f64,
    /// `|kappa'(p0)|`, the absolute drift of the tagged log-size.
    pub m1: f64,
    pub mean_offspring: f64,
    pub extinction_prob: f64,
    /// Whether `kappa > 0` somewhere to the right of `p0` on the scan grid.
    pub kappa_positive_right: bool,
    /// `E(M_1^2)`, finite under the integrability hypothesis.
    pub martingale_second_moment: Estimate,
}

/// Law of one step `S_1 - S_0` of the size-biased random walk: the image of
/// `x^p0 ν(ds)` summed over daughters, under `x -> ln x`.
#[derive(Debug, Clone)]
pub struct StepDistribution {
    values: Vec<f64>,
    cumulative: Vec<f64>,
    exact: bool,
    normalization_error: f64,
}

pub const DEFAULT_STEP_POOL: usize = 1_000_000;

impl StepDistribution {
    /// Exact enumeration for finite laws; weighted resampling pool of
    /// `pool_size` reproduction draws for continuous ones.
    pub fn new<R: Rng + ?Sized>(
        law: &ReproductionLaw,
        p0: f64,
        pool_size: usize,
        rng: &mut R,
    ) -> Result<Self, LawError> {
        let finite: Option<Vec<Component>> = match law {
            ReproductionLaw::DeterministicBinary => Some(vec![Component {
                prob: 1.0,
                atoms: vec![0.5, 0.5],
            }]),
            ReproductionLaw::DiscreteMixture(m) => Some(m.components.clone()),
            _ => None,
        };
        if let Some(components) = finite {
            let mut values = Vec::new();
            let mut masses = Vec::new();
            for c in &components {
                for &a in &c.atoms {
                    let w = c.prob * a.powf(p0);
                    if w > 0.0 {
                        values.push(a.ln());
                        masses.push(w);
                    }
                }
            }
            let total: f64 = masses.iter().sum();
            if (total - 1.0).abs() > STEP_MASS_TOL {
                return Err(LawError::InconsistentExponent { total });
            }
            return Ok(Self::from_weighted(values, masses, true, total - 1.0));
        }
        if pool_size == 0 {
            return Err(LawError::Invalid("empty step pool".into()));
        }
        let mut values = Vec::with_capacity(2 * pool_size);
        let mut masses = Vec::with_capacity(2 * pool_size);
        let mut buf = Vec::new();
        for _ in 0..pool_size {
            law.sample_into(rng, &mut buf);
            for &a in &buf {
                values.push(a.ln());
                masses.push(a.powf(p0));
            }
        }
        let total: f64 = masses.iter().sum();
        Ok(Self::from_weighted(
            values,
            masses,
            false,
            total / pool_size as f64 - 1.0,
        ))
    }

    fn from_weighted(values: Vec<f64>, masses: Vec<f64>, exact: bool, normalization_error: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            values,
            cumulative,
            exact,
            normalization_error,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = self.cumulative[self.cumulative.len() - 1];
        let u = rng.random::<f64>() * total;
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.values.len() - 1);
        self.values[i]
    }

    /// Whether the step law is represented exactly (finite support) rather
    /// than by a resampling pool.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// For exact laws, total mass minus one; for pools, the average pool
    /// weight `<x^p0, s>` minus one.
    pub fn normalization_error(&self) -> f64 {
        self.normalization_error
    }

    /// Support points and probabilities. For a pool these are the pool items.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let total = self.cumulative[self.cumulative.len() - 1];
        self.values.iter().enumerate().map(move |(i, &v)| {
            let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
            (v, (self.cumulative[i] - prev) / total)
        })
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(v, p)| v * p).sum()
    }
}
