use std::io::Write;
use std::sync::Arc;

use sbmc_core::limits::{replicate, write_reports_csv, TestReport};
use sbmc_core::replaw::{Estimate, ReproductionLaw, DEFAULT_STEP_POOL};
use sbmc_core::streams;
use sbmc_core::suite::{self, VerifyConfig, CRITERIA};
use sbmc_core::tagged::{self, Spine, TaggedError};
use sbmc_core::tree::{MarkedTree, TreeError, TreeParams};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::OutDir;

/// Replicas whose full trees or atoms are dumped.
const DUMPED_REPLICAS: usize = 10;

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let profile = cfg.law.profile(&cfg.solver())?;
    let out = OutDir::create(cfg)?;
    let value = out.json("solve.json", &json!({ "profile": profile }))?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

#[derive(Default)]
struct ReplicaRows {
    /// `(count, martingale, extinct)` per configured generation.
    generations: Vec<(usize, Option<f64>, bool)>,
    /// `(count, mass, martingale)` per configured time.
    times: Vec<(usize, f64, Option<f64>)>,
    atoms: String,
    nodes: String,
}

#[derive(Serialize)]
struct Summary {
    mean: f64,
    std_err: f64,
}

impl From<Estimate> for Summary {
    fn from(e: Estimate) -> Self {
        Self {
            mean: e.mean,
            std_err: e.std_err,
        }
    }
}

pub fn simulate_tree(cfg: &RunConfig) -> Result<(), CliError> {
    let law = Arc::new(cfg.law.clone());
    // the martingale columns are left empty when the law has no exponent
    let p0 = cfg.law.malthusian_exponent(&cfg.solver()).ok();
    let max_gen = cfg.generations.iter().copied().max();
    let max_t = cfg.times.iter().copied().fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let fmt_m = |v: Option<f64>| v.map(|m| m.to_string()).unwrap_or_default();

    let rows: Vec<ReplicaRows> = replicate(cfg.replicas, cfg.seed, "simulate-tree", |i, s| {
        let params = TreeParams {
            alpha: cfg.alpha,
            root_size: cfg.root_size,
            seed: s,
            cap: cfg.node_cap,
        };
        let mut tree = MarkedTree::new(law.clone(), params)?;
        if let Some(n) = max_gen {
            tree.extend_to_generation(n)?;
        }
        if let Some(t) = max_t {
            tree.extend_to_time(t)?;
        }
        let mut r = ReplicaRows::default();
        for &g in &cfg.generations {
            let count = tree.generation_size(g)?;
            let m = p0.map(|p| tree.intrinsic_martingale_gen(p, g)).transpose()?;
            r.generations.push((count, m, tree.is_extinct_by(g)?));
        }
        for &t in &cfg.times {
            let snap = tree.snapshot(t)?;
            let m = p0.map(|p| snap.power_mass(p));
            r.times.push((snap.count(), snap.power_mass(1.0), m));
            if i < DUMPED_REPLICAS {
                for a in snap.atoms() {
                    r.atoms += &format!("{i},{t},{a}\n");
                }
            }
        }
        if i < DUMPED_REPLICAS {
            for node in tree.nodes() {
                let line = serde_json::to_string(&json!({ "replica": i, "node": node }))
                    .expect("nodes serialize");
                r.nodes += &line;
                r.nodes.push('\n');
            }
        }
        Ok::<_, TreeError>(r)
    })?;

    let out = OutDir::create(cfg)?;
    let mut gens = out.csv("generations.csv", "replica,generation,count,martingale,extinct")?;
    let mut times = out.csv("times.csv", "replica,t,count,mass,martingale")?;
    let mut atoms = out.csv("snapshots.csv", "replica,t,atom")?;
    let mut nodes = out.jsonl("trees.jsonl")?;
    for (i, r) in rows.iter().enumerate() {
        for (&g, &(count, m, extinct)) in cfg.generations.iter().zip(&r.generations) {
            writeln!(gens, "{i},{g},{count},{},{}", fmt_m(m), u8::from(extinct))?;
        }
        for (&t, &(count, mass, m)) in cfg.times.iter().zip(&r.times) {
            writeln!(times, "{i},{t},{count},{mass},{}", fmt_m(m))?;
        }
        atoms.write_all(r.atoms.as_bytes())?;
        nodes.write_all(r.nodes.as_bytes())?;
    }
    for w in [&mut gens, &mut times, &mut atoms, &mut nodes] {
        w.flush()?;
    }

    let mean = |xs: Vec<f64>| Summary::from(Estimate::from_samples(&xs));
    let gen_summary: Vec<_> = cfg
        .generations
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            json!({
                "generation": g,
                "count": mean(rows.iter().map(|r| r.generations[j].0 as f64).collect()),
                "martingale": p0.map(|_| mean(rows.iter().filter_map(|r| r.generations[j].1).collect())),
                "extinct_fraction": mean(rows.iter().map(|r| f64::from(u8::from(r.generations[j].2))).collect()),
            })
        })
        .collect();
    let time_summary: Vec<_> = cfg
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            json!({
                "t": t,
                "count": mean(rows.iter().map(|r| r.times[j].0 as f64).collect()),
                "mass": mean(rows.iter().map(|r| r.times[j].1).collect()),
                "martingale": p0.map(|_| mean(rows.iter().filter_map(|r| r.times[j].2).collect())),
            })
        })
        .collect();
    let value = out.json(
        "summary.json",
        &json!({ "p0": p0, "generations": gen_summary, "times": time_summary }),
    )?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

pub fn simulate_tagged(cfg: &RunConfig) -> Result<(), CliError> {
    let law: &ReproductionLaw = &cfg.law;
    let p0 = law.malthusian_exponent(&cfg.solver())?;
    let spine = Spine::new(law, p0, DEFAULT_STEP_POOL, streams::derive(cfg.seed, streams::tag("spine"), &[]))?;
    if !(spine.kappa_prime() > 0.0) {
        return Err(TaggedError::UnsupportedRegime(format!(
            "kappa'(p0) = {} <= 0: the tagged log-size does not drift to -infinity",
            spine.kappa_prime()
        ))
        .into());
    }
    if !(cfg.alpha > 0.0) {
        return Err(TaggedError::UnsupportedRegime(
            "alpha = 0: the exponential functional is infinite".into(),
        )
        .into());
    }
    let alpha = cfg.alpha;
    let x = cfg.root_size;
    let steps = cfg.generations.iter().copied().max().unwrap_or(0).max(1);

    let walks: Vec<String> = replicate(cfg.replicas, cfg.seed, "tagged-walk", |i, s| {
        let path = tagged::simulate_tagged_walk(&spine, alpha, steps, x, &mut streams::stream(s))?;
        let mut rows = String::new();
        for k in 0..=steps {
            let (life, birth) = match (path.lifetimes.get(k), path.birth_times.get(k)) {
                (Some(l), Some(b)) => (l.to_string(), b.to_string()),
                _ => (String::new(), String::new()),
            };
            rows += &format!("{i},{k},{},{life},{birth}\n", path.log_sizes[k]);
        }
        Ok::<_, TaggedError>(rows)
    })?;
    let chis: Vec<String> = replicate(cfg.replicas, cfg.seed, "tagged-chi", |i, s| {
        let mut rows = String::new();
        for (j, &t) in cfg.times.iter().enumerate() {
            let key = streams::derive(s, j as u64, &[]);
            let walk = tagged::chi_by_walk(&spine, alpha, x, t, &mut streams::stream(key));
            let lamperti = tagged::chi_by_lamperti(&spine, alpha, x, t, &mut streams::stream(key ^ 1))?;
            rows += &format!("{i},{t},{walk},{lamperti}\n");
        }
        Ok::<_, TaggedError>(rows)
    })?;
    let pool_size = cfg.replicas.max(1000);
    let mut rng = streams::stream(streams::derive(cfg.seed, streams::tag("y-pool"), &[]));
    let pool = tagged::sample_y_pool(&spine, alpha, cfg.tail_tol, pool_size, &mut rng)?;
    let ys = pool.resample(cfg.replicas, &mut rng);

    let out = OutDir::create(cfg)?;
    let mut w = out.csv("walks.csv", "replica,step,log_size,lifetime,birth")?;
    for r in &walks {
        w.write_all(r.as_bytes())?;
    }
    w.flush()?;
    let mut w = out.csv("chi.csv", "replica,t,chi_walk,chi_lamperti")?;
    for r in &chis {
        w.write_all(r.as_bytes())?;
    }
    w.flush()?;
    let mut w = out.csv("functional.csv", "index,i,inverse_i")?;
    for (k, i) in pool.functionals.iter().enumerate() {
        writeln!(w, "{k},{i},{}", 1.0 / i)?;
    }
    w.flush()?;
    let mut w = out.csv("y.csv", "replica,y")?;
    for (k, y) in ys.iter().enumerate() {
        writeln!(w, "{k},{y}")?;
    }
    w.flush()?;

    let y_alpha = pool.expectation(|y| y.powf(alpha));
    let value = out.json(
        "summary.json",
        &json!({
            "p0": p0,
            "kappa_prime": spine.kappa_prime(),
            "m1": spine.m1(),
            "step_law_exact": spine.steps().is_exact(),
            "mean_inverse_i": Summary::from(pool.normalization),
            "alpha_m1": alpha * spine.m1(),
            "mean_y_alpha": Summary::from(y_alpha),
            "inverse_alpha_m1": 1.0 / (alpha * spine.m1()),
            "max_truncation_error": pool.max_truncation_error,
            "effective_sample_size": pool.effective_sample_size,
            "pool_degenerate": pool.degenerate,
        }),
    )?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

pub struct VerifyOptions {
    pub acceptance: bool,
    pub criteria: Vec<u32>,
    pub generator_replicas: Option<usize>,
}

pub fn verify(cfg: &RunConfig, opts: &VerifyOptions) -> Result<(), CliError> {
    let out = OutDir::create(cfg)?;
    let (reports, value) = if opts.acceptance {
        let ids: Vec<u32> = if opts.criteria.is_empty() {
            CRITERIA.iter().map(|c| c.0).collect()
        } else {
            opts.criteria.clone()
        };
        let mut results = Vec::new();
        for id in ids {
            let r = suite::run_criterion(id, cfg.seed);
            println!("{}", r.summary_line());
            for rep in &r.reports {
                println!("    {rep}");
            }
            results.push(r);
        }
        let failed: Vec<u32> = results.iter().filter(|r| !r.passed()).map(|r| r.id).collect();
        let reports: Vec<TestReport> = results.iter().flat_map(|r| r.reports.clone()).collect();
        let value = json!({ "criteria": results, "failed_criteria": failed });
        (reports, (value, failed.len()))
    } else {
        let mut vc = VerifyConfig {
            replicas: cfg.replicas,
            limits: cfg.limits(),
            ..VerifyConfig::default()
        };
        if let Some(n) = opts.generator_replicas {
            vc.generator_replicas = n;
        }
        let reports = suite::verify_law(&cfg.law, cfg.alpha, &vc, cfg.seed)?;
        for r in &reports {
            println!("{r}");
        }
        let failed = reports.iter().filter(|r| !r.acceptable()).count();
        let value = json!({ "verify_config": vc, "reports": reports });
        (reports, (value, failed))
    };
    let (value, failed) = value;
    out.json("reports.json", &value)?;
    let mut w = out.commented("reports.csv")?;
    write_reports_csv(&reports, &mut w)?;
    w.flush()?;
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}
