#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::VerifyOptions;
use crate::config::RunConfig;
use crate::error::CliError;

/// Simulation and verification toolkit for self-similar branching Markov
/// chains.
#[derive(Debug, Parser)]
#[command(name = "sbmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Malthusian exponent, second root, drift and extinction probability.
    Solve(Common),
    /// Grow marked trees; write generation and snapshot tables.
    SimulateTree(Common),
    /// Tagged lineage, both routes to chi(t), exponential functional and Y.
    SimulateTagged(Common),
    /// Run the verification checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Run the fixed acceptance suite instead of the checks on the
        /// configured law.
        #[arg(long)]
        acceptance: bool,
        /// With --acceptance, run only these criteria.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
        /// Replicas of the generator finite-difference check.
        #[arg(long)]
        generator_replicas: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reproduction law as inline JSON, e.g. '{"type":"uniform_binary"}'.
    #[arg(long)]
    law: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replicas.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long)]
    root_size: Option<f64>,
    /// Observation times.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    times: Option<Vec<f64>>,
    /// Observed generations.
    #[arg(long, value_delimiter = ',')]
    generations: Option<Vec<usize>>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Node cap per tree.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    tail_tol: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(law) = &self.law {
            cfg.law = serde_json::from_str(law).map_err(|e| CliError::Config(format!("bad --law: {e}")))?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.n {
            cfg.replicas = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.root_size {
            cfg.root_size = v;
        }
        if let Some(v) = &self.times {
            cfg.times = v.clone();
        }
        if let Some(v) = &self.generations {
            cfg.generations = v.clone();
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.cap {
            cfg.node_cap = v;
        }
        if let Some(v) = self.tail_tol {
            cfg.tail_tol = v;
        }
        cfg.validate()?;
        if let Some(threads) = self.threads {
            if threads == 0 {
                return Err(CliError::Config("--threads must be >= 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(c) => commands::solve(&c.resolve()?),
        Command::SimulateTree(c) => commands::simulate_tree(&c.resolve()?),
        Command::SimulateTagged(c) => commands::simulate_tagged(&c.resolve()?),
        Command::Verify {
            common,
            acceptance,
            criteria,
            generator_replicas,
        } => commands::verify(
            &common.resolve()?,
            &VerifyOptions {
                acceptance,
                criteria,
                generator_replicas,
            },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
