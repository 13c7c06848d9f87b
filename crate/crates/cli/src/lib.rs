//! Configuration, experiment pipelines and reports for the `mfsmp` binary.

pub mod config;
pub mod report;
pub mod run;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

pub use config::{parse_config, ExperimentConfig};
pub use report::emit_report;
pub use run::{run_experiment, Results, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mfsmp", about = "Partially observed mean-field control experiments")]
pub struct Args {
    #[arg(value_enum)]
    pub subcommand: Subcommand,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to MFSMP_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
}

pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MFSMP_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .with_context(|| format!("MFSMP_THREADS={v:?} is not a count"))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        anyhow::bail!("thread count must be positive");
    }
    Ok(n)
}

/// Runs one invocation; `Ok(true)` when every check passed.
pub fn execute(args: &Args) -> Result<bool> {
    if let Some(n) = thread_count(args.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    let text =
        std::fs::read_to_string(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.ensemble.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let results = run_experiment(&cfg, args.subcommand)?;
    emit_report(&results, &out)?;
    for c in &results.checks {
        eprintln!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(results.passed())
}
