use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::Outcome;
use config::{PlanConfig, PlanSection};

/// Simulate the stochastic gradient scheme and check its error estimates.
#[derive(Parser)]
#[command(name = "modeq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (overrides MODEQ_THREADS; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config leaf, e.g. `--set scheme.h=0.05`.
    #[arg(long = "set", value_name = "KEY=VAL")]
    overrides: Vec<String>,
    /// Output CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `scheme.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme for one path (states) or an ensemble (terminal summary).
    Run(Common),
    /// Error estimates over a step-size grid with an order fit.
    Sweep(Common),
    /// Step size and step count for a tolerance.
    Plan {
        #[command(flatten)]
        common: Common,
        /// first-weak, first-strong, second-{weak,strong}-{exp,poly}.
        #[arg(long, value_delimiter = ',')]
        regime: Vec<String>,
        #[arg(long = "eps", value_delimiter = ',')]
        epsilon: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Exponential decay rate of the noise.
        #[arg(long)]
        nu: Option<f64>,
        /// Polynomial decay exponent of the noise.
        #[arg(long)]
        alpha: Option<f64>,
        /// Compare all applicable regimes.
        #[arg(long)]
        compare: bool,
    },
    /// Assumption, diffusion and decay checks.
    Check(Common),
    /// Check a plan's error scaling against a pilot run at 2ε.
    ValidatePlan(Common),
}

fn load(common: &Common) -> Result<config::ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("scheme.seed={seed}"));
    }
    if common.config.is_none() && overrides.is_empty() {
        anyhow::bail!("no config given (use --config PATH)");
    }
    config::parse(config::load_value(common.config.as_deref(), &overrides)?)
}

fn plan_section(
    common: &Common,
    regime: Vec<String>,
    epsilon: Vec<f64>,
    mu: f64,
    nu: Option<f64>,
    alpha: Option<f64>,
    compare: bool,
) -> Result<PlanSection> {
    if common.config.is_some() || !common.overrides.is_empty() {
        let doc = config::load_value(common.config.as_deref(), &common.overrides)?;
        let mut section = serde_json::from_value::<PlanConfig>(doc).context("invalid plan config")?.plan;
        section.compare |= compare;
        return Ok(section);
    }
    Ok(PlanSection { regimes: regime, epsilons: epsilon, mu, nu, alpha, compare })
}

fn execute(command: Command) -> Result<(Outcome, Option<PathBuf>)> {
    Ok(match command {
        Command::Run(c) => (commands::run(&load(&c)?)?, c.out),
        Command::Sweep(c) => (commands::sweep(&load(&c)?)?, c.out),
        Command::Check(c) => (commands::check(&load(&c)?)?, c.out),
        Command::ValidatePlan(c) => (commands::validate_plan(&load(&c)?)?, c.out),
        Command::Plan { common, regime, epsilon, mu, nu, alpha, compare } => {
            let section = plan_section(&common, regime, epsilon, mu, nu, alpha, compare)?;
            (commands::plan(&section)?, common.out)
        }
    })
}

/// 3 for numerical blow-up, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<modeq::Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn fail(err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(exit_code(&err))
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("MODEQ_THREADS") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("MODEQ_THREADS = '{v}' is not a count"))?)),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let n = match threads(cli.threads) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    if let Some(n) = n {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(e.into());
        }
    }
    let (outcome, out) = match execute(cli.command) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let written = match &out {
        Some(path) => std::fs::write(path, &outcome.csv).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(outcome.csv.as_bytes()).context("writing stdout"),
    };
    if let Err(e) = written {
        return fail(e);
    }
    match outcome.failure {
        Some(e) => fail(e),
        None => ExitCode::SUCCESS,
    }
}
