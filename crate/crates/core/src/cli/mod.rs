//! Command-line front end: argument parsing, configuration, report files and
//! exit codes.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use commands::{Check, Outcome};
pub use config::{RunConfig, Thresholds};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ASSERT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fbsvie", version, about = "Monte Carlo toolkit for forward-backward stochastic Volterra equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Simulate the forward state at a constant control.
    SimulateForward(Common),
    /// Solve a backward equation and check its M-solution structure.
    SolveBackward(Common),
    /// Duality pairing of random linear forward and backward equations.
    CheckDuality(Common),
    /// Convergence of the difference quotients to the variational system.
    CheckGateaux(Common),
    /// Adjoint directional derivatives against central finite differences.
    CheckGradient(Common),
    /// Variational inequality at an optimal and a suboptimal control.
    CheckSmp(Common),
    /// Run the penalty optimizer on a problem.
    Optimize(Common),
    /// Optimize example41 and compare with its closed-form optimum.
    ReproduceExample41(Common),
    /// Optimize example42 and check feasibility and complementarity.
    ReproduceExample42(Common),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit with code 4 when a check fails.
    #[arg(long)]
    assert: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// The nine subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sub {
    SimulateForward,
    SolveBackward,
    CheckDuality,
    CheckGateaux,
    CheckGradient,
    CheckSmp,
    Optimize,
    ReproduceExample41,
    ReproduceExample42,
}

impl Sub {
    pub fn name(self) -> &'static str {
        match self {
            Sub::SimulateForward => "simulate-forward",
            Sub::SolveBackward => "solve-backward",
            Sub::CheckDuality => "check-duality",
            Sub::CheckGateaux => "check-gateaux",
            Sub::CheckGradient => "check-gradient",
            Sub::CheckSmp => "check-smp",
            Sub::Optimize => "optimize",
            Sub::ReproduceExample41 => "reproduce-example41",
            Sub::ReproduceExample42 => "reproduce-example42",
        }
    }
}

impl Command {
    fn split(self) -> (Sub, Common) {
        match self {
            Command::SimulateForward(c) => (Sub::SimulateForward, c),
            Command::SolveBackward(c) => (Sub::SolveBackward, c),
            Command::CheckDuality(c) => (Sub::CheckDuality, c),
            Command::CheckGateaux(c) => (Sub::CheckGateaux, c),
            Command::CheckGradient(c) => (Sub::CheckGradient, c),
            Command::CheckSmp(c) => (Sub::CheckSmp, c),
            Command::Optimize(c) => (Sub::Optimize, c),
            Command::ReproduceExample41(c) => (Sub::ReproduceExample41, c),
            Command::ReproduceExample42(c) => (Sub::ReproduceExample42, c),
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    version: String,
    subcommand: &'static str,
    problem: &'a str,
    seed: u64,
    n_steps: usize,
    n_paths: usize,
    config: &'a RunConfig,
    checks: &'a [Check],
    passed: bool,
    result: &'a serde_json::Value,
}

#[derive(Serialize)]
struct Timing {
    subcommand: &'static str,
    wall_seconds: f64,
    threads: Option<usize>,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn fail(kind: &str, msg: &str) {
    let one_line = msg.replace('\n', " ");
    eprintln!("error kind={kind} reason={}", serde_json::Value::String(one_line));
}

/// Runs one subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            fail("usage", first);
            return EXIT_INVALID;
        }
    };
    let (sub, common) = cli.command.split();
    match execute(sub, &common) {
        Ok((passed, failed)) => {
            if common.assert && !passed {
                fail("assert", &format!("failed checks: {}", failed.join(",")));
                EXIT_ASSERT
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            fail(e.kind(), &e.to_string());
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

/// Configuration after command-line overrides.
fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.n_paths.is_some() {
        cfg.n_paths = common.n_paths;
    }
    if common.n_steps.is_some() {
        cfg.n_steps = common.n_steps;
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(p) = &common.out {
        cfg.out_dir = Some(p.clone());
    }
    if common.threads == Some(0) {
        return Err(Error::config("threads must be positive"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(sub: Sub, common: &Common) -> Result<(bool, Vec<String>)> {
    let cfg = resolve(common)?;
    let start = Instant::now();
    let outcome = with_threads(common.threads, || commands::dispatch(sub, &cfg))??;
    let wall = start.elapsed().as_secs_f64();

    let passed = outcome.checks.iter().all(|c| c.passed);
    let failed = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        version: version_string(),
        subcommand: sub.name(),
        problem: &outcome.problem,
        seed: outcome.seed,
        n_steps: outcome.n_steps,
        n_paths: outcome.n_paths,
        config: &cfg,
        checks: &outcome.checks,
        passed,
        result: &outcome.result,
    };
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(dir.join(format!("{}.report.json", sub.name())), text)?;
    let timing = Timing {
        subcommand: sub.name(),
        wall_seconds: wall,
        threads: common.threads,
    };
    std::fs::write(dir.join(format!("{}.timing.json", sub.name())), serde_json::to_string_pretty(&timing)? + "\n")?;
    for (name, body) in &outcome.csv {
        std::fs::write(dir.join(format!("{}.{name}.csv", sub.name())), body)?;
    }
    Ok((passed, failed))
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(f())
}
