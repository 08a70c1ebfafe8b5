//! `devlab` — a desk laboratory for rough-path experiments.
//!
//! One TOML config describes an experiment; subcommands run its stages:
//! sampling lifted drivers, solving rough or skeleton equations,
//! simulating slow–fast systems, optimizing deviation rates, and
//! checking Monte-Carlo tail slopes against them.  Outputs are CSV
//! tables plus a `manifest.json` tying them to the seed and the config
//! hash; a fixed (seed, config) pair reproduces every byte.
//!
//! Exit codes: `0` success, `1` configuration/usage error, `2` a check
//! ran and failed, `3` an iteration budget was exhausted.

mod commands;
mod config;
mod errors;
mod output;
mod palette;
mod support;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use errors::CliError;
use output::OutDir;

#[derive(Parser)]
#[command(
    name = "devlab",
    version,
    about = "Rough-path drivers, skeleton equations, and deviation-rate checks"
)]
struct Cli {
    /// TOML configuration file (shared by all subcommands).
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (overrides `run.out_dir` from the config).
    #[arg(short, long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Sample Gaussian drivers and build their level-3 lifts.
    Lift,
    /// Solve a rough differential equation along a sampled driver.
    SolveRde,
    /// Solve the skeleton equation for an explicit control.
    Skeleton,
    /// Simulate the coupled slow-fast system over sampled drivers.
    SlowFast,
    /// Minimize control energy subject to a terminal constraint.
    Rate,
    /// Estimate a tail probability of the deviation process by Monte Carlo.
    McTail,
    /// Fit the tail-probability slope across a noise schedule and compare
    /// it with the optimized rate.
    SlopeCheck,
    /// Run structural invariants on sampled lifts.
    CheckInvariants,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Lift => "lift",
            Cmd::SolveRde => "solve-rde",
            Cmd::Skeleton => "skeleton",
            Cmd::SlowFast => "slow-fast",
            Cmd::Rate => "rate",
            Cmd::McTail => "mc-tail",
            Cmd::SlopeCheck => "slope-check",
            Cmd::CheckInvariants => "check-invariants",
        }
    }
}

/// Everything a command needs: the parsed config, its hash, and the
/// output directory collecting files for the manifest.
pub struct Ctx {
    pub cfg: config::Config,
    pub sha: String,
    pub out: OutDir,
    pub command: &'static str,
}

impl Ctx {
    /// Write the manifest from the command's summary block.
    pub fn finish(&mut self, summary: serde_json::Value) -> Result<(), CliError> {
        self.out
            .finish(self.command, self.cfg.run.seed, &self.sha, summary)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| errors::config_err("--config <FILE> is required"))?;
    let (cfg, sha) = config::load(&path)?;
    let root = cli
        .out
        .or_else(|| cfg.run.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = OutDir::create(root)?;
    let mut ctx = Ctx {
        cfg,
        sha,
        out,
        command: cli.command.name(),
    };
    match cli.command {
        Cmd::Lift => commands::lift::run(&mut ctx),
        Cmd::SolveRde => commands::solve_rde::run(&mut ctx),
        Cmd::Skeleton => commands::skeleton::run(&mut ctx),
        Cmd::SlowFast => commands::slow_fast::run(&mut ctx),
        Cmd::Rate => commands::rate::run(&mut ctx),
        Cmd::McTail => commands::mc_tail::run(&mut ctx),
        Cmd::SlopeCheck => commands::slope_check::run(&mut ctx),
        Cmd::CheckInvariants => commands::check_invariants::run(&mut ctx),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and are successes; real
            // usage errors share the configuration exit code.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
