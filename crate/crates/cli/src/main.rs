//! `fkbridge` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 solver did not converge
//! (outputs are still written), 3 a validation check failed.

// `!(x > y)` keeps NaN on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Schrödinger bridges on Feynman-Kac kernels.
///
/// Every run writes its fully resolved configuration to `<out>/config.toml`;
/// passing that file back with `--config` reproduces the run.
#[derive(Debug, Parser)]
#[command(name = "fkbridge", version)]
struct Cli {
    /// TOML configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads [default: machine parallelism]. The FKBRIDGE_WORKERS
    /// environment variable takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the Schrödinger system for a reference case or two marginal files.
    Solve(SolveArgs),
    /// Assemble a kernel matrix (pde, analytic) or a Monte Carlo point estimate.
    Kernel(KernelArgs),
    /// Simulate the bridge diffusion from a previous solve or a case drift.
    Simulate(SimulateArgs),
    /// Run the diagnostic battery of a reference case.
    Validate(ValidateArgs),
    /// Estimate short-time drift, diffusion and escape rate of a case.
    Moments(MomentsArgs),
}

#[derive(Debug, Args, Default)]
struct ProblemArgs {
    /// Reference case: gaussian_spread (gaussian), stable_node, harmonic,
    /// centrifugal, moving_node.
    #[arg(long)]
    case: Option<String>,
    /// Initial marginal CSV (`x,value`).
    #[arg(long)]
    rho0: Option<PathBuf>,
    /// Final marginal CSV (`x,value`).
    #[arg(long = "rhoT", alias = "rho-t")]
    rho_t: Option<PathBuf>,
    /// Potential: free, harmonic, gaussian, nodal, centrifugal, moving_node.
    #[arg(long)]
    potential: Option<String>,
    /// Centrifugal coupling [default: 1].
    #[arg(long)]
    gamma: Option<f64>,
    /// Moving-node formation time [default: 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Final time [default: 1].
    #[arg(long = "T", alias = "t1")]
    t1: Option<f64>,
    /// Initial time [default: 0].
    #[arg(long)]
    t0: Option<f64>,
    /// Recorded time slices including both ends [default: 11].
    #[arg(long)]
    slices: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct GridArgs {
    /// Grid nodes [default: 401].
    #[arg(long)]
    nx: Option<usize>,
    /// Left grid end [default: -8].
    #[arg(long, allow_hyphen_values = true)]
    x_min: Option<f64>,
    /// Right grid end [default: 8].
    #[arg(long, allow_hyphen_values = true)]
    x_max: Option<f64>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Marginal L1 tolerance [default: 1e-10].
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap [default: 5000].
    #[arg(long)]
    max_iter: Option<usize>,
    /// Kernel method: pde or analytic [default: pde].
    #[arg(long)]
    method: Option<String>,
    /// Crank-Nicolson steps per unit time [default: 400].
    #[arg(long)]
    steps_per_unit: Option<usize>,
    /// Padding nodes beyond each outer grid end [default: 50].
    #[arg(long)]
    pad: Option<usize>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// pde, analytic or mc [default: pde].
    #[arg(long)]
    method: Option<String>,
    /// Start time [default: 0].
    #[arg(long)]
    s: Option<f64>,
    /// Duration t - s [default: 0.5].
    #[arg(long)]
    tau: Option<f64>,
    /// Start point of the mc estimate [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    y: Option<f64>,
    /// End point of the mc estimate [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
    /// Monte Carlo paths [default: 100000].
    #[arg(long)]
    paths: Option<usize>,
    /// Monte Carlo time steps per path [default: 64].
    #[arg(long)]
    substeps: Option<usize>,
    /// Monte Carlo seed [default: 42].
    #[arg(long)]
    seed: Option<u64>,
    /// forward or pinned_bridge [default: forward].
    #[arg(long)]
    scheme: Option<String>,
    /// Crank-Nicolson steps per unit time [default: 400].
    #[arg(long)]
    steps_per_unit: Option<usize>,
    /// Padding nodes beyond each grid end [default: 50].
    #[arg(long)]
    pad: Option<usize>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Directory written by `solve` (one component).
    #[arg(long)]
    from_run: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Number of paths [default: 100000].
    #[arg(long)]
    paths: Option<usize>,
    /// Euler-Maruyama step [default: 1e-3].
    #[arg(long)]
    dt: Option<f64>,
    /// Seed [default: 42].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Start point, a grid node [default: 1].
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// Start time [default: 0].
    #[arg(long)]
    s: Option<f64>,
    /// Moment window half-width [default: 0.5].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated increments t - s [default: 0.01,0.005,0.0025].
    #[arg(long, value_delimiter = ',')]
    increments: Option<Vec<f64>>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ProblemArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let p = &mut cfg.problem;
        if self.case.is_some() {
            p.case = self.case;
        }
        if self.rho0.is_some() {
            p.rho0 = self.rho0;
        }
        if self.rho_t.is_some() {
            p.rho_t = self.rho_t;
        }
        if self.potential.is_some() {
            p.potential = self.potential;
        }
        set(&mut p.gamma, self.gamma);
        set(&mut p.alpha, self.alpha);
        set(&mut p.t1, self.t1);
        set(&mut p.t0, self.t0);
        set(&mut p.slices, self.slices);
    }
}

impl GridArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.grid.nx, self.nx);
        set(&mut cfg.grid.x_min, self.x_min);
        set(&mut cfg.grid.x_max, self.x_max);
    }
}

/// What a successful command reports back for the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    NotConverged,
    ValidationFailed,
}

impl Outcome {
    fn code(self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::NotConverged => 2,
            Self::ValidationFailed => 3,
        }
    }
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("FKBRIDGE_WORKERS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v.trim().parse().with_context(|| format!("FKBRIDGE_WORKERS={v:?} is not a count"))?;
            Ok(Some(n))
        }
        _ => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let workers = worker_count(cli.workers)?;
    if let Some(n) = workers {
        anyhow::ensure!(n > 0, "worker count must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Solve(a) => {
            a.problem.apply(&mut cfg);
            a.grid.apply(&mut cfg);
            set(&mut cfg.solver.tol, a.tol);
            set(&mut cfg.solver.max_iter, a.max_iter);
            set(&mut cfg.solver.kernel_method, a.method);
            set(&mut cfg.solver.steps_per_unit, a.steps_per_unit);
            set(&mut cfg.solver.pad, a.pad);
            set(&mut cfg.output.dir, a.out);
            cfg.validate()?;
            commands::solve(&cfg)
        }
        Command::Kernel(a) => {
            a.problem.apply(&mut cfg);
            a.grid.apply(&mut cfg);
            set(&mut cfg.kernel.method, a.method);
            set(&mut cfg.kernel.s, a.s);
            set(&mut cfg.kernel.tau, a.tau);
            set(&mut cfg.kernel.y, a.y);
            set(&mut cfg.kernel.x, a.x);
            set(&mut cfg.mc.paths, a.paths);
            set(&mut cfg.mc.substeps, a.substeps);
            set(&mut cfg.mc.seed, a.seed);
            set(&mut cfg.mc.scheme, a.scheme);
            set(&mut cfg.solver.steps_per_unit, a.steps_per_unit);
            set(&mut cfg.solver.pad, a.pad);
            set(&mut cfg.output.dir, a.out);
            cfg.validate()?;
            commands::kernel(&cfg)
        }
        Command::Simulate(a) => {
            if a.from_run.is_some() {
                cfg.simulate.from_run = a.from_run;
            }
            a.problem.apply(&mut cfg);
            a.grid.apply(&mut cfg);
            set(&mut cfg.simulate.paths, a.paths);
            set(&mut cfg.simulate.dt, a.dt);
            set(&mut cfg.simulate.seed, a.seed);
            set(&mut cfg.output.dir, a.out);
            cfg.validate()?;
            commands::simulate(&cfg)
        }
        Command::Validate(a) => {
            a.problem.apply(&mut cfg);
            set(&mut cfg.output.dir, a.out);
            cfg.validate()?;
            commands::validate(&cfg)
        }
        Command::Moments(a) => {
            a.problem.apply(&mut cfg);
            a.grid.apply(&mut cfg);
            set(&mut cfg.moments.x0, a.x0);
            set(&mut cfg.moments.s, a.s);
            set(&mut cfg.moments.epsilon, a.epsilon);
            set(&mut cfg.moments.increments, a.increments);
            set(&mut cfg.output.dir, a.out);
            cfg.validate()?;
            commands::moments(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
