//! `refractor-kit`: command-line surface over `refractor-core`.
//!
//! Exit codes: 0 success, 2 mathematically infeasible input (solvability
//! violations, out-of-domain gradients), 1 any other failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod config;
pub mod output;
mod verbs;

use std::path::PathBuf;
use std::process::ExitCode;

use args::{Cli, Verb};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] refractor_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_infeasibility() => 2,
            _ => 1,
        }
    }
}

/// What a verb produced: written files plus a verdict.
#[derive(Debug)]
pub enum Outcome {
    Done(Vec<PathBuf>),
    Infeasible(Vec<PathBuf>),
    /// Artifacts were written but the run did not reach its goal.
    Failed(Vec<PathBuf>, String),
}

impl Outcome {
    pub fn paths(&self) -> &[PathBuf] {
        match self {
            Outcome::Done(p) | Outcome::Infeasible(p) | Outcome::Failed(p, _) => p,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Outcome::Done(_) => 0,
            Outcome::Infeasible(_) => 2,
            Outcome::Failed(..) => 1,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.verb {
        Verb::AnalyzeCost { cost, output, gamma } => verbs::analyze_cost(cost, output, gamma.as_deref()),
        Verb::PlotBeta {
            cost,
            output,
            rmax,
            samples,
        } => verbs::plot_beta(cost, output, rmax.as_deref(), *samples),
        Verb::PlotCost { cost, output, samples } => verbs::plot_cost(cost, output, *samples),
        Verb::PlotHessian {
            cost,
            output,
            rmax,
            samples,
        } => verbs::plot_hessian(cost, output, rmax.as_deref(), *samples),
        Verb::PlotF4 {
            cost,
            output,
            gamma,
            samples,
        } => verbs::plot_f4(cost, output, gamma.as_deref(), *samples),
        Verb::CheckMtw {
            cost,
            output,
            gamma,
            points,
        } => verbs::check_mtw(cost, output, gamma.as_deref(), *points),
        Verb::CheckSolvability {
            cost,
            output,
            grid,
            f,
            g,
            alpha,
            ratio,
        } => verbs::check_solvability(cost, output, grid, f, g, *alpha, *ratio),
        Verb::Solve {
            config,
            cost,
            output,
            grid,
            f,
            g,
            eps,
            tol,
            max_iters,
            variant,
            gauge,
        } => verbs::solve(verbs::SolveArgs {
            config: config.as_deref(),
            cost,
            output,
            grid,
            f: f.as_deref(),
            g: g.as_deref(),
            eps: eps.as_deref(),
            tol: *tol,
            max_iters: *max_iters,
            variant: variant.as_deref(),
            gauge: *gauge,
        }),
    }
}

/// Caps rayon's worker count from `REFRACTOR_KIT_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("REFRACTOR_KIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("REFRACTOR_KIT_THREADS: expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("REFRACTOR_KIT_THREADS: {e}")))
}

pub fn main_with(cli: Cli) -> ExitCode {
    let result = configure_threads().and_then(|_| run(&cli));
    match result {
        Ok(outcome) => {
            for p in outcome.paths() {
                println!("{}", p.display());
            }
            if let Outcome::Failed(_, msg) = &outcome {
                eprintln!("error: {msg}");
            }
            if let Outcome::Infeasible(_) = &outcome {
                eprintln!("infeasible: see the written report");
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
