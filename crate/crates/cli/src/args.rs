use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Defective-cost optimal transport toolkit: cost analysis, figure data,
/// MTW checks, solvability diagnostics and the entropic refractor solver.
#[derive(Debug, Parser)]
#[command(name = "refractor-kit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, Args)]
pub struct CostArgs {
    /// Builtin cost name, or a path to a cost JSON document.
    #[arg(long)]
    pub cost: Option<String>,
    /// Cost parameter as `key=value` (repeatable).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
}

#[derive(Clone, Debug, Args)]
pub struct OutputArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Debug, Args)]
pub struct GridArgs {
    /// `latlong` or `fibonacci`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Lat-long polar bands, or Fibonacci node count.
    #[arg(long)]
    pub res: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Classify a cost and check the exponential-type hypotheses.
    AnalyzeCost {
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Distance bound for the hypothesis check (`0.9zstar` form allowed).
        #[arg(long)]
        gamma: Option<String>,
    },
    /// β(r) and β′(r) on a uniform r-grid.
    PlotBeta {
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Largest r (`0.99pstar` form allowed).
        #[arg(long)]
        rmax: Option<String>,
        #[arg(long, default_value_t = 201)]
        samples: usize,
    },
    /// The cost and its first two derivatives against distance.
    PlotCost {
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value_t = 201)]
        samples: usize,
    },
    /// Mixed-Hessian determinant along the map, by every formula.
    PlotHessian {
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        rmax: Option<String>,
        #[arg(long, default_value_t = 201)]
        samples: usize,
    },
    /// The f-functions whose concavity encodes Aw / As.
    PlotF4 {
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long, default_value_t = 201)]
        samples: usize,
    },
    /// A0–A2, Aw and As on the restricted domain of radius gamma.
    CheckMtw {
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        gamma: Option<String>,
        /// Evidence grid size.
        #[arg(long, default_value_t = 2048)]
        points: usize,
    },
    /// Certified transport-distance bound between two densities.
    CheckSolvability {
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Source density, e.g. `gaussian:sigma=0.01,center=north`.
        #[arg(long)]
        f: String,
        /// Target density, e.g. `gaussian:sigma=0.01,center=south`.
        #[arg(long)]
        g: String,
        #[arg(long, default_value_t = 0.999)]
        alpha: f64,
        /// Also report density-ratio diagnostics.
        #[arg(long)]
        ratio: bool,
    },
    /// Entropic transport solve and lens recovery.
    Solve {
        /// Problem JSON; flags given alongside override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        g: Option<String>,
        /// Absolute value, or a multiple of the mean cost (`0.01mean`).
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Lens variant, `I` or `II`.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        gauge: Option<f64>,
    },
}
