use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rbspde-lab", version, about = "Reflected backward stochastic PDE solver and verification lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

/// Overrides shared by every verb; each one replaces the config value.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Interior grid points per axis, e.g. `65` or `33,33`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Number of time steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Penalty levels, e.g. `1,16,256,4096`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub schedule: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; `1` runs every loop sequentially.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long = "tol.linear", global = true)]
    pub tol_linear: Option<f64>,
    #[arg(long = "tol.inner", global = true)]
    pub tol_inner: Option<f64>,
    #[arg(long = "tol.monotonicity", global = true)]
    pub tol_monotonicity: Option<f64>,
    #[arg(long = "tol.complementarity", global = true)]
    pub tol_complementarity: Option<f64>,
    #[arg(long = "tol.picard", global = true)]
    pub tol_picard: Option<f64>,
    #[arg(long = "tol.comparison", global = true)]
    pub tol_comparison: Option<f64>,
    #[arg(long = "tol.equivalence", global = true)]
    pub tol_equivalence: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural assumptions of a config (exit 0 pass, 1 fail, 2 bad config).
    Validate { config: PathBuf },
    /// Solve the reflected problem (continuation when needed).
    Solve { config: PathBuf },
    /// Solve the problem without obstacle, freezing any state dependence at zero.
    Bspde { config: PathBuf },
    /// Run the penalty schedule and report its diagnostics.
    Penalize { config: PathBuf },
    /// Solve an ordered pair and check the lower solution stays below.
    Compare { lower: PathBuf, upper: PathBuf },
    /// Compare the grid solution with reflected BSDEs along characteristics.
    RbsdeCheck {
        config: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Exhaustive optimal stopping against the Snell envelope on a small tree.
    Stopping {
        config: PathBuf,
        /// Start point of the characteristic.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Option<Vec<f64>>,
    },
    /// Refinement study with observed orders.
    Convergence {
        config: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, value_enum, default_value_t = Vary::Both)]
        vary: Vary,
    },
    /// Render an artifact CSV as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Level to draw for `slice`.
        #[arg(long, default_value_t = 0)]
        level: usize,
        /// Most polylines drawn for `slice`.
        #[arg(long, default_value_t = 16)]
        max_lines: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Vary {
    /// Halve `h` and `Δt` together.
    Both,
    /// Halve `h` only.
    Space,
    /// Halve `Δt` only.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// `level,node,x1,value` snapshot at one level.
    Slice,
    /// Penalty mass against `n` from a penalization CSV.
    Penalty,
    /// Errors against `h` from a convergence CSV.
    Residual,
}
