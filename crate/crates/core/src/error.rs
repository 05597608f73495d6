use thiserror::Error;

/// Errors raised by the solvers, verifiers and config loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point (t={t}, x={x:?}) lies outside the horizon or spatial box")]
    OutOfDomain { t: f64, x: Vec<f64> },

    #[error("non-finite value of {what} at t={t}, x={x:?}, level={level}, node={node}")]
    NonFinite {
        what: String,
        t: f64,
        x: Vec<f64>,
        level: usize,
        node: usize,
    },

    #[error("size {requested} exceeds the configured budget of {limit}")]
    Budget { requested: usize, limit: usize },

    #[error("level mismatch: expected {expected} values, got {got}")]
    LevelMismatch { expected: usize, got: usize },

    #[error("ellipticity violated: face coefficient {value} at {location}")]
    Ellipticity { value: f64, location: String },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("inner iteration stalled at level {level}, node {node}: {iterations} iterations, last change {change:e}")]
    InnerIteration {
        level: usize,
        node: usize,
        iterations: usize,
        change: f64,
    },

    #[error("penalized solutions not monotone in n: u_{n_lo} exceeds u_{n_hi} by {violation:e}")]
    Monotonicity { n_lo: f64, n_hi: f64, violation: f64 },

    #[error("contraction unattainable at theta={theta} (step {step} below floor); check the margin lambda - kappa - rho'*beta")]
    ContinuationStalled { theta: f64, step: f64 },

    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
