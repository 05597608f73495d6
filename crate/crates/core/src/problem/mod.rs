//! Problem instances: coefficients, data, constants, config files and
//! assumption checks.

pub mod config;
pub mod expr;
mod spec;
mod validate;

pub use config::Config;
pub use spec::{
    CoefValue, Coefficient, Constants, Drift, DriftFn, Flux, FluxFn, MatrixCoef, MatrixFn, NodeCtx,
    Point, ProblemSpec, ScalarFn, State,
};
pub use validate::{validate_assumptions, AssumptionReport, CheckOutcome, Witness};
