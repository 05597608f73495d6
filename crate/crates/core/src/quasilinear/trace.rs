//! Record of a continuation run.

use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardRecord {
    pub theta0: f64,
    pub theta: f64,
    pub iteration: usize,
    /// `‖u_j - u_{j-1}‖_𝓗 + ‖v_j - v_{j-1}‖`.
    pub residual: f64,
    /// `residual_j / residual_{j-1}`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub theta0: f64,
    pub theta: f64,
    pub iterations: usize,
    pub max_ratio: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContinuationTrace {
    /// Accepted θ values, starting at 0 and ending at 1.
    pub breakpoints: Vec<f64>,
    pub steps: Vec<StepSummary>,
    pub records: Vec<PicardRecord>,
    pub halvings: usize,
}

impl ContinuationTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &StepSummary> {
        self.steps.iter().filter(|s| s.accepted)
    }

    /// Largest contraction ratio seen in an accepted step.
    pub fn max_accepted_ratio(&self) -> Option<f64> {
        self.accepted().filter_map(|s| s.max_ratio).reduce(f64::max)
    }

    /// Picard residual at which the last accepted step stopped.
    pub fn final_residual(&self) -> Option<f64> {
        let last = self.accepted().last()?;
        self.records
            .iter()
            .rev()
            .find(|r| r.theta0 == last.theta0 && r.theta == last.theta)
            .map(|r| r.residual)
    }

    /// `theta0,theta,iter,residual,ratio`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["theta0", "theta", "iter", "residual", "ratio"])?;
        for r in &self.records {
            w.write_record([
                format!("{}", r.theta0),
                format!("{}", r.theta),
                r.iteration.to_string(),
                format!("{:.12e}", r.residual),
                r.ratio.map_or_else(String::new, |x| format!("{x:.12e}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
