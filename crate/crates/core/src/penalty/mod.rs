//! Penalized approximation of the obstacle problem and its diagnostics.
//!
//! [`run_penalization`] drives the penalty `n` along an increasing schedule,
//! warm-starting each solve from the previous one, and records per `n` the
//! penalty mass `E Σ Δt n‖(u_n - ξ)⁻‖²`, the Cauchy distance to the previous
//! iterate, the complementarity residual and the obstacle violation. The final
//! density `β_n = n (u_n - ξ)⁻` is the reflecting measure.

mod measure;

use std::path::Path;

pub use measure::{complementarity_residual, Complementarity, DiscreteMeasure};

use crate::bspde::{solve_backward, BackwardModel, BackwardOptions, BackwardSolution};
use crate::error::{Error, Result};
use crate::grid::Field;

#[derive(Debug, Clone)]
pub struct PenaltyOptions {
    /// Strictly increasing penalty levels.
    pub schedule: Vec<f64>,
    /// Options of each backward solve; the `penalty` field is overwritten.
    pub backward: BackwardOptions,
    /// Allowed decrease `u_n - u_{n'}` for `n < n'`.
    pub monotonicity_tol: f64,
    /// Fail with [`Error::Monotonicity`] on violations instead of only recording them.
    pub strict_monotonicity: bool,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        Self {
            schedule: (0..=12).map(|j| 2f64.powi(j)).collect(),
            backward: BackwardOptions::default(),
            monotonicity_tol: 1e-10,
            strict_monotonicity: true,
        }
    }
}

/// Diagnostics of one penalty level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyStep {
    pub n: f64,
    /// `E Σ Δt n ‖(u_n - ξ)⁻‖²`.
    pub penalty_mass: f64,
    /// `E ∫ dμ_n`.
    pub measure_mass: f64,
    /// `𝓗`-distance of `u` and L²-distance of `v` to the previous level.
    pub cauchy_u: Option<f64>,
    pub cauchy_v: Option<f64>,
    /// `max (u_prev - u_n)`; positive values violate monotonicity.
    pub monotonicity_violation: Option<f64>,
    pub complementarity: Complementarity,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PenalizedRun {
    pub steps: Vec<PenaltyStep>,
    /// Solution at the last penalty level.
    pub solution: BackwardSolution,
    pub measure: DiscreteMeasure,
}

impl PenalizedRun {
    pub fn last(&self) -> &PenaltyStep {
        self.steps.last().expect("runs have at least one level")
    }

    /// `max_n penalty_mass(n) / penalty_mass(first n)`; `None` when the first mass is zero.
    pub fn mass_ratio(&self) -> Option<f64> {
        let first = self.steps.first()?.penalty_mass;
        (first > 0.0).then(|| self.steps.iter().map(|s| s.penalty_mass / first).fold(0.0, f64::max))
    }

    /// Largest recorded monotonicity violation (0 when none).
    pub fn max_monotonicity_violation(&self) -> f64 {
        self.steps.iter().filter_map(|s| s.monotonicity_violation).fold(0.0, f64::max)
    }

    /// Observed order `p` in `-min(u_n - ξ) ~ n^{-p}` from the last two levels with a violation.
    pub fn violation_order(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .steps
            .iter()
            .filter(|s| s.complementarity.min_gap < 0.0)
            .map(|s| (s.n.ln(), (-s.complementarity.min_gap).ln()))
            .collect();
        let [.., (x0, y0), (x1, y1)] = pts.as_slice() else {
            return None;
        };
        Some(-(y1 - y0) / (x1 - x0))
    }

    /// `n,penalty_mass,measure_mass,cauchy_u,cauchy_v,monotonicity,complementarity,min_gap,inner_iterations`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "n",
            "penalty_mass",
            "measure_mass",
            "cauchy_u",
            "cauchy_v",
            "monotonicity",
            "complementarity",
            "min_gap",
            "inner_iterations",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.12e}"));
        for s in &self.steps {
            w.write_record([
                format!("{}", s.n),
                format!("{:.12e}", s.penalty_mass),
                format!("{:.12e}", s.measure_mass),
                opt(s.cauchy_u),
                opt(s.cauchy_v),
                opt(s.monotonicity_violation),
                format!("{:.12e}", s.complementarity.residual),
                format!("{:.12e}", s.complementarity.min_gap),
                s.inner_iterations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One penalized solve at level `n`.
pub fn solve_penalized<M: BackwardModel>(
    model: &M,
    n: f64,
    opts: &BackwardOptions,
    warm: Option<&BackwardSolution>,
) -> Result<BackwardSolution> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::InvalidInput(format!("penalty level must be >= 1, got {n}")));
    }
    solve_backward(model, &BackwardOptions { penalty: n, ..*opts }, warm)
}

/// The reflecting measure of a penalized solution, zero if no obstacle was active.
pub fn measure_of<M: BackwardModel>(sol: &BackwardSolution, model: &M) -> Result<DiscreteMeasure> {
    match &sol.beta {
        Some(beta) => DiscreteMeasure::new(beta.clone(), model.tree(), model.grid()),
        None => Ok(DiscreteMeasure::zero(model.tree(), model.grid())),
    }
}

/// Complementarity of a penalized solution against its own obstacle and density.
pub fn solution_complementarity<M: BackwardModel>(sol: &BackwardSolution, model: &M) -> Result<Complementarity> {
    let mu = measure_of(sol, model)?;
    match &sol.obstacle {
        Some(xi) => complementarity_residual(&sol.u, xi, &mu),
        None => Ok(Complementarity { residual: 0.0, signed: 0.0, min_gap: f64::INFINITY }),
    }
}

pub fn run_penalization<M: BackwardModel>(model: &M, opts: &PenaltyOptions) -> Result<PenalizedRun> {
    if opts.schedule.is_empty() {
        return Err(Error::InvalidInput("penalty schedule is empty".into()));
    }
    if opts.schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("penalty schedule must be strictly increasing".into()));
    }
    let tree = model.tree();
    let grid = model.grid();
    let mut steps = Vec::with_capacity(opts.schedule.len());
    let mut prev: Option<(f64, BackwardSolution)> = None;
    for &n in &opts.schedule {
        let sol = solve_penalized(model, n, &opts.backward, prev.as_ref().map(|p| &p.1))?;
        let mu = measure_of(&sol, model)?;
        let comp = match &sol.obstacle {
            Some(xi) => complementarity_residual(&sol.u, xi, &mu)?,
            None => Complementarity { residual: 0.0, signed: 0.0, min_gap: f64::INFINITY },
        };
        let penalty_mass = match &sol.obstacle {
            Some(xi) => mu.integrate(|k, i, p| (xi[k][i][p] - sol.u[k][i][p]).max(0.0)),
            None => 0.0,
        };
        let (mut cauchy_u, mut cauchy_v, mut mono) = (None, None, None);
        if let Some((n_prev, p)) = &prev {
            let (du, dv) = sol.distance(p, tree, grid)?;
            cauchy_u = Some(du);
            cauchy_v = Some(dv);
            let violation = p
                .u
                .iter()
                .flatten()
                .zip(sol.u.iter().flatten())
                .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x - y))
                .fold(f64::NEG_INFINITY, f64::max);
            mono = Some(violation);
            if opts.strict_monotonicity && violation > opts.monotonicity_tol {
                return Err(Error::Monotonicity { n_lo: *n_prev, n_hi: n, violation });
            }
        }
        steps.push(PenaltyStep {
            n,
            penalty_mass,
            measure_mass: mu.mass(),
            cauchy_u,
            cauchy_v,
            monotonicity_violation: mono,
            complementarity: comp,
            inner_iterations: sol.inner_iterations,
        });
        prev = Some((n, sol));
    }
    let solution = prev.expect("schedule is nonempty").1;
    let measure = measure_of(&solution, model)?;
    Ok(PenalizedRun { steps, solution, measure })
}

/// Pointwise check of `0 ≤ β ≤ f₊`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityBound {
    /// `max (β - f₊)`.
    pub max_excess: f64,
    pub min_density: f64,
    /// Location `(level, node, point)` of `max_excess`.
    pub worst: (usize, usize, usize),
}

impl DensityBound {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_excess <= tol && self.min_density >= -tol
    }
}

/// Compare the run's final density with `f_plus[level][node]` (levels `0..N`).
pub fn regular_obstacle_bound_check(run: &PenalizedRun, f_plus: &[Vec<Field>]) -> Result<DensityBound> {
    let beta = run.measure.density();
    if f_plus.len() < beta.len() {
        return Err(Error::InvalidInput(format!(
            "f_plus covers {} levels, the measure has {}",
            f_plus.len(),
            beta.len()
        )));
    }
    let mut out = DensityBound { max_excess: f64::NEG_INFINITY, min_density: f64::INFINITY, worst: (0, 0, 0) };
    for (k, (lb, lf)) in beta.iter().zip(f_plus).enumerate() {
        if lb.len() != lf.len() {
            return Err(Error::LevelMismatch { expected: lb.len(), got: lf.len() });
        }
        for (i, (b, f)) in lb.iter().zip(lf).enumerate() {
            for (p, (bv, fv)) in b.iter().zip(f.iter()).enumerate() {
                out.min_density = out.min_density.min(*bv);
                if bv - fv > out.max_excess {
                    out.max_excess = bv - fv;
                    out.worst = (k, i, p);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalityReport {
    pub accepted: usize,
    /// Indices of trials that do not dominate the obstacle.
    pub rejected: Vec<usize>,
    /// `max (u - w)` over accepted trials.
    pub worst: f64,
}

impl MinimalityReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

/// `u ≤ w` for every trial field `w[level][node]` that dominates the obstacle.
pub fn minimality_check(run: &PenalizedRun, trials: &[Vec<Vec<Field>>]) -> Result<MinimalityReport> {
    let u = &run.solution.u;
    let xi = run
        .solution
        .obstacle
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("minimality check needs an obstacle".into()))?;
    let mut report = MinimalityReport { accepted: 0, rejected: vec![], worst: f64::NEG_INFINITY };
    for (t, w) in trials.iter().enumerate() {
        if w.len() != u.len() || w.iter().zip(u).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::LevelMismatch { expected: u.len(), got: w.len() });
        }
        let dominates = w
            .iter()
            .flatten()
            .zip(xi.iter().flatten())
            .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x >= y));
        if !dominates {
            report.rejected.push(t);
            continue;
        }
        report.accepted += 1;
        let gap = u
            .iter()
            .flatten()
            .zip(w.iter().flatten())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x - y))
            .fold(f64::NEG_INFINITY, f64::max);
        report.worst = report.worst.max(gap);
    }
    Ok(report)
}
