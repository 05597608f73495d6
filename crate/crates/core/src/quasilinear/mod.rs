//! Quasilinear reflected problems by continuation in the leading coefficients.
//!
//! The member `θ = 0` of the family (Laplacian leading part, no nonlinearity)
//! is solved by a penalization run. A step `θ0 → θ` then iterates the map
//! `(u1, v1) ↦` solution of the `θ0` problem with the correction
//! `(θ - θ0) R(u1, v1)` (see [`SpecModel`]); its fixed point solves the `θ`
//! problem. Steps whose observed contraction ratio reaches `0.9` are halved.

mod trace;

pub use trace::{ContinuationTrace, PicardRecord, StepSummary};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bspde::{BackwardSolution, SpecModel};
use crate::error::{Error, Result};
use crate::grid::{Field, SpatialGrid};
use crate::lattice::NoiseTree;
use crate::penalty::{measure_of, run_penalization, solve_penalized, DiscreteMeasure, PenalizedRun, PenaltyOptions};
use crate::problem::{MatrixCoef, ProblemSpec};

#[derive(Debug, Clone)]
pub struct RbspdeOptions {
    pub penalty: PenaltyOptions,
    /// Distance `‖Δu‖_𝓗 + ‖Δv‖` between Picard iterates that ends a step.
    pub picard_tol: f64,
    pub theta_step: f64,
    pub theta_min: f64,
    pub max_picard: usize,
    /// Contraction estimate at which a step is rejected and halved.
    pub reject_ratio: f64,
    /// Add seeded noise of this amplitude to the first Picard guess of every step.
    pub perturbation: Option<(u64, f64)>,
}

impl Default for RbspdeOptions {
    fn default() -> Self {
        Self {
            penalty: PenaltyOptions::default(),
            picard_tol: 1e-8,
            theta_step: 0.5,
            theta_min: 1.0 / 64.0,
            max_picard: 60,
            reject_ratio: 0.9,
            perturbation: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RbspdeSolution {
    pub solution: BackwardSolution,
    pub measure: DiscreteMeasure,
    pub trace: ContinuationTrace,
    /// Penalization run of the starting member `θ = 0` (or of the whole problem when it is already linear).
    pub initial: PenalizedRun,
}

/// `a = I`, `σ = 0` and state-independent `f`, `g`: no continuation needed.
pub fn is_linear_laplacian(spec: &ProblemSpec) -> bool {
    matches!(spec.a, MatrixCoef::Identity) && spec.sigma.is_zero() && !spec.is_state_dependent()
}

pub fn solve_rbspde(
    spec: &ProblemSpec,
    tree: &NoiseTree,
    grid: &SpatialGrid,
    opts: &RbspdeOptions,
) -> Result<RbspdeSolution> {
    if !(opts.theta_step > 0.0 && opts.theta_step <= 1.0) {
        return Err(Error::InvalidInput(format!("theta step must lie in (0, 1], got {}", opts.theta_step)));
    }
    let n_final = *opts
        .penalty
        .schedule
        .last()
        .ok_or_else(|| Error::InvalidInput("penalty schedule is empty".into()))?;
    let base = SpecModel::new(spec, tree, grid)?;
    let mut trace = ContinuationTrace::default();

    if is_linear_laplacian(spec) {
        let run = run_penalization(&base, &opts.penalty)?;
        trace.steps.push(StepSummary { theta0: 0.0, theta: 1.0, iterations: 0, max_ratio: None, accepted: true });
        trace.breakpoints = vec![0.0, 1.0];
        return Ok(RbspdeSolution {
            solution: run.solution.clone(),
            measure: run.measure.clone(),
            trace,
            initial: run,
        });
    }

    let start = base.clone().with_theta(0.0, None);
    let initial = run_penalization(&start, &opts.penalty)?;
    let mut current = initial.solution.clone();
    let mut theta0 = 0.0;
    let mut step = opts.theta_step;
    let mut rng = opts.perturbation.map(|(seed, _)| ChaCha8Rng::seed_from_u64(seed));
    trace.breakpoints.push(0.0);

    while theta0 < 1.0 {
        let theta = (theta0 + step).min(1.0);
        let mut iterate = current.clone();
        if let (Some(rng), Some((_, amp))) = (rng.as_mut(), opts.perturbation) {
            perturb(&mut iterate, rng, amp);
        }
        let mut prev_dist: Option<f64> = None;
        let mut ratios: Vec<f64> = Vec::new();
        let mut accepted = None;
        for it in 1..=opts.max_picard.max(1) {
            let model = base.clone().with_theta(theta0, Some((theta - theta0, &iterate)));
            let next = solve_penalized(&model, n_final, &opts.penalty.backward, Some(&iterate))?;
            let (du, dv) = next.distance(&iterate, tree, grid)?;
            let dist = du + dv;
            let ratio = prev_dist.filter(|p| *p > 0.0).map(|p| dist / p);
            if let Some(r) = ratio {
                ratios.push(r);
            }
            trace.records.push(PicardRecord { theta0, theta, iteration: it, residual: dist, ratio });
            prev_dist = Some(dist);
            iterate = next;
            if dist <= opts.picard_tol {
                accepted = Some(it);
                break;
            }
            let estimate = match ratios.as_slice() {
                [.., a, b] => a.max(*b),
                _ => 0.0,
            };
            if estimate >= opts.reject_ratio {
                break;
            }
        }
        let max_ratio = ratios.iter().copied().reduce(f64::max);
        match accepted {
            Some(iterations) => {
                trace.steps.push(StepSummary { theta0, theta, iterations, max_ratio, accepted: true });
                trace.breakpoints.push(theta);
                current = iterate;
                theta0 = theta;
            }
            None => {
                trace.steps.push(StepSummary {
                    theta0,
                    theta,
                    iterations: opts.max_picard,
                    max_ratio,
                    accepted: false,
                });
                trace.halvings += 1;
                step *= 0.5;
                if step < opts.theta_min {
                    return Err(Error::ContinuationStalled { theta: theta0, step });
                }
            }
        }
    }

    let measure = measure_of(&current, &base)?;
    Ok(RbspdeSolution { solution: current, measure, trace, initial })
}

fn perturb(sol: &mut BackwardSolution, rng: &mut ChaCha8Rng, amp: f64) {
    let n = sol.steps();
    for level in sol.u.iter_mut().take(n) {
        for f in level.iter_mut() {
            for x in f.iter_mut() {
                *x += amp * rng.gen_range(-1.0..1.0);
            }
        }
    }
}

/// Outcome of solving an ordered pair of problems.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Reason the hypotheses failed on the lattice; the solves were skipped.
    pub skipped: Option<String>,
    /// `max (u_lo - u_hi)` over all levels, nodes and points.
    pub max_violation: f64,
    pub lo: Option<RbspdeSolution>,
    pub hi: Option<RbspdeSolution>,
}

impl ComparisonReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.skipped.is_none() && self.max_violation <= tol
    }
}

/// Solve both problems and check `u_lo ≤ u_hi`.
///
/// The hypotheses `G_lo ≤ G_hi`, `ξ_lo ≤ ξ_hi` and
/// `f_lo ≤ f_hi` at the arguments of the lower solution are checked at every
/// lattice point; a failure skips the comparison with a reason.
pub fn comparison_test(
    lo: &ProblemSpec,
    hi: &ProblemSpec,
    tree: &NoiseTree,
    grid: &SpatialGrid,
    opts: &RbspdeOptions,
) -> Result<ComparisonReport> {
    let skip = |reason: String| ComparisonReport { skipped: Some(reason), max_violation: f64::NAN, lo: None, hi: None };
    let n = tree.steps();
    let ctx = |k: usize, i: usize| crate::problem::NodeCtx::new(tree, k, i);
    for i in 0..tree.level_size(n) {
        let (gl, gh) = (lo.sample_terminal(grid, &ctx(n, i))?, hi.sample_terminal(grid, &ctx(n, i))?);
        if let Some(p) = first_above(&gl, &gh) {
            return Ok(skip(format!("terminal ordering fails at node {i}, x = {:?}", grid.point(p))));
        }
    }
    for k in 0..=n {
        let t = tree.time(k);
        for i in 0..tree.level_size(k) {
            match (lo.sample_obstacle(grid, t, &ctx(k, i))?, hi.sample_obstacle(grid, t, &ctx(k, i))?) {
                (Some(a), Some(b)) => {
                    if let Some(p) = first_above(&a, &b) {
                        return Ok(skip(format!("obstacle ordering fails at level {k}, node {i}, x = {:?}", grid.point(p))));
                    }
                }
                (Some(_), None) => return Ok(skip("lower problem has an obstacle, upper does not".into())),
                _ => {}
            }
        }
    }

    let sol_lo = solve_rbspde(lo, tree, grid, opts)?;
    for k in 0..n {
        let t = tree.time(k);
        for i in 0..tree.level_size(k) {
            let c = ctx(k, i);
            let u = &sol_lo.solution.u[k][i];
            let v = &sol_lo.solution.v[k][i];
            let grad = crate::grid::node_gradient(grid, u);
            let fl = lo.drift_field(grid, t, &c, u, &grad, v)?;
            let fh = hi.drift_field(grid, t, &c, u, &grad, v)?;
            if let Some(p) = first_above(&fl, &fh) {
                return Ok(skip(format!("drift ordering fails at level {k}, node {i}, x = {:?}", grid.point(p))));
            }
        }
    }
    let sol_hi = solve_rbspde(hi, tree, grid, opts)?;
    let max_violation = sol_lo
        .solution
        .u
        .iter()
        .flatten()
        .zip(sol_hi.solution.u.iter().flatten())
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x - y))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ComparisonReport { skipped: None, max_violation, lo: Some(sol_lo), hi: Some(sol_hi) })
}

fn first_above(a: &Field, b: &Field) -> Option<usize> {
    a.iter().zip(b.iter()).position(|(x, y)| x > y)
}

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    /// `𝓗`-distance of `u` between the two runs.
    pub h_distance: f64,
    pub v_distance: f64,
    /// Absolute difference of the reflecting-measure masses.
    pub mass_gap: f64,
    pub base: RbspdeSolution,
    pub alternate: RbspdeSolution,
}

/// Re-solve with half the θ-step and perturbed Picard guesses and compare.
pub fn uniqueness_probe(
    spec: &ProblemSpec,
    tree: &NoiseTree,
    grid: &SpatialGrid,
    opts: &RbspdeOptions,
    perturbation_seed: u64,
) -> Result<UniquenessReport> {
    let base = solve_rbspde(spec, tree, grid, opts)?;
    let scale = base.solution.max_abs_u().max(1e-3) * 1e-2;
    let alt_opts = RbspdeOptions {
        theta_step: opts.theta_step * 0.5,
        perturbation: Some((perturbation_seed, scale)),
        ..opts.clone()
    };
    let alternate = solve_rbspde(spec, tree, grid, &alt_opts)?;
    let (h_distance, v_distance) = base.solution.distance(&alternate.solution, tree, grid)?;
    let mass_gap = (base.measure.mass() - alternate.measure.mass()).abs();
    Ok(UniquenessReport { h_distance, v_distance, mass_gap, base, alternate })
}
