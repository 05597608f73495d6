//! Backward induction over the tree levels.

use crate::error::{Error, Result};
use crate::grid::{solve_shifted, Field, SolverOptions};
use crate::lattice::NoiseTree;
use crate::par::{self, Exec};
use crate::problem::ProblemSpec;
use crate::grid::SpatialGrid;

use super::{BackwardModel, BackwardSolution, SpecModel};

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    /// Penalty level `n`; `0` ignores the obstacle.
    pub penalty: f64,
    pub linear: SolverOptions,
    /// Max-norm change between inner iterates that counts as converged.
    pub inner_tol: f64,
    pub max_inner: usize,
    pub exec: Exec,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            penalty: 0.0,
            linear: SolverOptions::default(),
            inner_tol: 1e-11,
            max_inner: 200,
            exec: Exec::default(),
        }
    }
}

struct NodeResult {
    u: Field,
    beta: Option<Field>,
    iterations: usize,
}

/// Solve the (penalized) backward scheme of `model`.
///
/// At every node of level `k` the step is
/// `u = ū + Δt·(A u + F(u, v) + n (u - ξ)⁻)` with `ū = E[u_{k+1} | node]` and
/// `v` the martingale projection of `u_{k+1}`. The penalty is handled by an
/// active-set iteration: with `χ = {u_i < ξ}` frozen from the previous iterate
/// the step is the linear solve `((1/Δt + nχ) I - A) u = ū/Δt + F + nχξ`.
/// State-dependent forcing is re-evaluated at each inner iterate. `warm`
/// supplies starting iterates, e.g. the solution for a smaller penalty.
pub fn solve_backward<M: BackwardModel>(
    model: &M,
    opts: &BackwardOptions,
    warm: Option<&BackwardSolution>,
) -> Result<BackwardSolution> {
    let tree = model.tree();
    let grid = model.grid();
    let n_steps = tree.steps();
    if let Some(w) = warm {
        if w.u.len() != n_steps + 1 || w.u[0].first().map(|f| f.len()) != Some(grid.len()) {
            return Err(Error::InvalidInput("warm start does not match the tree and grid".into()));
        }
    }
    if !(opts.penalty >= 0.0 && opts.penalty.is_finite()) {
        return Err(Error::InvalidInput(format!("penalty must be finite and >= 0, got {}", opts.penalty)));
    }

    let terminal = par::try_map_indices(opts.exec, tree.level_size(n_steps), |i| {
        let g = model.terminal(i)?;
        check_finite(&g, "terminal", tree, n_steps, i, grid)?;
        Ok::<_, Error>(g)
    })?;

    let mut u: Vec<Vec<Field>> = vec![Vec::new(); n_steps + 1];
    let mut v: Vec<Vec<Vec<Field>>> = vec![Vec::new(); n_steps];
    let mut residual: Vec<Vec<f64>> = vec![Vec::new(); n_steps];
    let mut beta: Vec<Vec<Field>> = vec![Vec::new(); n_steps];
    let mut obstacle: Vec<Vec<Field>> = Vec::new();
    let mut has_obstacle = false;
    let mut max_iter = 0;
    u[n_steps] = terminal;

    for k in (0..n_steps).rev() {
        let proj = tree.martingale_projection_with(opts.exec, k, &u[k + 1])?;
        let child = &u[k + 1];
        let level = par::try_map_indices(opts.exec, tree.level_size(k), |i| {
            let ubar = tree.node_expect(i, child);
            let xi = model.obstacle(k, i)?;
            let guess = warm.map(|w| &w.u[k][i]);
            let out = node_step(model, opts, k, i, ubar, &proj.v[i], xi.as_ref(), guess)?;
            check_finite(&out.u, "u", tree, k, i, grid)?;
            Ok::<_, Error>((out, xi))
        })?;
        let mut us = Vec::with_capacity(level.len());
        let mut bs = Vec::with_capacity(level.len());
        let mut xs = Vec::with_capacity(level.len());
        for (out, xi) in level {
            max_iter = max_iter.max(out.iterations);
            us.push(out.u);
            bs.push(out.beta.unwrap_or_else(|| Field::zeros(grid.len())));
            if let Some(xi) = xi {
                has_obstacle = true;
                xs.push(xi);
            }
        }
        u[k] = us;
        beta[k] = bs;
        v[k] = proj.v;
        residual[k] = proj.residual;
        obstacle.push(xs);
    }

    let obstacle = if has_obstacle {
        obstacle.reverse();
        let terminal_xi = (0..tree.level_size(n_steps))
            .map(|i| model.obstacle(n_steps, i).map(|x| x.unwrap_or_else(|| Field::zeros(grid.len()))))
            .collect::<Result<Vec<_>>>()?;
        obstacle.push(terminal_xi);
        Some(obstacle)
    } else {
        None
    };
    let penalized = has_obstacle && opts.penalty > 0.0;
    Ok(BackwardSolution {
        dt: tree.dt(),
        u,
        v,
        martingale_residual: residual,
        beta: penalized.then_some(beta),
        obstacle,
        penalty: opts.penalty,
        inner_iterations: max_iter,
    })
}

#[allow(clippy::too_many_arguments)]
fn node_step<M: BackwardModel>(
    model: &M,
    opts: &BackwardOptions,
    k: usize,
    node: usize,
    ubar: Field,
    v: &[Field],
    xi: Option<&Field>,
    guess: Option<&Field>,
) -> Result<NodeResult> {
    let tree = model.tree();
    let c = 1.0 / tree.dt();
    let op = model.operator(k, node)?;
    let penalty = if xi.is_some() { opts.penalty } else { 0.0 };
    let state_dep = model.state_dependent();

    let mut iterate = guess.cloned().unwrap_or_else(|| ubar.clone());
    let mut forcing = model.forcing(k, node, &iterate, v)?;
    let base: Field = ubar.scaled(c);
    let len = ubar.len();
    let mut active = vec![false; len];
    let active_of = |u: &[f64], out: &mut [bool]| {
        if let Some(xi) = xi {
            for ((a, ui), x) in out.iter_mut().zip(u).zip(xi.iter()) {
                *a = ui < x;
            }
        }
    };
    if penalty > 0.0 {
        active_of(&iterate, &mut active);
    }

    let mut change = f64::INFINITY;
    for it in 1..=opts.max_inner.max(1) {
        let mut shift = vec![c; len];
        let mut rhs = base.add(&forcing);
        if penalty > 0.0 {
            let xi = xi.expect("penalty requires an obstacle");
            for j in 0..len {
                if active[j] {
                    shift[j] += penalty;
                    rhs[j] += penalty * xi[j];
                }
            }
        }
        let sol = solve_shifted(&op, &shift, &rhs, Some(&iterate), &opts.linear)?.solution;
        change = sol.sub(&iterate).max_abs();

        let mut next_active = vec![false; len];
        if penalty > 0.0 {
            active_of(&sol, &mut next_active);
        }
        let same_set = next_active == active;
        iterate = sol;
        let done = if state_dep {
            forcing = model.forcing(k, node, &iterate, v)?;
            change <= opts.inner_tol && same_set
        } else {
            same_set || change <= opts.inner_tol
        };
        if done {
            let beta = (penalty > 0.0).then(|| {
                let xi = xi.expect("penalty requires an obstacle");
                Field(iterate.iter().zip(xi.iter()).map(|(u, x)| penalty * (x - u).max(0.0)).collect())
            });
            return Ok(NodeResult { u: iterate, beta, iterations: it });
        }
        active = next_active;
    }
    Err(Error::InnerIteration {
        level: k,
        node,
        iterations: opts.max_inner,
        change,
    })
}

fn check_finite(f: &Field, what: &str, tree: &NoiseTree, k: usize, node: usize, grid: &SpatialGrid) -> Result<()> {
    if let Some(p) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: what.to_string(),
            t: tree.time(k),
            x: grid.point(p),
            level: k,
            node,
        });
    }
    Ok(())
}

/// Linear BSPDE with the spec's `(a, σ, G)` and `f`, `g` frozen at the zero state; the obstacle is ignored.
pub fn solve_linear_bspde(
    spec: &ProblemSpec,
    tree: &NoiseTree,
    grid: &SpatialGrid,
    opts: &BackwardOptions,
) -> Result<BackwardSolution> {
    let model = SpecModel::new(spec, tree, grid)?.frozen().without_obstacle();
    let opts = BackwardOptions { penalty: 0.0, ..*opts };
    solve_backward(&model, &opts, None)
}
