//! Duality with pathwise deterministic solves, and the discrete Itô energy balance.

use crate::error::{Error, Result};
use crate::grid::{l2_norm, nodal_divergence, solve_implicit, Field, LinearOperator, SpatialGrid};
use crate::lattice::NoiseTree;
use crate::par;
use crate::problem::{MatrixCoef, NodeCtx, ProblemSpec};

use super::{solve_backward, BackwardModel, BackwardOptions, BackwardSolution, TableModel};

/// Data measurable with respect to the terminal σ-algebra: one terminal
/// field and one forcing field per level `0..N`, both indexed by terminal node.
#[derive(Debug, Clone)]
pub struct TerminalData {
    pub terminal: Vec<Field>,
    /// `forcing[k][terminal node]`.
    pub forcing: Vec<Vec<Field>>,
}

impl TerminalData {
    fn check(&self, tree: &NoiseTree, grid: &SpatialGrid) -> Result<()> {
        if tree.is_recombining() {
            return Err(Error::InvalidInput("duality check needs a non-recombining tree".into()));
        }
        let leaves = tree.level_size(tree.steps());
        if self.terminal.len() != leaves {
            return Err(Error::LevelMismatch { expected: leaves, got: self.terminal.len() });
        }
        if self.forcing.len() != tree.steps() {
            return Err(Error::LevelMismatch { expected: tree.steps(), got: self.forcing.len() });
        }
        for f in self.terminal.iter().chain(self.forcing.iter().flatten()) {
            if f.len() != grid.len() {
                return Err(Error::LevelMismatch { expected: grid.len(), got: f.len() });
            }
        }
        if let Some(level) = self.forcing.iter().find(|l| l.len() != leaves) {
            return Err(Error::LevelMismatch { expected: leaves, got: level.len() });
        }
        Ok(())
    }
}

/// Terminal nodes below node `idx` of level `k` in a non-recombining tree.
fn leaves_below(tree: &NoiseTree, k: usize, idx: usize) -> std::ops::Range<usize> {
    let span = tree.branching().pow((tree.steps() - k) as u32);
    idx * span..(idx + 1) * span
}

fn average(fields: &[Field], range: std::ops::Range<usize>) -> Field {
    let w = 1.0 / range.len() as f64;
    let mut acc = Field::zeros(fields[range.start].len());
    for f in &fields[range] {
        acc.axpy(w, f);
    }
    acc
}

/// Max over levels and nodes of `‖E[û_k | node] - u_k(node)‖_{L²}`, where `û`
/// solves the deterministic heat recursion separately on every tree path and
/// `u` is the backward solution with forcing `E[f̂_k | node]`.
pub fn duality_residual(
    tree: &NoiseTree,
    grid: &SpatialGrid,
    data: &TerminalData,
    opts: &BackwardOptions,
) -> Result<f64> {
    data.check(tree, grid)?;
    let n = tree.steps();
    let c = 1.0 / tree.dt();
    let lap = LinearOperator::laplacian(grid);
    let leaves = tree.level_size(n);

    // paths[leaf][k] for k in 0..=N
    let paths = par::try_map_indices(opts.exec, leaves, |leaf| {
        let mut out = vec![Field::zeros(0); n + 1];
        out[n] = data.terminal[leaf].clone();
        for k in (0..n).rev() {
            let mut rhs = out[k + 1].scaled(c);
            rhs.axpy(1.0, &data.forcing[k][leaf]);
            out[k] = solve_implicit(&lap, c, &rhs, &opts.linear)?.solution;
        }
        Ok::<_, Error>(out)
    })?;

    let forcing: Vec<Vec<Field>> = (0..n)
        .map(|k| (0..tree.level_size(k)).map(|i| average(&data.forcing[k], leaves_below(tree, k, i))).collect())
        .collect();
    let model = TableModel::new(tree, grid, data.terminal.clone())?.with_forcing(forcing)?;
    let sol = solve_backward(&model, &BackwardOptions { penalty: 0.0, ..*opts }, None)?;

    let mut worst: f64 = 0.0;
    for k in 0..=n {
        let level: Vec<Field> = paths.iter().map(|p| p[k].clone()).collect();
        for i in 0..tree.level_size(k) {
            let mean = average(&level, leaves_below(tree, k, i));
            worst = worst.max(l2_norm(grid, &mean.sub(&sol.u[k][i])));
        }
    }
    Ok(worst)
}

/// [`duality_residual`] with `G` and `f̂_k = f(t_k, ·, 0) + div g(t_k, ·, 0)`
/// evaluated at each terminal node. Requires `a = I` and `σ = 0`.
pub fn duality_check(spec: &ProblemSpec, tree: &NoiseTree, grid: &SpatialGrid, opts: &BackwardOptions) -> Result<f64> {
    if !matches!(spec.a, MatrixCoef::Identity) || !spec.sigma.is_zero() {
        return Err(Error::InvalidInput("duality check requires a = I and sigma = 0".into()));
    }
    let n = tree.steps();
    let leaves = tree.level_size(n);
    let ctxs: Vec<NodeCtx> = (0..leaves).map(|i| NodeCtx::new(tree, n, i)).collect();
    let terminal = ctxs.iter().map(|c| spec.sample_terminal(grid, c)).collect::<Result<Vec<_>>>()?;
    let forcing = (0..n)
        .map(|k| {
            let t = tree.time(k);
            ctxs.iter()
                .map(|c| {
                    let mut f = spec.drift_field(grid, t, c, &[], &[], &[])?;
                    let g = spec.flux_field(grid, t, c, &[], &[], &[])?;
                    f.axpy(1.0, &nodal_divergence(grid, &g));
                    Ok(f)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    duality_residual(tree, grid, &TerminalData { terminal, forcing }, opts)
}

/// Discrete Itô balance for `‖u‖²` along a backward solution.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    /// `|E‖u_k‖² - E‖G‖² - Σ_{j≥k} Δt E[2⟨u_j, A u_j + F_j + β_j⟩] + Σ_{j≥k} Δt E‖v_j‖²|`, `k = 0..N`.
    pub per_level: Vec<f64>,
    pub max: f64,
    /// Same balance after adding back the exact scheme defects
    /// `E‖u_j - ū_j‖²` and the martingale-representation remainder; zero up to round-off.
    pub closed: f64,
}

/// Energy balance of `sol`, which must have been produced from `model`.
pub fn energy_identity<M: BackwardModel>(sol: &BackwardSolution, model: &M) -> Result<EnergyReport> {
    let tree = model.tree();
    let grid = model.grid();
    let n = tree.steps();
    if sol.steps() != n {
        return Err(Error::LevelMismatch { expected: n, got: sol.steps() });
    }
    let dt = tree.dt();
    let norm2 = |k: usize| {
        let vals: Vec<f64> = sol.u[k].iter().map(|f| f.inner(f, grid)).collect();
        tree.expectation(k, &vals)
    };
    let terminal = norm2(n);

    let mut per_level = vec![0.0; n + 1];
    let mut closed: f64 = 0.0;
    let mut work = 0.0;
    let mut vsum = 0.0;
    let mut defect = 0.0;
    for k in (0..n).rev() {
        let rows = par::try_map_indices(par::Exec::default(), tree.level_size(k), |i| {
            let u = &sol.u[k][i];
            let v = &sol.v[k][i];
            let mut drive = model.operator(k, i)?.apply(u);
            drive.axpy(1.0, &model.forcing(k, i, u, v)?);
            if let Some(beta) = &sol.beta {
                drive.axpy(1.0, &beta[k][i]);
            }
            let pairing = 2.0 * u.inner(&drive, grid);
            let vv: f64 = v.iter().map(|f| f.inner(f, grid)).sum();
            let ubar = tree.node_expect(i, &sol.u[k + 1]);
            let step = u.sub(&ubar);
            let mut rem = 0.0;
            for c in 0..tree.branching() {
                let mut r = sol.u[k + 1][tree.child(i, c)].sub(&ubar);
                for (rr, vr) in v.iter().enumerate() {
                    r.axpy(-tree.increment(c, rr), vr);
                }
                rem += tree.edge_prob() * r.inner(&r, grid);
            }
            Ok::<_, Error>([pairing, vv, step.inner(&step, grid) + rem])
        })?;
        let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
        work += dt * tree.expectation(k, &col(0));
        vsum += dt * tree.expectation(k, &col(1));
        defect += tree.expectation(k, &col(2));
        let balance = norm2(k) - terminal - work + vsum;
        per_level[k] = balance.abs();
        closed = closed.max((balance + defect).abs());
    }
    let max = per_level.iter().copied().fold(0.0, f64::max);
    Ok(EnergyReport { per_level, max, closed })
}
