//! Per-node data of one backward step: leading operator, explicit forcing and obstacle.

use crate::error::{Error, Result};
use crate::grid::{nodal_divergence, node_gradient, Field, LinearOperator, SpatialGrid};
use crate::lattice::NoiseTree;
use crate::problem::{NodeCtx, ProblemSpec};

use super::BackwardSolution;

/// Everything the backward solver needs to advance one node from level `k + 1` to `k`.
///
/// One step solves `u = ū + Δt·(A u + F(u, v))`, with `A = operator(k, node)`
/// implicit and `F = forcing(k, node, u, v)` evaluated at the current inner
/// iterate. `v` is always the explicit martingale projection of level `k + 1`.
pub trait BackwardModel: Sync {
    fn grid(&self) -> &SpatialGrid;
    fn tree(&self) -> &NoiseTree;
    fn terminal(&self, node: usize) -> Result<Field>;
    fn operator(&self, k: usize, node: usize) -> Result<LinearOperator>;
    fn forcing(&self, k: usize, node: usize, u: &[f64], v: &[Field]) -> Result<Field>;
    /// Whether `forcing` depends on its `u` argument.
    fn state_dependent(&self) -> bool;
    fn obstacle(&self, k: usize, node: usize) -> Result<Option<Field>>;
}

#[derive(Debug, Clone, Copy)]
enum ObstacleSource<'a> {
    Spec,
    Absent,
    Table(&'a [Vec<Field>]),
}

/// A [`ProblemSpec`] seen through the θ-family of problems
///
/// `-du = [div(a_θ0 ∇u + θ0 σv) + θ0 (f + div g)(u, ∇u, v) + (θ - θ0) R(u1, v1)] dt + μ - v dW`
///
/// with `a_θ0 = (1 - θ0) I + θ0 a` and the correction
/// `R(u1, v1) = div((a - I)∇u1 + σ v1) + (f + div g)(u1, ∇u1, v1)` taken from
/// a previous iterate. `θ0 = 1` without correction is the problem itself.
#[derive(Clone)]
pub struct SpecModel<'a> {
    spec: &'a ProblemSpec,
    tree: &'a NoiseTree,
    grid: &'a SpatialGrid,
    theta0: f64,
    correction: Option<(f64, &'a BackwardSolution)>,
    frozen: bool,
    obstacle: ObstacleSource<'a>,
}

impl<'a> SpecModel<'a> {
    pub fn new(spec: &'a ProblemSpec, tree: &'a NoiseTree, grid: &'a SpatialGrid) -> Result<Self> {
        if tree.noise_dim() != spec.m {
            return Err(Error::InvalidInput(format!(
                "tree has {} noise coordinates but the problem has {}",
                tree.noise_dim(),
                spec.m
            )));
        }
        if grid.dim() != spec.d {
            return Err(Error::InvalidInput(format!(
                "grid has dimension {} but the problem has {}",
                grid.dim(),
                spec.d
            )));
        }
        if (tree.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
            return Err(Error::InvalidInput(format!(
                "tree horizon {} differs from problem horizon {}",
                tree.horizon(),
                spec.horizon
            )));
        }
        Ok(Self {
            spec,
            tree,
            grid,
            theta0: 1.0,
            correction: None,
            frozen: false,
            obstacle: ObstacleSource::Spec,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    /// Evaluate `f` and `g` at the zero state, turning the problem into linear data.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn without_obstacle(mut self) -> Self {
        self.obstacle = ObstacleSource::Absent;
        self
    }

    /// Obstacle given as a table `[level][node]` instead of the spec's callable.
    pub fn with_obstacle_table(mut self, table: &'a [Vec<Field>]) -> Self {
        self.obstacle = ObstacleSource::Table(table);
        self
    }

    /// Continuation member `θ0` with correction weight `θ - θ0` around `prev`.
    pub fn with_theta(mut self, theta0: f64, correction: Option<(f64, &'a BackwardSolution)>) -> Self {
        self.theta0 = theta0;
        self.correction = correction.filter(|(w, _)| *w != 0.0);
        self
    }

    fn ctx(&self, k: usize, node: usize) -> NodeCtx {
        NodeCtx::new(self.tree, k, node)
    }

    /// `σ v + g(u, ∇u, v)` as node fields plus `f(u, ∇u, v)`.
    fn nonlinear_parts(
        &self,
        t: f64,
        ctx: &NodeCtx,
        u: &[f64],
        v: &[Field],
        frozen: bool,
    ) -> Result<(Vec<Field>, Field)> {
        let spec = self.spec;
        let grid = self.grid;
        let mut flux = spec.sigma_v(grid, t, ctx, v)?;
        let grad = if frozen { Vec::new() } else { node_gradient(grid, u) };
        let (uu, vv): (&[f64], &[Field]) = if frozen { (&[], &[]) } else { (u, v) };
        let gg: &[Field] = &grad;
        let g = spec.flux_field(grid, t, ctx, uu, gg, vv)?;
        for (q, gk) in flux.iter_mut().zip(&g) {
            q.axpy(1.0, gk);
        }
        let f = spec.drift_field(grid, t, ctx, uu, gg, vv)?;
        Ok((flux, f))
    }
}

impl BackwardModel for SpecModel<'_> {
    fn grid(&self) -> &SpatialGrid {
        self.grid
    }

    fn tree(&self) -> &NoiseTree {
        self.tree
    }

    fn terminal(&self, node: usize) -> Result<Field> {
        let ctx = self.ctx(self.tree.steps(), node);
        self.spec.sample_terminal(self.grid, &ctx)
    }

    fn operator(&self, k: usize, node: usize) -> Result<LinearOperator> {
        let ctx = self.ctx(k, node);
        self.spec.leading_operator(self.grid, self.tree.time(k), &ctx, self.theta0)
    }

    fn forcing(&self, k: usize, node: usize, u: &[f64], v: &[Field]) -> Result<Field> {
        let t = self.tree.time(k);
        let ctx = self.ctx(k, node);
        let mut out = Field::zeros(self.grid.len());
        if self.theta0 != 0.0 {
            let (flux, f) = self.nonlinear_parts(t, &ctx, u, v, self.frozen)?;
            out.axpy(self.theta0, &f);
            out.axpy(self.theta0, &nodal_divergence(self.grid, &flux));
        }
        if let Some((weight, prev)) = self.correction {
            let u1 = &prev.u[k][node];
            let v1 = &prev.v[k][node];
            let (flux, f) = self.nonlinear_parts(t, &ctx, u1, v1, self.frozen)?;
            let mut r = f;
            r.axpy(1.0, &nodal_divergence(self.grid, &flux));
            if !matches!(self.spec.a, crate::problem::MatrixCoef::Identity) {
                let a = self.spec.leading_operator(self.grid, t, &ctx, 1.0)?;
                r.axpy(1.0, &a.apply(u1));
                r.axpy(-1.0, &LinearOperator::laplacian(self.grid).apply(u1));
            }
            out.axpy(weight, &r);
        }
        Ok(out)
    }

    fn state_dependent(&self) -> bool {
        !self.frozen && self.theta0 != 0.0 && self.spec.is_state_dependent()
    }

    fn obstacle(&self, k: usize, node: usize) -> Result<Option<Field>> {
        match self.obstacle {
            ObstacleSource::Absent => Ok(None),
            ObstacleSource::Table(t) => {
                let f = t
                    .get(k)
                    .and_then(|level| level.get(node))
                    .ok_or(Error::LevelMismatch { expected: k, got: t.len() })?;
                Ok(Some(f.clone()))
            }
            ObstacleSource::Spec => {
                let ctx = self.ctx(k, node);
                self.spec.sample_obstacle(self.grid, self.tree.time(k), &ctx)
            }
        }
    }
}

/// Heat-type model with tabulated data: `A = Δ`, forcing `[level][node]`
/// (levels `0..N`), terminal values per terminal node and an optional obstacle table.
#[derive(Debug, Clone)]
pub struct TableModel<'a> {
    tree: &'a NoiseTree,
    grid: &'a SpatialGrid,
    terminal: Vec<Field>,
    forcing: Option<Vec<Vec<Field>>>,
    obstacle: Option<Vec<Vec<Field>>>,
}

impl<'a> TableModel<'a> {
    pub fn new(tree: &'a NoiseTree, grid: &'a SpatialGrid, terminal: Vec<Field>) -> Result<Self> {
        let n = tree.level_size(tree.steps());
        if terminal.len() != n {
            return Err(Error::LevelMismatch { expected: n, got: terminal.len() });
        }
        if let Some(f) = terminal.iter().find(|f| f.len() != grid.len()) {
            return Err(Error::LevelMismatch { expected: grid.len(), got: f.len() });
        }
        Ok(Self { tree, grid, terminal, forcing: None, obstacle: None })
    }

    pub fn with_forcing(mut self, forcing: Vec<Vec<Field>>) -> Result<Self> {
        self.check_table(&forcing, self.tree.steps())?;
        self.forcing = Some(forcing);
        Ok(self)
    }

    /// Obstacle per level `0..=N`.
    pub fn with_obstacle(mut self, obstacle: Vec<Vec<Field>>) -> Result<Self> {
        self.check_table(&obstacle, self.tree.steps() + 1)?;
        self.obstacle = Some(obstacle);
        Ok(self)
    }

    fn check_table(&self, table: &[Vec<Field>], levels: usize) -> Result<()> {
        if table.len() < levels {
            return Err(Error::LevelMismatch { expected: levels, got: table.len() });
        }
        for (k, level) in table.iter().take(levels).enumerate() {
            if level.len() != self.tree.level_size(k) {
                return Err(Error::LevelMismatch { expected: self.tree.level_size(k), got: level.len() });
            }
        }
        Ok(())
    }
}

impl BackwardModel for TableModel<'_> {
    fn grid(&self) -> &SpatialGrid {
        self.grid
    }

    fn tree(&self) -> &NoiseTree {
        self.tree
    }

    fn terminal(&self, node: usize) -> Result<Field> {
        Ok(self.terminal[node].clone())
    }

    fn operator(&self, _k: usize, _node: usize) -> Result<LinearOperator> {
        Ok(LinearOperator::laplacian(self.grid))
    }

    fn forcing(&self, k: usize, node: usize, _u: &[f64], _v: &[Field]) -> Result<Field> {
        Ok(match &self.forcing {
            Some(f) => f[k][node].clone(),
            None => Field::zeros(self.grid.len()),
        })
    }

    fn state_dependent(&self) -> bool {
        false
    }

    fn obstacle(&self, k: usize, node: usize) -> Result<Option<Field>> {
        Ok(self.obstacle.as_ref().map(|o| o[k][node].clone()))
    }
}
