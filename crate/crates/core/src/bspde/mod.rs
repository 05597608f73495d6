//! Backward induction for linear, penalized and θ-continued BSPDEs on a noise tree.

mod checks;
mod model;
mod solver;

use std::path::Path;

pub use checks::{duality_check, duality_residual, energy_identity, EnergyReport, TerminalData};
pub use model::{BackwardModel, SpecModel, TableModel};
pub use solver::{solve_backward, solve_linear_bspde, BackwardOptions};

use crate::error::{Error, Result};
use crate::grid::{gradient, write_node_fields_csv, Field, SpatialGrid};
use crate::lattice::NoiseTree;

/// Output of the backward scheme. Level `k` runs over `0..=N` for `u` and
/// over `0..N` for `v`, `beta` and the martingale residual.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub dt: f64,
    /// `u[level][node]`; `u[N]` is the terminal data.
    pub u: Vec<Vec<Field>>,
    /// `v[level][node][r]`.
    pub v: Vec<Vec<Vec<Field>>>,
    /// RMS martingale-representation residual per `[level][node]`.
    pub martingale_residual: Vec<Vec<f64>>,
    /// Penalty density `n (u - ξ)⁻` when a penalized obstacle was active.
    pub beta: Option<Vec<Vec<Field>>>,
    /// Obstacle values the solve used, levels `0..=N`.
    pub obstacle: Option<Vec<Vec<Field>>>,
    pub penalty: f64,
    /// Largest inner-iteration count over all nodes.
    pub inner_iterations: usize,
}

impl BackwardSolution {
    pub fn steps(&self) -> usize {
        self.u.len() - 1
    }

    pub fn root(&self) -> &Field {
        &self.u[0][0]
    }

    /// Largest absolute entry of `u` over all levels and nodes.
    pub fn max_abs_u(&self) -> f64 {
        self.u.iter().flatten().map(Field::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_v(&self) -> f64 {
        self.v.iter().flatten().flatten().map(Field::max_abs).fold(0.0, f64::max)
    }

    /// Largest `|u - other.u|` over all levels, nodes and points.
    pub fn max_abs_diff(&self, other: &BackwardSolution) -> f64 {
        self.u
            .iter()
            .flatten()
            .zip(other.u.iter().flatten())
            .map(|(a, b)| a.sub(b).max_abs())
            .fold(0.0, f64::max)
    }

    /// Discrete `𝓗`-norm `sqrt(max_k E‖u_k‖² + Σ_{k<N} Δt E‖u_k‖²_{H¹})`.
    pub fn h_norm(&self, tree: &NoiseTree, grid: &SpatialGrid) -> f64 {
        h_norm_of(&self.u, self.dt, tree, grid)
    }

    /// `sqrt(Σ_{k<N} Δt E‖v_k‖²)`.
    pub fn v_norm(&self, tree: &NoiseTree, grid: &SpatialGrid) -> f64 {
        v_norm_of(&self.v, self.dt, tree, grid)
    }

    /// `(𝓗-distance of u, L²-distance of v)`.
    pub fn distance(&self, other: &BackwardSolution, tree: &NoiseTree, grid: &SpatialGrid) -> Result<(f64, f64)> {
        if self.u.len() != other.u.len() {
            return Err(Error::LevelMismatch { expected: self.u.len(), got: other.u.len() });
        }
        let du: Vec<Vec<Field>> = self
            .u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.sub(y)).collect())
            .collect();
        let dv: Vec<Vec<Vec<Field>>> = self
            .v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.sub(q)).collect())
                    .collect()
            })
            .collect();
        Ok((h_norm_of(&du, self.dt, tree, grid), v_norm_of(&dv, self.dt, tree, grid)))
    }

    /// Snapshot of `u` (or `v^r` when `component = Some(r)`) as `level,node,x..,value` CSV.
    pub fn write_csv(&self, path: &Path, grid: &SpatialGrid, component: Option<usize>) -> Result<()> {
        match component {
            None => {
                let rows = self
                    .u
                    .iter()
                    .enumerate()
                    .flat_map(|(k, lvl)| lvl.iter().enumerate().map(move |(i, f)| (k, i, f)));
                write_node_fields_csv(path, grid, rows)
            }
            Some(r) => {
                let rows = self.v.iter().enumerate().flat_map(move |(k, lvl)| {
                    lvl.iter().enumerate().filter_map(move |(i, vs)| vs.get(r).map(|f| (k, i, f)))
                });
                write_node_fields_csv(path, grid, rows)
            }
        }
    }
}

fn h_norm_of(u: &[Vec<Field>], dt: f64, tree: &NoiseTree, grid: &SpatialGrid) -> f64 {
    let vol = grid.cell_volume();
    let n = u.len() - 1;
    let mut sup: f64 = 0.0;
    let mut integral = 0.0;
    for (k, level) in u.iter().enumerate() {
        let l2: Vec<f64> = level.iter().map(|f| f.inner(f, grid)).collect();
        sup = sup.max(tree.expectation(k, &l2));
        if k < n {
            let h1: Vec<f64> = level
                .iter()
                .zip(&l2)
                .map(|(f, l)| l + gradient(grid, f).iter().map(|g| crate::grid::dot(g, g) * vol).sum::<f64>())
                .collect();
            integral += dt * tree.expectation(k, &h1);
        }
    }
    (sup + integral).sqrt()
}

fn v_norm_of(v: &[Vec<Vec<Field>>], dt: f64, tree: &NoiseTree, grid: &SpatialGrid) -> f64 {
    let mut total = 0.0;
    for (k, level) in v.iter().enumerate() {
        let sq: Vec<f64> = level.iter().map(|vs| vs.iter().map(|f| f.inner(f, grid)).sum()).collect();
        total += dt * tree.expectation(k, &sq);
    }
    total.sqrt()
}

#[cfg(test)]
mod tests;
