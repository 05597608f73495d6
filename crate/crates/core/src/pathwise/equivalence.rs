//! Pathwise solutions read against a grid solution along characteristics.

use std::path::Path;

use super::{characteristic, check_linear_setting, solve_reflected_bsde, CharacteristicData};
use crate::bspde::BackwardSolution;
use crate::error::{Error, Result};
use crate::grid::{node_gradient, Field, SpatialGrid};
use crate::lattice::{sample_joint_paths, JointTree};
use crate::par::{map_indices, map_slice, Exec};
use crate::penalty::DiscreteMeasure;
use crate::problem::ProblemSpec;

#[derive(Debug, Clone)]
pub struct EquivalenceOptions {
    pub starts: Vec<Vec<f64>>,
    /// Sampled `(W, B)` paths per start point.
    pub samples: usize,
    pub seed: u64,
    pub exec: Exec,
    /// Keep one [`EquivalenceRow`] per compared node for CSV export.
    pub keep_rows: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceRow {
    pub x: Vec<f64>,
    pub path: usize,
    pub t: f64,
    pub y: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EquivalenceReport {
    /// Samples compared (over all start points).
    pub samples: usize,
    /// Samples dropped because the characteristic left the grid box.
    pub discarded: usize,
    pub max_y: f64,
    pub mean_y: f64,
    pub max_z: f64,
    pub mean_z: f64,
    pub max_z_tilde: f64,
    pub mean_z_tilde: f64,
    pub rows: Vec<EquivalenceRow>,
}

impl EquivalenceReport {
    /// `x1..xd,path,t,y,u,abs_diff`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.rows.first().map_or(1, |r| r.x.len());
        let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        header.extend(["path", "t", "y", "u", "abs_diff"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut row: Vec<String> = r.x.iter().map(|v| format!("{v:.12e}")).collect();
            row.push(r.path.to_string());
            row.push(format!("{:.12e}", r.t));
            row.push(format!("{:.12e}", r.y));
            row.push(format!("{:.12e}", r.u));
            row.push(format!("{:.12e}", (r.y - r.u).abs()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Default)]
struct Acc {
    samples: usize,
    discarded: usize,
    count: usize,
    max: [f64; 3],
    sum: [f64; 3],
    rows: Vec<EquivalenceRow>,
}

fn check_solution(sol: &BackwardSolution, tree: &JointTree, grid: &SpatialGrid) -> Result<()> {
    let n = tree.steps();
    if sol.u.len() != n + 1 {
        return Err(Error::LevelMismatch { expected: n + 1, got: sol.u.len() });
    }
    for (k, level) in sol.u.iter().enumerate() {
        if level.len() != tree.w().level_size(k) {
            return Err(Error::LevelMismatch { expected: tree.w().level_size(k), got: level.len() });
        }
        if level.iter().any(|f| f.len() != grid.len()) {
            return Err(Error::LevelMismatch { expected: grid.len(), got: level[0].len() });
        }
    }
    Ok(())
}

/// Compare `(Y, Z, Z̃)` with `(u, v, √2 ∇u)` interpolated at `(t_k, x + √2 B_k)`
/// along sampled paths, for levels `0..N`.
pub fn equivalence_residual(
    spec: &ProblemSpec,
    sol: &BackwardSolution,
    grid: &SpatialGrid,
    tree: &JointTree,
    opts: &EquivalenceOptions,
) -> Result<EquivalenceReport> {
    check_linear_setting(spec)?;
    check_solution(sol, tree, grid)?;
    let n = tree.steps();
    let paths = sample_joint_paths(spec.m, spec.d, n, spec.horizon, opts.samples, opts.seed)?;
    let grads: Vec<Vec<Vec<Field>>> = sol.u.iter().take(n).map(|l| l.iter().map(|u| node_gradient(grid, u)).collect()).collect();
    let sqrt2 = std::f64::consts::SQRT_2;

    let per_start: Vec<Result<Acc>> = map_slice(opts.exec, &opts.starts, |x| {
        let data = CharacteristicData::sample(spec, tree, x, Exec::Sequential)?;
        let rb = solve_reflected_bsde(&data, tree, Exec::Sequential)?;
        let mut acc = Acc::default();
        let mut local = Vec::new();
        'paths: for s in 0..paths.count() {
            let (wb, bb) = (paths.w_branches(s), paths.b_branches(s));
            local.clear();
            let mut diffs = Vec::with_capacity(n);
            let (mut iw, mut ib) = (0usize, 0usize);
            for k in 0..n {
                let idx = tree.join(k, iw, ib);
                let xk = characteristic(x, &tree.b().position(k, ib));
                let Some(u) = grid.interpolate(&sol.u[k][iw], &xk) else {
                    acc.discarded += 1;
                    continue 'paths;
                };
                let dz = (0..spec.m)
                    .map(|r| (rb.z[k][idx][r] - grid.interpolate(&sol.v[k][iw][r], &xk).unwrap_or(0.0)).abs())
                    .fold(0.0, f64::max);
                let dzt = (0..spec.d)
                    .map(|r| (rb.z_tilde[k][idx][r] - sqrt2 * grid.interpolate(&grads[k][iw][r], &xk).unwrap_or(0.0)).abs())
                    .fold(0.0, f64::max);
                let y = rb.y[k][idx];
                diffs.push([(y - u).abs(), dz, dzt]);
                if opts.keep_rows {
                    local.push(EquivalenceRow { x: x.clone(), path: s, t: tree.time(k), y, u });
                }
                iw = tree.w().child(iw, wb[k] as usize);
                ib = tree.b().child(ib, bb[k] as usize);
            }
            acc.samples += 1;
            for dv in diffs {
                acc.count += 1;
                for j in 0..3 {
                    acc.max[j] = acc.max[j].max(dv[j]);
                    acc.sum[j] += dv[j];
                }
            }
            acc.rows.append(&mut local);
        }
        Ok(acc)
    });

    let mut total = Acc::default();
    for acc in per_start {
        let acc = acc?;
        total.samples += acc.samples;
        total.discarded += acc.discarded;
        total.count += acc.count;
        for j in 0..3 {
            total.max[j] = total.max[j].max(acc.max[j]);
            total.sum[j] += acc.sum[j];
        }
        total.rows.extend(acc.rows);
    }
    let denom = total.count.max(1) as f64;
    Ok(EquivalenceReport {
        samples: total.samples,
        discarded: total.discarded,
        max_y: total.max[0],
        mean_y: total.sum[0] / denom,
        max_z: total.max[1],
        mean_z: total.sum[1] / denom,
        max_z_tilde: total.max[2],
        mean_z_tilde: total.sum[2] / denom,
        rows: total.rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushforwardReport {
    /// `E Σ φ dμ` from the grid measure.
    pub grid_side: f64,
    /// `∫ E Σ φ(t_k, x + √2 B_k) ΔK^x_k dx`, the integral taken over the grid points.
    pub path_side: f64,
    /// `|grid_side - path_side| / |grid_side|`.
    pub relative_gap: f64,
}

/// Test the reflecting measure against the pathwise reflections pushed
/// forward along characteristics started at every grid point.
pub fn measure_pushforward<P>(
    spec: &ProblemSpec,
    mu: &DiscreteMeasure,
    grid: &SpatialGrid,
    tree: &JointTree,
    phi: P,
    exec: Exec,
) -> Result<PushforwardReport>
where
    P: Fn(f64, &[f64]) -> f64 + Sync + Send,
{
    check_linear_setting(spec)?;
    if mu.density().len() != tree.steps() {
        return Err(Error::LevelMismatch { expected: tree.steps(), got: mu.density().len() });
    }
    let points: Vec<Vec<f64>> = (0..grid.len()).map(|p| grid.point(p)).collect();
    let grid_side = mu.integrate(|k, _, p| phi(tree.time(k), &points[p]));
    let per_point: Vec<Result<f64>> = map_indices(exec, grid.len(), |p| {
        let data = CharacteristicData::sample(spec, tree, &points[p], Exec::Sequential)?;
        let rb = solve_reflected_bsde(&data, tree, Exec::Sequential)?;
        let mut s = 0.0;
        for k in 0..tree.steps() {
            let t = tree.time(k);
            for (idx, dk) in rb.dk[k].iter().enumerate().filter(|(_, dk)| **dk > 0.0) {
                let (_, ib) = tree.split(k, idx);
                let xk = characteristic(&points[p], &tree.b().position(k, ib));
                s += tree.node_prob(k, idx) * phi(t, &xk) * dk;
            }
        }
        Ok(s)
    });
    let mut path_side = 0.0;
    for s in per_point {
        path_side += s?;
    }
    path_side *= grid.cell_volume();
    let relative_gap = if grid_side != 0.0 {
        (grid_side - path_side).abs() / grid_side.abs()
    } else if path_side == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(PushforwardReport { grid_side, path_side, relative_gap })
}
