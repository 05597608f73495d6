//! Difference operators and norms.

use super::{dot, Field, LinearOperator, SolverOptions, SpatialGrid};
use crate::error::Result;

/// Forward differences onto faces; `out[k]` has `grid.face_len(k)` entries.
pub fn gradient(grid: &SpatialGrid, u: &[f64]) -> Vec<Field> {
    (0..grid.dim())
        .map(|k| {
            let fs = grid.face_stride(k);
            let inv_h = 1.0 / grid.spacing()[k];
            let mut faces = Field::zeros(grid.face_len(k));
            for (idx, &ui) in u.iter().enumerate() {
                let lo = grid.low_face(k, idx);
                // node contributes +u/h to its low face and -u/h to its high face
                faces[lo] += ui * inv_h;
                faces[lo + fs] -= ui * inv_h;
            }
            faces
        })
        .collect()
}

/// Backward differences from faces to nodes; the exact negative adjoint of [`gradient`].
pub fn divergence(grid: &SpatialGrid, g: &[Field]) -> Field {
    let mut out = Field::zeros(grid.len());
    for (k, gk) in g.iter().enumerate() {
        let fs = grid.face_stride(k);
        let inv_h = 1.0 / grid.spacing()[k];
        for (idx, o) in out.iter_mut().enumerate() {
            let lo = grid.low_face(k, idx);
            *o += (gk[lo + fs] - gk[lo]) * inv_h;
        }
    }
    out
}

/// Average of the two faces adjacent to each node along axis `k`.
pub fn node_average(grid: &SpatialGrid, k: usize, faces: &[f64]) -> Field {
    let fs = grid.face_stride(k);
    Field(
        (0..grid.len())
            .map(|idx| {
                let lo = grid.low_face(k, idx);
                0.5 * (faces[lo] + faces[lo + fs])
            })
            .collect(),
    )
}

/// Adjoint of [`node_average`]: each node gives half its value to both adjacent faces.
pub fn spread_to_faces(grid: &SpatialGrid, k: usize, nodes: &[f64]) -> Field {
    let fs = grid.face_stride(k);
    let mut faces = Field::zeros(grid.face_len(k));
    for (idx, &v) in nodes.iter().enumerate() {
        let lo = grid.low_face(k, idx);
        faces[lo] += 0.5 * v;
        faces[lo + fs] += 0.5 * v;
    }
    faces
}

/// Node-centered gradient (central differences with zero extension).
pub fn node_gradient(grid: &SpatialGrid, u: &[f64]) -> Vec<Field> {
    gradient(grid, u)
        .iter()
        .enumerate()
        .map(|(k, f)| node_average(grid, k, f))
        .collect()
}

/// `div` of a node-centered vector field, routed through the faces so that
/// `<w, nodal_divergence(q)> = -<node_gradient(w), q>` exactly.
pub fn nodal_divergence(grid: &SpatialGrid, q: &[Field]) -> Field {
    let faces: Vec<Field> = q.iter().enumerate().map(|(k, qk)| spread_to_faces(grid, k, qk)).collect();
    divergence(grid, &faces)
}

/// Inner product of face fields, weighted by the cell volume.
pub fn face_inner(grid: &SpatialGrid, a: &[Field], b: &[Field]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dot(x, y)).sum::<f64>() * grid.cell_volume()
}

pub fn l2_norm(grid: &SpatialGrid, u: &[f64]) -> f64 {
    (dot(u, u) * grid.cell_volume()).sqrt()
}

pub fn h1_norm(grid: &SpatialGrid, u: &[f64]) -> f64 {
    let g = gradient(grid, u);
    (dot(u, u) * grid.cell_volume() + face_inner(grid, &g, &g)).sqrt()
}

/// `sqrt(<w, h>)` with `(I - Δ_h) w = h`.
pub fn hminus1_norm(grid: &SpatialGrid, h: &[f64]) -> Result<f64> {
    if h.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let lap = LinearOperator::laplacian(grid);
    let opts = SolverOptions {
        tol: 1e-13,
        ..SolverOptions::default()
    };
    let w = super::solve_implicit(&lap, 1.0, h, &opts)?;
    Ok((dot(&w.solution, h) * grid.cell_volume()).max(0.0).sqrt())
}
