//! Divergence-form elliptic operators `u ↦ ∂_j(a^{ij} ∂_i u)`.
//!
//! Diagonal coefficients `a^{kk}` are sampled at face midpoints and act on
//! the face gradient directly. Off-diagonal coefficients are sampled at nodes
//! and couple node-averaged gradient components, which keeps the assembled
//! operator symmetric whenever `a` is.

use super::ops::{divergence, gradient, node_average, spread_to_faces};
use super::{Field, SpatialGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LinearOperator {
    grid: SpatialGrid,
    face_coef: Vec<Field>,
    /// Node-wise `a^{ij}` for `i != j`, row-major `d*d` per node (diagonal slots unused).
    cross: Option<Vec<f64>>,
    symmetric: bool,
}

impl LinearOperator {
    /// The standard `(2d+1)`-point Laplacian.
    pub fn laplacian(grid: &SpatialGrid) -> Self {
        let face_coef = (0..grid.dim())
            .map(|k| Field::constant(grid.face_len(k), 1.0))
            .collect();
        Self {
            grid: grid.clone(),
            face_coef,
            cross: None,
            symmetric: true,
        }
    }

    /// The zero operator.
    pub fn zero(grid: &SpatialGrid) -> Self {
        let face_coef = (0..grid.dim()).map(|k| Field::zeros(grid.face_len(k))).collect();
        Self {
            grid: grid.clone(),
            face_coef,
            cross: None,
            symmetric: true,
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// True when the stencil has nonnegative off-diagonals (an M-matrix
    /// after a positive shift), which is what discrete comparison needs.
    pub fn is_monotone(&self) -> bool {
        self.cross.is_none()
    }

    /// `sum_i a^{ij} ∂_i u` on the faces of axis `j`.
    pub fn flux(&self, u: &[f64]) -> Vec<Field> {
        let g = gradient(&self.grid, u);
        self.flux_of_gradient(&g)
    }

    pub fn flux_of_gradient(&self, g: &[Field]) -> Vec<Field> {
        let d = self.grid.dim();
        let mut out: Vec<Field> = g
            .iter()
            .zip(&self.face_coef)
            .map(|(gk, ck)| Field(gk.iter().zip(ck.iter()).map(|(a, b)| a * b).collect()))
            .collect();
        if let Some(cross) = &self.cross {
            let centered: Vec<Field> = (0..d).map(|k| node_average(&self.grid, k, &g[k])).collect();
            for j in 0..d {
                let mut nodes = Field::zeros(self.grid.len());
                for (idx, nv) in nodes.iter_mut().enumerate() {
                    let a = &cross[idx * d * d..(idx + 1) * d * d];
                    *nv = (0..d).filter(|&i| i != j).map(|i| a[i * d + j] * centered[i][idx]).sum();
                }
                out[j].axpy(1.0, &spread_to_faces(&self.grid, j, &nodes));
            }
        }
        out
    }

    pub fn apply(&self, u: &[f64]) -> Field {
        divergence(&self.grid, &self.flux(u))
    }

    /// Diagonal entries of the operator matrix.
    pub fn diagonal(&self) -> Field {
        let mut diag = Field::zeros(self.grid.len());
        for (k, ck) in self.face_coef.iter().enumerate() {
            let fs = self.grid.face_stride(k);
            let h2 = self.grid.spacing()[k].powi(2);
            for (idx, dv) in diag.iter_mut().enumerate() {
                let lo = self.grid.low_face(k, idx);
                *dv -= (ck[lo] + ck[lo + fs]) / h2;
            }
        }
        diag
    }
}

/// Assemble `div(a ∇·)` from a sampler that writes the row-major `d×d`
/// matrix `a(x)` into its second argument.
pub fn assemble_elliptic<F>(grid: &SpatialGrid, mut a: F) -> Result<LinearOperator>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = grid.dim();
    let mut buf = vec![0.0; d * d];
    let mut face_coef: Vec<Field> = (0..d).map(|k| Field::zeros(grid.face_len(k))).collect();
    let mut cross = vec![0.0; grid.len() * d * d];
    let mut any_cross = false;
    let mut symmetric = true;
    let counts = grid.counts().to_vec();

    for idx in 0..grid.len() {
        let mi = grid.multi_index(idx);
        for k in 0..d {
            let x = grid.low_face_point(k, idx);
            let c = sample(&mut a, &mut buf, &x, k, k)?;
            face_coef[k][grid.low_face(k, idx)] = c;
            if mi[k] + 1 == counts[k] {
                let mut xh = x.clone();
                xh[k] += grid.spacing()[k];
                let c = sample(&mut a, &mut buf, &xh, k, k)?;
                face_coef[k][grid.low_face(k, idx) + grid.face_stride(k)] = c;
            }
        }
        if d > 1 {
            let x = grid.point(idx);
            a(&x, &mut buf);
            if let Some(v) = buf.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite coefficient {v} at {x:?}")));
            }
            let scale = buf.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            for i in 0..d {
                for j in 0..d {
                    if i == j {
                        continue;
                    }
                    let v = buf[i * d + j];
                    cross[idx * d * d + i * d + j] = v;
                    any_cross |= v != 0.0;
                    symmetric &= (v - buf[j * d + i]).abs() <= 1e-14 * scale;
                }
            }
        }
    }
    Ok(LinearOperator {
        grid: grid.clone(),
        face_coef,
        cross: any_cross.then_some(cross),
        symmetric,
    })
}

fn sample<F: FnMut(&[f64], &mut [f64])>(
    a: &mut F,
    buf: &mut [f64],
    x: &[f64],
    i: usize,
    j: usize,
) -> Result<f64> {
    let d = x.len();
    a(x, buf);
    let c = buf[i * d + j];
    if !c.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite coefficient {c} at {x:?}")));
    }
    if c <= 0.0 {
        return Err(Error::Ellipticity {
            value: c,
            location: format!("{x:?}"),
        });
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dot;

    #[test]
    fn identity_gives_standard_stencil() {
        let g = SpatialGrid::uniform_1d(0.0, 6.0, 5).unwrap();
        let op = assemble_elliptic(&g, |_, a| a[0] = 1.0).unwrap();
        let mut e = Field::zeros(5);
        e[2] = 1.0;
        assert_eq!(op.apply(&e).0, vec![0.0, 1.0, -2.0, 1.0, 0.0]);
        assert_eq!(op.diagonal().0, vec![-2.0; 5]);
        assert!(op.is_symmetric() && op.is_monotone());
    }

    #[test]
    fn linear_functions_are_annihilated_in_the_interior() {
        let g = SpatialGrid::new(&[(0.0, 1.0), (0.0, 1.0)], &[6, 6]).unwrap();
        let op = LinearOperator::laplacian(&g);
        let u = g.sample(|x| 2.0 * x[0] - x[1] + 0.5);
        let au = op.apply(&u);
        for idx in 0..g.len() {
            let mi = g.multi_index(idx);
            if mi.iter().all(|&i| i > 0 && i < 5) {
                assert!(au[idx].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn anisotropic_symmetric_coefficient_gives_symmetric_operator() {
        let g = SpatialGrid::new(&[(0.0, 1.0), (0.0, 1.0)], &[5, 4]).unwrap();
        let op = assemble_elliptic(&g, |x, a| {
            a[0] = 1.0 + x[0];
            a[1] = 0.3 * x[1];
            a[2] = 0.3 * x[1];
            a[3] = 2.0 + x[0] * x[1];
        })
        .unwrap();
        assert!(op.is_symmetric());
        assert!(!op.is_monotone());
        let u = g.sample(|x| (3.0 * x[0]).sin() + x[1]);
        let w = g.sample(|x| x[0] * x[0] - x[1]);
        let a = dot(&op.apply(&u), &w);
        let b = dot(&u, &op.apply(&w));
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn rejects_nonpositive_or_nonfinite_coefficients() {
        let g = SpatialGrid::uniform_1d(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            assemble_elliptic(&g, |_, a| a[0] = -1.0),
            Err(Error::Ellipticity { .. })
        ));
        assert!(assemble_elliptic(&g, |_, a| a[0] = f64::NAN).is_err());
    }

    #[test]
    fn diagonal_matches_matrix_entries() {
        let g = SpatialGrid::new(&[(0.0, 1.0), (0.0, 2.0)], &[3, 4]).unwrap();
        let op = assemble_elliptic(&g, |x, a| {
            a.fill(0.1);
            a[0] = 1.0 + x[1];
            a[3] = 1.5;
        })
        .unwrap();
        let diag = op.diagonal();
        for idx in 0..g.len() {
            let mut e = Field::zeros(g.len());
            e[idx] = 1.0;
            assert!((op.apply(&e)[idx] - diag[idx]).abs() < 1e-12);
        }
    }
}
