//! Spatial discretization of a box with zero Dirichlet boundary values.
//!
//! Unknowns live on the interior nodes of a uniform tensor grid. Values
//! outside the interior are zero. Gradients live on the faces between nodes
//! (including the two boundary faces in each direction), so that the
//! forward-difference gradient and backward-difference divergence are exact
//! negative adjoints of each other under the cell-volume inner products.

mod io;
mod operator;
mod ops;
mod solve;

pub use io::{read_field_binary, write_field_binary, write_field_csv, write_node_fields_csv};
pub use operator::{assemble_elliptic, LinearOperator};
pub use ops::{
    divergence, face_inner, gradient, h1_norm, hminus1_norm, l2_norm, nodal_divergence,
    node_average, node_gradient, spread_to_faces,
};
pub use solve::{solve_implicit, solve_shifted, SolveReport, SolverOptions};

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Uniform interior grid on an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    /// Per dimension: index of the face on the low side of each node.
    low_face: Vec<Vec<usize>>,
    face_strides: Vec<Vec<usize>>,
    face_len: Vec<usize>,
}

impl SpatialGrid {
    /// `bounds[k] = (lo_k, hi_k)`, `counts[k]` interior nodes along axis k.
    pub fn new(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != counts.len() {
            return Err(Error::InvalidInput(format!(
                "grid needs matching non-empty bounds and counts, got {} and {}",
                bounds.len(),
                counts.len()
            )));
        }
        for (k, (&(lo, hi), &n)) in bounds.iter().zip(counts).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidInput(format!("axis {k}: bad bounds [{lo}, {hi}]")));
            }
            if n < 2 {
                return Err(Error::InvalidInput(format!("axis {k}: need at least 2 interior points, got {n}")));
            }
        }
        let d = counts.len();
        let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let hi: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        let h: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (counts[k] + 1) as f64).collect();
        let strides = row_major_strides(counts);
        let len: usize = counts.iter().product();

        let mut face_strides = Vec::with_capacity(d);
        let mut face_len = Vec::with_capacity(d);
        for k in 0..d {
            let mut fc = counts.to_vec();
            fc[k] += 1;
            face_len.push(fc.iter().product());
            face_strides.push(row_major_strides(&fc));
        }
        let mut low_face = vec![vec![0usize; len]; d];
        let mut mi = vec![0usize; d];
        for idx in 0..len {
            decompose(idx, &strides, &mut mi);
            for k in 0..d {
                low_face[k][idx] = mi.iter().zip(&face_strides[k]).map(|(i, s)| i * s).sum();
            }
        }
        Ok(Self {
            lo,
            hi,
            counts: counts.to_vec(),
            h,
            strides,
            len,
            low_face,
            face_strides,
            face_len,
        })
    }

    /// One-dimensional convenience constructor.
    pub fn uniform_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(&[(lo, hi)], &[n])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo.iter().copied().zip(self.hi.iter().copied()).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn max_spacing(&self) -> f64 {
        self.h.iter().copied().fold(0.0, f64::max)
    }

    pub fn face_len(&self, k: usize) -> usize {
        self.face_len[k]
    }

    pub(crate) fn low_face(&self, k: usize, idx: usize) -> usize {
        self.low_face[k][idx]
    }

    pub(crate) fn face_stride(&self, k: usize) -> usize {
        self.face_strides[k][k]
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut mi = vec![0; self.dim()];
        decompose(idx, &self.strides, &mut mi);
        mi
    }

    pub fn index(&self, mi: &[usize]) -> usize {
        mi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinate of interior node `i` along axis `k`.
    pub fn coord(&self, k: usize, i: usize) -> f64 {
        self.lo[k] + (i as f64 + 1.0) * self.h[k]
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.point_into(idx, &mut x);
        x
    }

    pub fn point_into(&self, idx: usize, x: &mut [f64]) {
        let mut rem = idx;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            x[k] = self.coord(k, i);
        }
    }

    /// Midpoint of the low face of node `idx` along axis `k`.
    pub fn low_face_point(&self, k: usize, idx: usize) -> Vec<f64> {
        let mut x = self.point(idx);
        x[k] -= 0.5 * self.h[k];
        x
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(k, &v)| v >= self.lo[k] && v <= self.hi[k])
    }

    /// Field with `f(x)` at every interior node.
    pub fn sample<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Field {
        let mut x = vec![0.0; self.dim()];
        let data = (0..self.len)
            .map(|idx| {
                self.point_into(idx, &mut x);
                f(&x)
            })
            .collect();
        Field(data)
    }

    /// Multilinear interpolation with zero boundary values. `None` outside the box.
    pub fn interpolate(&self, u: &[f64], x: &[f64]) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let d = self.dim();
        // Position in "extended" index space where 0 is the low boundary.
        let mut base = vec![0i64; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let s = (x[k] - self.lo[k]) / self.h[k];
            let cell = (s.floor() as i64).clamp(0, self.counts[k] as i64);
            base[k] = cell;
            frac[k] = s - cell as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut idx = 0usize;
            let mut inside = true;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                weight *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                // extended index e maps to interior index e-1
                let e = base[k] + bit as i64;
                if e < 1 || e > self.counts[k] as i64 {
                    inside = false;
                } else {
                    idx += (e as usize - 1) * self.strides[k];
                }
            }
            if inside && weight != 0.0 {
                acc += weight * u[idx];
            }
        }
        Some(acc)
    }

    /// Interior node count halved per axis: every coarse node is a fine node.
    pub fn is_refinement_of(&self, coarse: &SpatialGrid) -> bool {
        self.dim() == coarse.dim()
            && self.lo == coarse.lo
            && self.hi == coarse.hi
            && self
                .counts
                .iter()
                .zip(&coarse.counts)
                .all(|(&f, &c)| f + 1 == 2 * (c + 1))
    }

    /// Restrict a field on a refinement of `self` to the nodes of `self`.
    pub fn restrict_from(&self, fine: &SpatialGrid, u: &[f64]) -> Result<Field> {
        if !fine.is_refinement_of(self) {
            return Err(Error::InvalidInput("grid is not a dyadic refinement".into()));
        }
        let data = (0..self.len)
            .map(|idx| {
                let mi: Vec<usize> = self.multi_index(idx).iter().map(|i| 2 * i + 1).collect();
                u[fine.index(&mi)]
            })
            .collect();
        Ok(Field(data))
    }
}

fn row_major_strides(counts: &[usize]) -> Vec<usize> {
    let d = counts.len();
    let mut s = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        s[k] = s[k + 1] * counts[k + 1];
    }
    s
}

fn decompose(mut idx: usize, strides: &[usize], out: &mut [usize]) {
    for (k, s) in strides.iter().enumerate() {
        out[k] = idx / s;
        idx %= s;
    }
}

/// Real values on the interior nodes of a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn zeros(len: usize) -> Self {
        Field(vec![0.0; len])
    }

    pub fn constant(len: usize, c: f64) -> Self {
        Field(vec![c; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Cell-volume weighted inner product.
    pub fn inner(&self, other: &[f64], grid: &SpatialGrid) -> f64 {
        dot(&self.0, other) * grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        Field(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Field {
        Field(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> Field {
        Field(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Per-node array of fields at one tree level.
pub type NodeField = Vec<Field>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SpatialGrid::uniform_1d(0.0, 1.0, 1).is_err());
        assert!(SpatialGrid::uniform_1d(1.0, 0.0, 5).is_err());
        assert!(SpatialGrid::new(&[(0.0, 1.0)], &[3, 3]).is_err());
    }

    #[test]
    fn coordinates_and_indices() {
        let g = SpatialGrid::new(&[(0.0, 1.0), (-1.0, 1.0)], &[3, 4]).unwrap();
        assert_eq!(g.len(), 12);
        assert!((g.spacing()[0] - 0.25).abs() < 1e-15);
        assert!((g.spacing()[1] - 0.4).abs() < 1e-15);
        let idx = g.index(&[2, 1]);
        assert_eq!(g.multi_index(idx), vec![2, 1]);
        let x = g.point(idx);
        assert!((x[0] - 0.75).abs() < 1e-15 && (x[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_zero_boundary() {
        let g = SpatialGrid::uniform_1d(0.0, 1.0, 7).unwrap();
        let u = g.sample(|x| x[0] * (1.0 - x[0]));
        for i in 0..7 {
            let x = g.coord(0, i);
            assert!((g.interpolate(&u, &[x]).unwrap() - u[i]).abs() < 1e-14);
        }
        assert_eq!(g.interpolate(&u, &[0.0]).unwrap(), 0.0);
        assert_eq!(g.interpolate(&u, &[1.0]).unwrap(), 0.0);
        assert!(g.interpolate(&u, &[1.01]).is_none());
        // linear between nodes
        let mid = 0.5 * (g.coord(0, 2) + g.coord(0, 3));
        let expect = 0.5 * (u[2] + u[3]);
        assert!((g.interpolate(&u, &[mid]).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn bilinear_interpolation_is_exact_for_bilinear_data_inside() {
        let g = SpatialGrid::new(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5]).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1];
        let u = g.sample(f);
        let p = [0.4, 0.55];
        assert!((g.interpolate(&u, &p).unwrap() - f(&p)).abs() < 1e-13);
    }

    #[test]
    fn restriction_picks_shared_nodes() {
        let coarse = SpatialGrid::uniform_1d(0.0, 1.0, 3).unwrap();
        let fine = SpatialGrid::uniform_1d(0.0, 1.0, 7).unwrap();
        let u = fine.sample(|x| x[0]);
        let r = coarse.restrict_from(&fine, &u).unwrap();
        for i in 0..3 {
            assert!((r[i] - coarse.coord(0, i)).abs() < 1e-15);
        }
    }
}
