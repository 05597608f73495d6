//! Branching models of Wiener increments with exact conditional expectations.
//!
//! Every edge carries the increment `ΔW^r = ±√Δt` per coordinate, one sign
//! bit per coordinate, and probability `1/2^m`. Non-recombining trees index
//! the children of node `i` as `i·b + c`. The recombining binomial lattice
//! (`m = 1` only) maps node `j` (number of up moves) to `j` and `j + 1`.

mod joint;
mod paths;

pub use joint::JointTree;
pub use paths::{sample_joint_paths, PathSet};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::par::{self, Exec};

/// Default cap on the total number of tree nodes.
pub const DEFAULT_NODE_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTree {
    m: usize,
    steps: usize,
    horizon: f64,
    dt: f64,
    recombining: bool,
    level_sizes: Vec<usize>,
    node_probs: Vec<Vec<f64>>,
}

/// Output of [`NoiseTree::martingale_projection`].
#[derive(Debug, Clone)]
pub struct MartingaleProjection {
    /// `v[node][r]`
    pub v: Vec<Vec<Field>>,
    /// Root-mean-square (over grid points) norm of the unexplained increment, per node.
    pub residual: Vec<f64>,
}

impl NoiseTree {
    pub fn build(m: usize, steps: usize, horizon: f64, recombine: bool) -> Result<Self> {
        Self::build_with_budget(m, steps, horizon, recombine, DEFAULT_NODE_BUDGET)
    }

    pub fn build_with_budget(
        m: usize,
        steps: usize,
        horizon: f64,
        recombine: bool,
        budget: usize,
    ) -> Result<Self> {
        if m == 0 || steps == 0 {
            return Err(Error::InvalidInput("noise tree needs m >= 1 and at least one step".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        if recombine && m != 1 {
            return Err(Error::InvalidInput("recombination is only available for m = 1".into()));
        }
        if m > 16 {
            return Err(Error::Budget { requested: usize::MAX, limit: budget });
        }
        let b = 1usize << m;
        let mut level_sizes = Vec::with_capacity(steps + 1);
        let mut total = 0usize;
        for k in 0..=steps {
            let size = if recombine {
                Some(k + 1)
            } else {
                b.checked_pow(k as u32)
            };
            let size = size.ok_or(Error::Budget { requested: usize::MAX, limit: budget })?;
            total = total.saturating_add(size);
            if total > budget {
                return Err(Error::Budget { requested: total, limit: budget });
            }
            level_sizes.push(size);
        }
        let node_probs = level_sizes
            .iter()
            .enumerate()
            .map(|(k, &size)| {
                if recombine {
                    binomial_probs(k)
                } else {
                    vec![1.0 / size as f64; size]
                }
            })
            .collect();
        Ok(Self {
            m,
            steps,
            horizon,
            dt: horizon / steps as f64,
            recombining: recombine,
            level_sizes,
            node_probs,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn is_recombining(&self) -> bool {
        self.recombining
    }

    /// Number of edges leaving every non-terminal node.
    pub fn branching(&self) -> usize {
        1 << self.m
    }

    pub fn level_size(&self, k: usize) -> usize {
        self.level_sizes[k]
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn total_nodes(&self) -> usize {
        self.level_sizes.iter().sum()
    }

    /// Unconditional probability of reaching node `idx` at level `k`.
    pub fn node_prob(&self, k: usize, idx: usize) -> f64 {
        self.node_probs[k][idx]
    }

    pub fn node_probs(&self, k: usize) -> &[f64] {
        &self.node_probs[k]
    }

    pub fn edge_prob(&self) -> f64 {
        1.0 / self.branching() as f64
    }

    /// Child reached from `idx` at level `k` along `branch`.
    pub fn child(&self, idx: usize, branch: usize) -> usize {
        if self.recombining {
            idx + branch
        } else {
            idx * self.branching() + branch
        }
    }

    /// `+1` or `-1`: the sign of coordinate `r` on edges labelled `branch`.
    pub fn sign(branch: usize, r: usize) -> f64 {
        if (branch >> r) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn increment(&self, branch: usize, r: usize) -> f64 {
        Self::sign(branch, r) * self.dt.sqrt()
    }

    /// Ancestor at level `j <= k` (non-recombining trees only).
    pub fn ancestor(&self, k: usize, idx: usize, j: usize) -> usize {
        debug_assert!(!self.recombining && j <= k);
        idx / self.branching().pow((k - j) as u32)
    }

    /// Branch labels along the path from the root to `idx` at level `k`
    /// (non-recombining trees only).
    pub fn path_branches(&self, k: usize, idx: usize) -> Vec<usize> {
        let b = self.branching();
        let mut out = vec![0; k];
        let mut rest = idx;
        for s in (0..k).rev() {
            out[s] = rest % b;
            rest /= b;
        }
        out
    }

    /// Value of the discrete Wiener process `W_{t_k}` at a node.
    pub fn position(&self, k: usize, idx: usize) -> Vec<f64> {
        let sq = self.dt.sqrt();
        if self.recombining {
            return vec![(2.0 * idx as f64 - k as f64) * sq];
        }
        let mut w = vec![0.0; self.m];
        for br in self.path_branches(k, idx) {
            for (r, wr) in w.iter_mut().enumerate() {
                *wr += Self::sign(br, r) * sq;
            }
        }
        w
    }

    fn check_level(&self, k: usize, got: usize) -> Result<()> {
        if k >= self.steps {
            return Err(Error::InvalidInput(format!("level {k} has no children (steps = {})", self.steps)));
        }
        let expected = self.level_sizes[k + 1];
        if got != expected {
            return Err(Error::LevelMismatch { expected, got });
        }
        Ok(())
    }

    /// Scalar conditional expectation from level `k + 1` to level `k`.
    pub fn cond_expect_scalar(&self, k: usize, child: &[f64]) -> Result<Vec<f64>> {
        self.check_level(k, child.len())?;
        let b = self.branching();
        let p = self.edge_prob();
        Ok((0..self.level_sizes[k])
            .map(|i| (0..b).map(|c| child[self.child(i, c)]).sum::<f64>() * p)
            .collect())
    }

    pub fn cond_expect(&self, k: usize, child: &[Field]) -> Result<Vec<Field>> {
        self.cond_expect_with(Exec::default(), k, child)
    }

    pub fn cond_expect_with(&self, exec: Exec, k: usize, child: &[Field]) -> Result<Vec<Field>> {
        self.check_level(k, child.len())?;
        Ok(par::map_indices(exec, self.level_sizes[k], |i| self.node_expect(i, child)))
    }

    /// `E[child | node i]` for one parent.
    pub fn node_expect(&self, i: usize, child: &[Field]) -> Field {
        let b = self.branching();
        let p = self.edge_prob();
        let mut acc = Field::zeros(child[self.child(i, 0)].len());
        for c in 0..b {
            acc.axpy(p, &child[self.child(i, c)]);
        }
        acc
    }

    /// `v^r = E[child·ΔW^r | node]/Δt` for one parent.
    pub fn node_projection(&self, i: usize, child: &[Field]) -> Vec<Field> {
        let b = self.branching();
        let scale = self.edge_prob() / self.dt.sqrt();
        let len = child[self.child(i, 0)].len();
        (0..self.m)
            .map(|r| {
                let mut acc = Field::zeros(len);
                for c in 0..b {
                    acc.axpy(Self::sign(c, r) * scale, &child[self.child(i, c)]);
                }
                acc
            })
            .collect()
    }

    pub fn martingale_projection(&self, k: usize, child: &[Field]) -> Result<MartingaleProjection> {
        self.martingale_projection_with(Exec::default(), k, child)
    }

    pub fn martingale_projection_with(
        &self,
        exec: Exec,
        k: usize,
        child: &[Field],
    ) -> Result<MartingaleProjection> {
        self.check_level(k, child.len())?;
        let per_node = par::map_indices(exec, self.level_sizes[k], |i| {
            let mean = self.node_expect(i, child);
            let v = self.node_projection(i, child);
            let residual = self.node_residual(i, child, &mean, &v);
            (v, residual)
        });
        let (v, residual) = per_node.into_iter().unzip();
        Ok(MartingaleProjection { v, residual })
    }

    /// RMS norm of `child - E[child] - Σ_r v^r ΔW^r` over the children of node `i`.
    pub fn node_residual(&self, i: usize, child: &[Field], mean: &[f64], v: &[Field]) -> f64 {
        let b = self.branching();
        let len = mean.len().max(1);
        let mut acc = 0.0;
        for c in 0..b {
            let ch = &child[self.child(i, c)];
            for p in 0..mean.len() {
                let mut r = ch[p] - mean[p];
                for (rr, vr) in v.iter().enumerate() {
                    r -= vr[p] * self.increment(c, rr);
                }
                acc += r * r;
            }
        }
        (acc * self.edge_prob() / len as f64).sqrt()
    }

    /// Unconditional expectation of a per-node scalar at level `k`.
    pub fn expectation(&self, k: usize, values: &[f64]) -> f64 {
        values.iter().zip(&self.node_probs[k]).map(|(v, p)| v * p).sum()
    }
}

fn binomial_probs(k: usize) -> Vec<f64> {
    // Pascal's triangle scaled by 1/2 per row keeps everything in [0, 1].
    let mut row = vec![1.0];
    for _ in 0..k {
        let mut next = vec![0.0; row.len() + 1];
        for (j, p) in row.iter().enumerate() {
            next[j] += 0.5 * p;
            next[j + 1] += 0.5 * p;
        }
        row = next;
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_fields(v: &[f64]) -> Vec<Field> {
        v.iter().map(|&x| Field(vec![x])).collect()
    }

    #[test]
    fn level_sizes() {
        let t = NoiseTree::build(1, 2, 1.0, false).unwrap();
        assert_eq!(t.level_sizes(), &[1, 2, 4]);
        let t = NoiseTree::build(1, 3, 1.0, true).unwrap();
        assert_eq!(t.level_sizes(), &[1, 2, 3, 4]);
        let t = NoiseTree::build(2, 1, 1.0, false).unwrap();
        assert_eq!(t.level_sizes(), &[1, 4]);
        assert!(NoiseTree::build(2, 3, 1.0, true).is_err());
        assert!(matches!(
            NoiseTree::build_with_budget(2, 10, 1.0, false, 1000),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn two_dimensional_increments_cover_all_sign_pairs() {
        let t = NoiseTree::build(2, 1, 0.25, false).unwrap();
        let mut seen: Vec<(f64, f64)> = (0..4).map(|c| (t.increment(c, 0), t.increment(c, 1))).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, vec![(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]);
    }

    #[test]
    fn conditional_expectation_examples() {
        let t = NoiseTree::build(1, 1, 1.0, false).unwrap();
        let e = t.cond_expect(0, &scalar_fields(&[3.0, -3.0])).unwrap();
        assert_eq!(e[0][0], 0.0);
        let e = t.cond_expect(0, &scalar_fields(&[1.0, 3.0])).unwrap();
        assert_eq!(e[0][0], 2.0);
        let e = t.cond_expect(0, &scalar_fields(&[7.0, 7.0])).unwrap();
        assert_eq!(e[0][0], 7.0);
        assert!(matches!(
            t.cond_expect(0, &scalar_fields(&[1.0])),
            Err(Error::LevelMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn projection_recovers_linear_increment() {
        let t = NoiseTree::build(1, 1, 0.5, false).unwrap();
        let c = 2.5;
        let child: Vec<Field> = (0..2).map(|b| Field(vec![c * t.increment(b, 0)])).collect();
        let p = t.martingale_projection(0, &child).unwrap();
        assert!((p.v[0][0][0] - c).abs() < 1e-14);
        assert!(p.residual[0] < 1e-14);
        let p = t.martingale_projection(0, &scalar_fields(&[4.0, 4.0])).unwrap();
        assert_eq!(p.v[0][0][0], 0.0);
    }

    #[test]
    fn product_of_increments_is_orthogonal_to_both() {
        let dt = 0.25;
        let t = NoiseTree::build(2, 1, dt, false).unwrap();
        let child: Vec<Field> = (0..4)
            .map(|c| Field(vec![t.increment(c, 0) * t.increment(c, 1) / dt.sqrt()]))
            .collect();
        let p = t.martingale_projection(0, &child).unwrap();
        assert!(p.v[0][0][0].abs() < 1e-15 && p.v[0][1][0].abs() < 1e-15);
        assert!((p.residual[0] - dt.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn recombining_positions_and_probabilities() {
        let t = NoiseTree::build(1, 4, 4.0, true).unwrap();
        assert_eq!(t.node_probs(2), &[0.25, 0.5, 0.25]);
        assert_eq!(t.position(3, 0), vec![-3.0]);
        assert_eq!(t.position(3, 2), vec![1.0]);
        let ew: f64 = t.expectation(4, &(0..5).map(|j| t.position(4, j)[0]).collect::<Vec<_>>());
        assert!(ew.abs() < 1e-15);
    }

    #[test]
    fn non_recombining_positions_follow_branches() {
        let t = NoiseTree::build(1, 2, 2.0, false).unwrap();
        // idx 2 = branches [1, 0]: up then down
        assert_eq!(t.path_branches(2, 2), vec![1, 0]);
        assert_eq!(t.position(2, 2), vec![0.0]);
        assert_eq!(t.ancestor(2, 3, 1), 1);
    }
}
