//! Product lattice of two independent drivers `W` (dimension m) and `B`
//! (dimension d) sharing one time grid.

use super::NoiseTree;
use crate::error::{Error, Result};

/// Default depth limit for joint trees that do not recombine in both factors.
pub const DEFAULT_JOINT_DEPTH: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct JointTree {
    w: NoiseTree,
    b: NoiseTree,
}

impl JointTree {
    pub fn new(w: NoiseTree, b: NoiseTree) -> Result<Self> {
        Self::with_depth_limit(w, b, DEFAULT_JOINT_DEPTH)
    }

    /// `max_depth` applies only when one of the factors does not recombine.
    pub fn with_depth_limit(w: NoiseTree, b: NoiseTree, max_depth: usize) -> Result<Self> {
        if w.steps() != b.steps() || (w.horizon() - b.horizon()).abs() > 1e-15 * w.horizon() {
            return Err(Error::InvalidInput("joint tree factors must share the time grid".into()));
        }
        if !(w.is_recombining() && b.is_recombining()) && w.steps() > max_depth {
            return Err(Error::Budget { requested: w.steps(), limit: max_depth });
        }
        Ok(Self { w, b })
    }

    /// Convenience: both factors built with the same `steps`, `horizon` and recombination flag.
    pub fn build(m: usize, d: usize, steps: usize, horizon: f64, recombine: bool) -> Result<Self> {
        let w = NoiseTree::build(m, steps, horizon, recombine)?;
        let b = NoiseTree::build(d, steps, horizon, recombine)?;
        Self::new(w, b)
    }

    pub fn w(&self) -> &NoiseTree {
        &self.w
    }

    pub fn b(&self) -> &NoiseTree {
        &self.b
    }

    pub fn steps(&self) -> usize {
        self.w.steps()
    }

    pub fn dt(&self) -> f64 {
        self.w.dt()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.w.time(k)
    }

    pub fn level_size(&self, k: usize) -> usize {
        self.w.level_size(k) * self.b.level_size(k)
    }

    pub fn total_nodes(&self) -> usize {
        (0..=self.steps()).map(|k| self.level_size(k)).sum()
    }

    pub fn branching(&self) -> usize {
        self.w.branching() * self.b.branching()
    }

    pub fn edge_prob(&self) -> f64 {
        self.w.edge_prob() * self.b.edge_prob()
    }

    /// `(W node, B node)` of a joint node.
    pub fn split(&self, k: usize, idx: usize) -> (usize, usize) {
        let nb = self.b.level_size(k);
        (idx / nb, idx % nb)
    }

    pub fn join(&self, k: usize, iw: usize, ib: usize) -> usize {
        iw * self.b.level_size(k) + ib
    }

    pub fn node_prob(&self, k: usize, idx: usize) -> f64 {
        let (iw, ib) = self.split(k, idx);
        self.w.node_prob(k, iw) * self.b.node_prob(k, ib)
    }

    /// Children of `idx` at level `k` as `(child index, W branch, B branch)`.
    pub fn children(&self, k: usize, idx: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (iw, ib) = self.split(k, idx);
        let bw = self.w.branching();
        let bb = self.b.branching();
        (0..bw).flat_map(move |cw| {
            (0..bb).map(move |cb| (self.join(k + 1, self.w.child(iw, cw), self.b.child(ib, cb)), cw, cb))
        })
    }

    pub fn cond_expect_node(&self, k: usize, idx: usize, child: &[f64]) -> f64 {
        self.children(k, idx).map(|(c, _, _)| child[c]).sum::<f64>() * self.edge_prob()
    }

    pub fn cond_expect_scalar(&self, k: usize, child: &[f64]) -> Result<Vec<f64>> {
        self.check_level(k, child.len())?;
        Ok((0..self.level_size(k)).map(|i| self.cond_expect_node(k, i, child)).collect())
    }

    /// `(E[child·ΔW]/Δt, E[child·ΔB]/Δt)` at one node.
    pub fn project_node(&self, k: usize, idx: usize, child: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let scale = self.edge_prob() / self.dt().sqrt();
        let mut zw = vec![0.0; self.w.noise_dim()];
        let mut zb = vec![0.0; self.b.noise_dim()];
        for (c, cw, cb) in self.children(k, idx) {
            for (r, z) in zw.iter_mut().enumerate() {
                *z += NoiseTree::sign(cw, r) * child[c] * scale;
            }
            for (r, z) in zb.iter_mut().enumerate() {
                *z += NoiseTree::sign(cb, r) * child[c] * scale;
            }
        }
        (zw, zb)
    }

    fn check_level(&self, k: usize, got: usize) -> Result<()> {
        if k >= self.steps() {
            return Err(Error::InvalidInput(format!("level {k} has no children")));
        }
        let expected = self.level_size(k + 1);
        if got != expected {
            return Err(Error::LevelMismatch { expected, got });
        }
        Ok(())
    }
}
