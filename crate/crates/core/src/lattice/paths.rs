//! Seeded Monte Carlo paths of ±√Δt increments for `(W, B)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NoiseTree;
use crate::error::{Error, Result};

/// Sampled branch labels; increments are `±√Δt` per coordinate bit.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    m: usize,
    d: usize,
    steps: usize,
    dt: f64,
    w_branch: Vec<u32>,
    b_branch: Vec<u32>,
}

/// `count` independent paths. `W` and `B` draw from separate ChaCha streams
/// of the same seed, so adding coordinates to one driver never shifts the other.
pub fn sample_joint_paths(
    m: usize,
    d: usize,
    steps: usize,
    horizon: f64,
    count: usize,
    seed: u64,
) -> Result<PathSet> {
    if count == 0 || steps == 0 || m == 0 || d == 0 || m > 31 || d > 31 {
        return Err(Error::InvalidInput(format!(
            "path sampling needs positive count/steps/dimensions, got count={count} steps={steps} m={m} d={d}"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let total = count
        .checked_mul(steps)
        .filter(|&n| n <= super::DEFAULT_NODE_BUDGET * 8)
        .ok_or(Error::Budget {
            requested: count.saturating_mul(steps),
            limit: super::DEFAULT_NODE_BUDGET * 8,
        })?;
    let mut rw = ChaCha8Rng::seed_from_u64(seed);
    rw.set_stream(1);
    let mut rb = ChaCha8Rng::seed_from_u64(seed);
    rb.set_stream(2);
    let mw = (1u32 << m) - 1;
    let mb = (1u32 << d) - 1;
    let w_branch = (0..total).map(|_| rw.gen::<u32>() & mw).collect();
    let b_branch = (0..total).map(|_| rb.gen::<u32>() & mb).collect();
    Ok(PathSet {
        m,
        d,
        steps,
        dt: horizon / steps as f64,
        w_branch,
        b_branch,
    })
}

impl PathSet {
    pub fn count(&self) -> usize {
        self.w_branch.len() / self.steps
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn w_branches(&self, path: usize) -> &[u32] {
        &self.w_branch[path * self.steps..(path + 1) * self.steps]
    }

    pub fn b_branches(&self, path: usize) -> &[u32] {
        &self.b_branch[path * self.steps..(path + 1) * self.steps]
    }

    pub fn dw(&self, path: usize, step: usize, r: usize) -> f64 {
        NoiseTree::sign(self.w_branches(path)[step] as usize, r) * self.dt.sqrt()
    }

    pub fn db(&self, path: usize, step: usize, r: usize) -> f64 {
        NoiseTree::sign(self.b_branches(path)[step] as usize, r) * self.dt.sqrt()
    }

    /// Columns `path,step,dW1..dWm,dB1..dBd`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["path".to_string(), "step".to_string()];
        header.extend((1..=self.m).map(|r| format!("dW{r}")));
        header.extend((1..=self.d).map(|r| format!("dB{r}")));
        w.write_record(&header)?;
        for p in 0..self.count() {
            for s in 0..self.steps {
                let mut row = vec![p.to_string(), s.to_string()];
                row.extend((0..self.m).map(|r| self.dw(p, s, r).to_string()));
                row.extend((0..self.d).map(|r| self.db(p, s, r).to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
