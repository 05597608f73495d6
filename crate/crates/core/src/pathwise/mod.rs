//! Reflected BSDEs along the characteristics `X = x + √2·B` on a joint
//! `W ⊗ B` lattice, the matching optimal stopping problem, and checks of
//! both against a grid solution.
//!
//! Only the linear setting is covered: `a = I`, `σ = 0` and data `f̄`, `ḡ`
//! that do not depend on the solution. The two-sided integral `∫ ḡ ∗ dB` is
//! discretized per step as `ΔB · (ḡ(t_k, X_k) + ḡ(t_{k+1}, X_{k+1}))`.

mod equivalence;
mod stopping;

pub use equivalence::{equivalence_residual, measure_pushforward, EquivalenceOptions, EquivalenceReport, EquivalenceRow, PushforwardReport};
pub use stopping::{brute_force_stopping, policy_count, StoppingOutcome, StoppingPolicy, DEFAULT_POLICY_BUDGET};

use crate::error::{Error, Result};
use crate::lattice::{JointTree, NoiseTree};
use crate::par::{map_indices, Exec};
use crate::problem::{MatrixCoef, NodeCtx, Point, ProblemSpec, State};

/// Exhaustive searches refuse joint trees larger than this.
pub const EXHAUSTIVE_NODE_GUARD: usize = 10_000;

/// Data of the linear problem sampled at every joint node for one start point.
#[derive(Debug, Clone)]
pub struct CharacteristicData {
    pub x: Vec<f64>,
    pub dt: f64,
    /// `ξ(t_k, X_k)`; `-∞` without an obstacle.
    pub obstacle: Vec<Vec<f64>>,
    /// `f̄(t_k, X_k)` for levels `0..N`.
    pub drift: Vec<Vec<f64>>,
    /// `ḡ(t_k, X_k)` flattened with stride `d`, levels `0..=N`.
    pub flux: Vec<Vec<f64>>,
    /// `G(X_N)` on the last level.
    pub terminal: Vec<f64>,
    d: usize,
}

/// Reject problems outside the linear characteristic setting.
pub fn check_linear_setting(spec: &ProblemSpec) -> Result<()> {
    if !matches!(spec.a, MatrixCoef::Identity) {
        return Err(Error::InvalidInput("the pathwise solver needs a = I".into()));
    }
    if !spec.sigma.is_zero() {
        return Err(Error::InvalidInput("the pathwise solver needs sigma = 0".into()));
    }
    if spec.is_state_dependent() {
        return Err(Error::InvalidInput("the pathwise solver needs f and g independent of (u, grad u, v)".into()));
    }
    Ok(())
}

fn check_tree(spec: &ProblemSpec, tree: &JointTree) -> Result<()> {
    if tree.w().noise_dim() != spec.m || tree.b().noise_dim() != spec.d {
        return Err(Error::InvalidInput(format!(
            "joint tree has (m, d) = ({}, {}), problem has ({}, {})",
            tree.w().noise_dim(),
            tree.b().noise_dim(),
            spec.m,
            spec.d
        )));
    }
    if (tree.w().horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::InvalidInput("joint tree and problem horizons differ".into()));
    }
    Ok(())
}

impl CharacteristicData {
    /// Sample the data along `x + √2·B` at every joint node. Coefficients are
    /// evaluated off the spatial box as well; they are taken to be defined on `ℝ^d`.
    pub fn sample(spec: &ProblemSpec, tree: &JointTree, x: &[f64], exec: Exec) -> Result<Self> {
        check_linear_setting(spec)?;
        check_tree(spec, tree)?;
        if x.len() != spec.d {
            return Err(Error::InvalidInput(format!("start point has {} coordinates, expected {}", x.len(), spec.d)));
        }
        let n = tree.steps();
        let d = spec.d;
        let zero_grad = vec![0.0; d];
        let zero_z = vec![0.0; spec.m];
        let state = State { value: 0.0, grad: &zero_grad, z: &zero_z };

        let mut obstacle = Vec::with_capacity(n + 1);
        let mut drift = Vec::with_capacity(n);
        let mut flux = Vec::with_capacity(n + 1);
        let mut terminal = Vec::new();
        for k in 0..=n {
            let t = tree.time(k);
            let rows: Vec<Result<(f64, f64, Vec<f64>, f64)>> = map_indices(exec, tree.level_size(k), |idx| {
                let (iw, ib) = tree.split(k, idx);
                let ctx = NodeCtx::new(tree.w(), k, iw);
                let xk = characteristic(x, &tree.b().position(k, ib));
                let p = Point { t, x: &xk, node: &ctx };
                let xi = spec.obstacle.as_ref().map_or(f64::NEG_INFINITY, |o| o(&p));
                let fv = if k < n { spec.f.eval(&p, &state) } else { 0.0 };
                let mut gv = vec![0.0; d];
                spec.g.eval(&p, &state, &mut gv);
                let gt = if k == n { (spec.terminal)(&p) } else { 0.0 };
                let bad = xi.is_nan() || xi == f64::INFINITY || !fv.is_finite() || !gt.is_finite() || gv.iter().any(|c| !c.is_finite());
                if bad {
                    return Err(Error::NonFinite { what: "characteristic data".into(), t, x: xk, level: k, node: idx });
                }
                Ok((xi, fv, gv, gt))
            });
            let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
            obstacle.push(rows.iter().map(|r| r.0).collect());
            if k < n {
                drift.push(rows.iter().map(|r| r.1).collect());
            } else {
                terminal = rows.iter().map(|r| r.3).collect();
            }
            flux.push(rows.iter().flat_map(|r| r.2.iter().copied()).collect());
        }
        Ok(Self { x: x.to_vec(), dt: tree.dt(), obstacle, drift, flux, terminal, d })
    }

    pub fn steps(&self) -> usize {
        self.drift.len()
    }

    fn flux_at(&self, k: usize, idx: usize) -> &[f64] {
        &self.flux[k][idx * self.d..(idx + 1) * self.d]
    }

    /// Running reward on the edge from `(k, idx)` to its child `c` reached by B branch `cb`:
    /// `Δt f̄ + (1/√2)(ḡ_k + ḡ_{k+1}) · ΔB`.
    pub fn edge_reward(&self, k: usize, idx: usize, c: usize, cb: usize) -> f64 {
        let sq = self.dt.sqrt();
        let ga = self.flux_at(k, idx);
        let gb = self.flux_at(k + 1, c);
        let dot: f64 = (0..self.d).map(|r| (ga[r] + gb[r]) * NoiseTree::sign(cb, r) * sq).sum();
        self.dt * self.drift[k][idx] + dot / std::f64::consts::SQRT_2
    }
}

/// `x + √2·b`.
pub fn characteristic(x: &[f64], b: &[f64]) -> Vec<f64> {
    x.iter().zip(b).map(|(xi, bi)| xi + std::f64::consts::SQRT_2 * bi).collect()
}

/// `(Y, Z, Z̃, ΔK)` for one start point, indexed `[level][joint node]`.
#[derive(Debug, Clone)]
pub struct RbsdeSolution {
    pub x: Vec<f64>,
    pub dt: f64,
    pub y: Vec<Vec<f64>>,
    /// `Z ∈ ℝ^m` for levels `0..N`.
    pub z: Vec<Vec<Vec<f64>>>,
    /// `Z̃ ∈ ℝ^d` for levels `0..N`.
    pub z_tilde: Vec<Vec<Vec<f64>>>,
    /// Reflection pushed in on `[t_k, t_{k+1}]`, levels `0..N`.
    pub dk: Vec<Vec<f64>>,
    /// `ξ ∘ X` copied from the data, levels `0..=N`.
    pub obstacle: Vec<Vec<f64>>,
}

impl RbsdeSolution {
    pub fn root(&self) -> f64 {
        self.y[0][0]
    }

    pub fn steps(&self) -> usize {
        self.dk.len()
    }

    /// `K(t_0..t_N)` along the path with the given branch labels; `K(0) = 0`.
    pub fn k_along(&self, tree: &JointTree, w_branches: &[u32], b_branches: &[u32]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps() + 1);
        let (mut iw, mut ib) = (0usize, 0usize);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..self.steps() {
            acc += self.dk[k][tree.join(k, iw, ib)];
            out.push(acc);
            iw = tree.w().child(iw, w_branches[k] as usize);
            ib = tree.b().child(ib, b_branches[k] as usize);
        }
        out
    }

    /// `min (Y - ξ∘X)` over levels `0..N`.
    pub fn min_gap(&self) -> f64 {
        self.y
            .iter()
            .zip(&self.obstacle)
            .take(self.steps())
            .flat_map(|(y, o)| y.iter().zip(o).map(|(a, b)| a - b))
            .fold(f64::INFINITY, f64::min)
    }

    /// `max |(Y - ξ∘X) ΔK|` over all nodes.
    pub fn skorohod_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.steps() {
            for (i, dk) in self.dk[k].iter().enumerate() {
                if *dk > 0.0 {
                    worst = worst.max(((self.y[k][i] - self.obstacle[k][i]) * dk).abs());
                }
            }
        }
        worst
    }

    /// `E[K(T)]`.
    pub fn expected_total_reflection(&self, tree: &JointTree) -> f64 {
        (0..self.steps())
            .map(|k| self.dk[k].iter().enumerate().map(|(i, dk)| tree.node_prob(k, i) * dk).sum::<f64>())
            .sum()
    }
}

/// Backward reflected recursion on the joint tree.
///
/// `Y_N = G(X_N)`; below, `Y_k = max(ξ_k, E[Y_{k+1}] + Δt f̄_k + (1/√2) E[(ḡ_k + ḡ_{k+1}) · ΔB])`,
/// `ΔK_k` is what the maximum added, and `(Z, Z̃)` project `Y_{k+1}` onto `(ΔW, ΔB)`.
pub fn solve_reflected_bsde(data: &CharacteristicData, tree: &JointTree, exec: Exec) -> Result<RbsdeSolution> {
    let n = tree.steps();
    if data.steps() != n {
        return Err(Error::LevelMismatch { expected: n, got: data.steps() });
    }
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut z_tilde = vec![Vec::new(); n];
    let mut dk = vec![Vec::new(); n];
    y[n] = data.terminal.clone();
    let p = tree.edge_prob();
    let sq = data.dt.sqrt();
    for k in (0..n).rev() {
        let next = &y[k + 1];
        let rows = map_indices(exec, tree.level_size(k), |idx| {
            let ga = data.flux_at(k, idx);
            let mut mean = 0.0;
            let mut corr = 0.0;
            for (c, _, cb) in tree.children(k, idx) {
                mean += next[c];
                let gb = data.flux_at(k + 1, c);
                for r in 0..data.d {
                    corr += (ga[r] + gb[r]) * NoiseTree::sign(cb, r) * sq;
                }
            }
            let cont = p * mean + data.dt * data.drift[k][idx] + p * corr / std::f64::consts::SQRT_2;
            let xi = data.obstacle[k][idx];
            let (yk, push) = if xi > cont { (xi, xi - cont) } else { (cont, 0.0) };
            let (zw, zb) = tree.project_node(k, idx, next);
            (yk, push, zw, zb)
        });
        let mut yk = Vec::with_capacity(rows.len());
        for (a, b, zw, zb) in rows {
            yk.push(a);
            dk[k].push(b);
            z[k].push(zw);
            z_tilde[k].push(zb);
        }
        y[k] = yk;
    }
    Ok(RbsdeSolution { x: data.x.clone(), dt: data.dt, y, z, z_tilde, dk, obstacle: data.obstacle.clone() })
}

/// Snell envelope of the reward `A_τ + ξ_τ 1{τ<T} + G 1{τ=T}` with running
/// part `A` built from [`CharacteristicData::edge_reward`], returned as the
/// value to go `V_k = ess sup E[R_τ | node] - A_k` per `[level][node]`.
pub fn snell_value(data: &CharacteristicData, tree: &JointTree) -> Result<Vec<Vec<f64>>> {
    let n = tree.steps();
    if data.steps() != n {
        return Err(Error::LevelMismatch { expected: n, got: data.steps() });
    }
    let mut v = vec![Vec::new(); n + 1];
    v[n] = data.terminal.clone();
    let p = tree.edge_prob();
    for k in (0..n).rev() {
        v[k] = (0..tree.level_size(k))
            .map(|idx| {
                let hold: f64 = tree
                    .children(k, idx)
                    .map(|(c, _, cb)| p * (v[k + 1][c] + data.edge_reward(k, idx, c, cb)))
                    .sum();
                data.obstacle[k][idx].max(hold)
            })
            .collect();
    }
    Ok(v)
}
