//! Coefficients, data and structural constants of one problem instance.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{assemble_elliptic, Field, LinearOperator, SpatialGrid};
use crate::lattice::NoiseTree;

/// Position of a lattice node: its level, index within the level and the
/// value of the driving Wiener lattice there.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeCtx {
    pub level: usize,
    pub index: usize,
    pub w: Vec<f64>,
}

impl NodeCtx {
    pub fn new(tree: &NoiseTree, level: usize, index: usize) -> Self {
        Self {
            level,
            index,
            w: tree.position(level, index),
        }
    }

    /// Root node of a lattice with `m` driving coordinates.
    pub fn root(m: usize) -> Self {
        Self {
            level: 0,
            index: 0,
            w: vec![0.0; m],
        }
    }
}

/// Evaluation point `(t, x, node)`.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub node: &'a NodeCtx,
}

/// State arguments `(ϑ, y, z)` of `f` and `g`.
#[derive(Debug, Clone, Copy)]
pub struct State<'a> {
    pub value: f64,
    pub grad: &'a [f64],
    pub z: &'a [f64],
}

pub type MatrixFn = Arc<dyn Fn(&Point, &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(&Point, &State) -> f64 + Send + Sync>;
pub type FluxFn = Arc<dyn Fn(&Point, &State, &mut [f64]) + Send + Sync>;

/// Matrix-valued coefficient (`a` is `d×d`, `σ` is `d×m`, both row-major).
#[derive(Clone)]
pub enum MatrixCoef {
    Zero,
    Identity,
    Fn(MatrixFn),
}

impl MatrixCoef {
    pub fn from_fn<F: Fn(&Point, &mut [f64]) + Send + Sync + 'static>(f: F) -> Self {
        MatrixCoef::Fn(Arc::new(f))
    }

    /// `c·I`; square matrices only.
    pub fn scaled_identity(c: f64) -> Self {
        MatrixCoef::from_fn(move |_, out| fill_identity(out, c))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MatrixCoef::Zero)
    }

    pub fn eval(&self, p: &Point, out: &mut [f64]) {
        match self {
            MatrixCoef::Zero => out.fill(0.0),
            MatrixCoef::Identity => fill_identity(out, 1.0),
            MatrixCoef::Fn(f) => f(p, out),
        }
    }
}

fn fill_identity(out: &mut [f64], c: f64) {
    out.fill(0.0);
    let d = (out.len() as f64).sqrt().round() as usize;
    for i in 0..d {
        out[i * d + i] = c;
    }
}

impl fmt::Debug for MatrixCoef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixCoef::Zero => write!(f, "Zero"),
            MatrixCoef::Identity => write!(f, "Identity"),
            MatrixCoef::Fn(_) => write!(f, "Fn(..)"),
        }
    }
}

/// Scalar driver `f(t, x, node, ϑ, y, z)`.
#[derive(Clone, Default)]
pub struct Drift {
    func: Option<DriftFn>,
    state_dependent: bool,
}

impl Drift {
    pub fn zero() -> Self {
        Self::default()
    }

    /// A free term that ignores the state.
    pub fn source<F: Fn(&Point) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self {
            func: Some(Arc::new(move |p, _| f(p))),
            state_dependent: false,
        }
    }

    pub fn new<F: Fn(&Point, &State) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self {
            func: Some(Arc::new(f)),
            state_dependent: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.func.is_none()
    }

    pub fn is_state_dependent(&self) -> bool {
        self.state_dependent
    }

    pub fn eval(&self, p: &Point, s: &State) -> f64 {
        self.func.as_ref().map_or(0.0, |f| f(p, s))
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.func, self.state_dependent) {
            (None, _) => write!(f, "Drift::zero"),
            (Some(_), false) => write!(f, "Drift::source(..)"),
            (Some(_), true) => write!(f, "Drift::new(..)"),
        }
    }
}

/// Vector driver `g(t, x, node, ϑ, y, z) ∈ R^d` inside the divergence.
#[derive(Clone, Default)]
pub struct Flux {
    func: Option<FluxFn>,
    state_dependent: bool,
}

impl Flux {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn source<F: Fn(&Point, &mut [f64]) + Send + Sync + 'static>(f: F) -> Self {
        Self {
            func: Some(Arc::new(move |p, _, out| f(p, out))),
            state_dependent: false,
        }
    }

    pub fn new<F: Fn(&Point, &State, &mut [f64]) + Send + Sync + 'static>(f: F) -> Self {
        Self {
            func: Some(Arc::new(f)),
            state_dependent: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.func.is_none()
    }

    pub fn is_state_dependent(&self) -> bool {
        self.state_dependent
    }

    pub fn eval(&self, p: &Point, s: &State, out: &mut [f64]) {
        match &self.func {
            Some(f) => f(p, s, out),
            None => out.fill(0.0),
        }
    }
}

impl fmt::Debug for Flux {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.func, self.state_dependent) {
            (None, _) => write!(f, "Flux::zero"),
            (Some(_), false) => write!(f, "Flux::source(..)"),
            (Some(_), true) => write!(f, "Flux::new(..)"),
        }
    }
}

/// Structural constants declared for the instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    /// Lower ellipticity bound of `2a - ϱσσᵀ`.
    pub lambda: f64,
    /// Upper bound of `2a - ϱσσᵀ` and of `|a| + |σ|`.
    pub lambda_upper: f64,
    pub kappa: f64,
    pub beta: f64,
    pub rho: f64,
    pub lipschitz: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            lambda_upper: 2.0,
            kappa: 0.0,
            beta: 0.0,
            rho: 2.0,
            lipschitz: 1.0,
        }
    }
}

impl Constants {
    /// Conjugate exponent `ϱ' = ϱ/(ϱ-1)`.
    pub fn rho_prime(&self) -> f64 {
        self.rho / (self.rho - 1.0)
    }

    /// `λ - κ - ϱ'β`, which must be positive.
    pub fn margin(&self) -> f64 {
        self.lambda - self.kappa - self.rho_prime() * self.beta
    }
}

/// Which coefficient [`ProblemSpec::evaluate`] should return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    A,
    Sigma,
    F,
    G,
    Terminal,
    Obstacle,
    Dominating,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoefValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix { rows: usize, cols: usize, data: Vec<f64> },
}

/// An instance of the reflected problem on a box.
#[derive(Clone)]
pub struct ProblemSpec {
    pub d: usize,
    pub m: usize,
    pub horizon: f64,
    pub domain: Vec<(f64, f64)>,
    pub a: MatrixCoef,
    pub sigma: MatrixCoef,
    pub f: Drift,
    pub g: Flux,
    /// `G(x, terminal node)`, evaluated with `t = T`.
    pub terminal: ScalarFn,
    pub obstacle: Option<ScalarFn>,
    pub dominating: Option<ScalarFn>,
    pub constants: Constants,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("d", &self.d)
            .field("m", &self.m)
            .field("horizon", &self.horizon)
            .field("domain", &self.domain)
            .field("a", &self.a)
            .field("sigma", &self.sigma)
            .field("f", &self.f)
            .field("g", &self.g)
            .field("obstacle", &self.obstacle.is_some())
            .field("dominating", &self.dominating.is_some())
            .field("constants", &self.constants)
            .finish()
    }
}

impl ProblemSpec {
    /// Heat equation `a = I`, `σ = 0`, zero data, no obstacle.
    pub fn new(d: usize, m: usize, horizon: f64, domain: Vec<(f64, f64)>) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidInput("spatial and noise dimensions must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        if domain.len() != d || domain.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
            return Err(Error::InvalidInput(format!("domain must list {d} nonempty intervals")));
        }
        Ok(Self {
            d,
            m,
            horizon,
            domain,
            a: MatrixCoef::Identity,
            sigma: MatrixCoef::Zero,
            f: Drift::zero(),
            g: Flux::zero(),
            terminal: Arc::new(|_| 0.0),
            obstacle: None,
            dominating: None,
            constants: Constants::default(),
        })
    }

    pub fn with_a(mut self, a: MatrixCoef) -> Self {
        self.a = a;
        self
    }

    pub fn with_sigma(mut self, sigma: MatrixCoef) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_f(mut self, f: Drift) -> Self {
        self.f = f;
        self
    }

    pub fn with_g(mut self, g: Flux) -> Self {
        self.g = g;
        self
    }

    pub fn with_terminal<F: Fn(&Point) -> f64 + Send + Sync + 'static>(mut self, g: F) -> Self {
        self.terminal = Arc::new(g);
        self
    }

    pub fn with_obstacle<F: Fn(&Point) -> f64 + Send + Sync + 'static>(mut self, xi: F) -> Self {
        self.obstacle = Some(Arc::new(xi));
        self
    }

    pub fn without_obstacle(mut self) -> Self {
        self.obstacle = None;
        self
    }

    pub fn with_dominating<F: Fn(&Point) -> f64 + Send + Sync + 'static>(mut self, xi: F) -> Self {
        self.dominating = Some(Arc::new(xi));
        self
    }

    pub fn with_constants(mut self, c: Constants) -> Self {
        self.constants = c;
        self
    }

    /// True when `f` or `g` read the state arguments.
    pub fn is_state_dependent(&self) -> bool {
        self.f.is_state_dependent() || self.g.is_state_dependent()
    }

    /// Grid on the problem box with the given interior counts.
    pub fn grid(&self, counts: &[usize]) -> Result<SpatialGrid> {
        SpatialGrid::new(&self.domain, counts)
    }

    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        let tol = 1e-12 * self.horizon.max(1.0);
        t >= -tol
            && t <= self.horizon + tol
            && x.len() == self.d
            && x.iter().zip(&self.domain).all(|(&v, &(lo, hi))| {
                let s = 1e-12 * (hi - lo);
                v >= lo - s && v <= hi + s
            })
    }

    /// Evaluate one coefficient at a point, after a domain check.
    pub fn evaluate(
        &self,
        which: Coefficient,
        t: f64,
        x: &[f64],
        node: &NodeCtx,
        state: Option<State>,
    ) -> Result<CoefValue> {
        if !self.contains(t, x) {
            return Err(Error::OutOfDomain { t, x: x.to_vec() });
        }
        let p = Point { t, x, node };
        let zero_grad = vec![0.0; self.d];
        let zero_z = vec![0.0; self.m];
        let s = state.unwrap_or(State {
            value: 0.0,
            grad: &zero_grad,
            z: &zero_z,
        });
        let value = match which {
            Coefficient::A => {
                let mut data = vec![0.0; self.d * self.d];
                self.a.eval(&p, &mut data);
                CoefValue::Matrix { rows: self.d, cols: self.d, data }
            }
            Coefficient::Sigma => {
                let mut data = vec![0.0; self.d * self.m];
                self.sigma.eval(&p, &mut data);
                CoefValue::Matrix { rows: self.d, cols: self.m, data }
            }
            Coefficient::F => CoefValue::Scalar(self.f.eval(&p, &s)),
            Coefficient::G => {
                let mut out = vec![0.0; self.d];
                self.g.eval(&p, &s, &mut out);
                CoefValue::Vector(out)
            }
            Coefficient::Terminal => CoefValue::Scalar((self.terminal)(&Point { t: self.horizon, ..p })),
            Coefficient::Obstacle => match &self.obstacle {
                Some(xi) => CoefValue::Scalar(xi(&p)),
                None => return Err(Error::InvalidInput("no obstacle configured".into())),
            },
            Coefficient::Dominating => match &self.dominating {
                Some(xi) => CoefValue::Scalar(xi(&p)),
                None => return Err(Error::InvalidInput("no dominating field configured".into())),
            },
        };
        let finite = match &value {
            CoefValue::Scalar(v) => v.is_finite(),
            CoefValue::Vector(v) => v.iter().all(|c| c.is_finite()),
            CoefValue::Matrix { data, .. } => data.iter().all(|c| c.is_finite()),
        };
        if !finite {
            return Err(Error::NonFinite {
                what: format!("{which:?}"),
                t,
                x: x.to_vec(),
                level: node.level,
                node: node.index,
            });
        }
        Ok(value)
    }

    /// Sample a scalar field over the grid, failing on non-finite values.
    pub fn sample_scalar(
        &self,
        what: &str,
        func: &ScalarFn,
        grid: &SpatialGrid,
        t: f64,
        node: &NodeCtx,
    ) -> Result<Field> {
        let mut x = vec![0.0; grid.dim()];
        let mut out = Field::zeros(grid.len());
        for (idx, o) in out.iter_mut().enumerate() {
            grid.point_into(idx, &mut x);
            let v = func(&Point { t, x: &x, node });
            if !v.is_finite() {
                return Err(non_finite(what, t, &x, node));
            }
            *o = v;
        }
        Ok(out)
    }

    pub fn sample_terminal(&self, grid: &SpatialGrid, node: &NodeCtx) -> Result<Field> {
        self.sample_scalar("terminal", &self.terminal, grid, self.horizon, node)
    }

    pub fn sample_obstacle(&self, grid: &SpatialGrid, t: f64, node: &NodeCtx) -> Result<Option<Field>> {
        match &self.obstacle {
            Some(xi) => self.sample_scalar("obstacle", xi, grid, t, node).map(Some),
            None => Ok(None),
        }
    }

    /// `div(((1-θ)I + θa) ∇·)` at `(t, node)`.
    pub fn leading_operator(
        &self,
        grid: &SpatialGrid,
        t: f64,
        node: &NodeCtx,
        theta: f64,
    ) -> Result<LinearOperator> {
        if theta == 0.0 || matches!(self.a, MatrixCoef::Identity) {
            return Ok(LinearOperator::laplacian(grid));
        }
        let d = self.d;
        let mut bad: Option<Vec<f64>> = None;
        let op = assemble_elliptic(grid, |x, out| {
            self.a.eval(&Point { t, x, node }, out);
            if bad.is_none() && out.iter().any(|v| !v.is_finite()) {
                bad = Some(x.to_vec());
            }
            for v in out.iter_mut() {
                *v *= theta;
            }
            for i in 0..d {
                out[i * d + i] += 1.0 - theta;
            }
        });
        if let Some(x) = bad {
            return Err(non_finite("a", t, &x, node));
        }
        op
    }

    /// Node-centered `σ v` (d fields) at `(t, node)`.
    pub fn sigma_v(&self, grid: &SpatialGrid, t: f64, node: &NodeCtx, v: &[Field]) -> Result<Vec<Field>> {
        let (d, m) = (self.d, self.m);
        let mut out: Vec<Field> = (0..d).map(|_| Field::zeros(grid.len())).collect();
        if self.sigma.is_zero() {
            return Ok(out);
        }
        let mut x = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        for idx in 0..grid.len() {
            grid.point_into(idx, &mut x);
            self.sigma.eval(&Point { t, x: &x, node }, &mut s);
            for j in 0..d {
                let val: f64 = (0..m).map(|r| s[j * m + r] * v[r][idx]).sum();
                if !val.is_finite() {
                    return Err(non_finite("sigma", t, &x, node));
                }
                out[j][idx] = val;
            }
        }
        Ok(out)
    }

    /// `f(t, x, node, u, ∇u, v)` over the grid; `grad` is node-centered.
    pub fn drift_field(
        &self,
        grid: &SpatialGrid,
        t: f64,
        node: &NodeCtx,
        u: &[f64],
        grad: &[Field],
        v: &[Field],
    ) -> Result<Field> {
        let mut out = Field::zeros(grid.len());
        if self.f.is_zero() {
            return Ok(out);
        }
        let (d, m) = (self.d, self.m);
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut z = vec![0.0; m];
        for (idx, o) in out.iter_mut().enumerate() {
            grid.point_into(idx, &mut x);
            for k in 0..d {
                y[k] = grad.get(k).map_or(0.0, |g| g[idx]);
            }
            for r in 0..m {
                z[r] = v.get(r).map_or(0.0, |f| f[idx]);
            }
            let val = self.f.eval(
                &Point { t, x: &x, node },
                &State {
                    value: u.get(idx).copied().unwrap_or(0.0),
                    grad: &y,
                    z: &z,
                },
            );
            if !val.is_finite() {
                return Err(non_finite("f", t, &x, node));
            }
            *o = val;
        }
        Ok(out)
    }

    /// Node-centered `g(t, x, node, u, ∇u, v)` (d fields).
    pub fn flux_field(
        &self,
        grid: &SpatialGrid,
        t: f64,
        node: &NodeCtx,
        u: &[f64],
        grad: &[Field],
        v: &[Field],
    ) -> Result<Vec<Field>> {
        let (d, m) = (self.d, self.m);
        let mut out: Vec<Field> = (0..d).map(|_| Field::zeros(grid.len())).collect();
        if self.g.is_zero() {
            return Ok(out);
        }
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut z = vec![0.0; m];
        let mut gv = vec![0.0; d];
        for idx in 0..grid.len() {
            grid.point_into(idx, &mut x);
            for k in 0..d {
                y[k] = grad.get(k).map_or(0.0, |g| g[idx]);
            }
            for r in 0..m {
                z[r] = v.get(r).map_or(0.0, |f| f[idx]);
            }
            self.g.eval(
                &Point { t, x: &x, node },
                &State {
                    value: u.get(idx).copied().unwrap_or(0.0),
                    grad: &y,
                    z: &z,
                },
                &mut gv,
            );
            for k in 0..d {
                if !gv[k].is_finite() {
                    return Err(non_finite("g", t, &x, node));
                }
                out[k][idx] = gv[k];
            }
        }
        Ok(out)
    }
}

pub(crate) fn non_finite(what: &str, t: f64, x: &[f64], node: &NodeCtx) -> Error {
    Error::NonFinite {
        what: what.to_string(),
        t,
        x: x.to_vec(),
        level: node.level,
        node: node.index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat() -> ProblemSpec {
        ProblemSpec::new(2, 1, 1.0, vec![(0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn evaluate_identity_and_free_terms() {
        let node = NodeCtx::root(1);
        let spec = heat().with_f(Drift::new(|p, s| p.x[0] + 3.0 * s.value));
        let a = spec.evaluate(Coefficient::A, 0.5, &[0.5, 0.5], &node, None).unwrap();
        assert_eq!(a, CoefValue::Matrix { rows: 2, cols: 2, data: vec![1.0, 0.0, 0.0, 1.0] });
        let f0 = spec.evaluate(Coefficient::F, 0.5, &[0.25, 0.5], &node, None).unwrap();
        assert_eq!(f0, CoefValue::Scalar(0.25));
    }

    #[test]
    fn evaluate_linear_flux() {
        let kappa = 0.4;
        let spec = heat().with_g(Flux::new(move |_, s, out| {
            for (o, y) in out.iter_mut().zip(s.grad) {
                *o = 0.5 * kappa * y;
            }
        }));
        let node = NodeCtx::root(1);
        let st = State { value: 0.0, grad: &[1.0, 0.0], z: &[0.0] };
        let g = spec.evaluate(Coefficient::G, 0.0, &[0.1, 0.1], &node, Some(st)).unwrap();
        assert_eq!(g, CoefValue::Vector(vec![0.2, 0.0]));
    }

    #[test]
    fn evaluate_rejects_out_of_domain_and_non_finite() {
        let node = NodeCtx::root(1);
        let spec = heat().with_terminal(|p| 1.0 / (p.x[0] - 0.5));
        assert!(matches!(
            spec.evaluate(Coefficient::A, 1.5, &[0.5, 0.5], &node, None),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            spec.evaluate(Coefficient::A, 0.5, &[1.5, 0.5], &node, None),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            spec.evaluate(Coefficient::Terminal, 1.0, &[0.5, 0.5], &node, None),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn evaluate_is_pure() {
        let spec = heat().with_obstacle(|p| (p.x[0] * 7.0).sin() - p.t);
        let node = NodeCtx::root(1);
        let a = spec.evaluate(Coefficient::Obstacle, 0.3, &[0.2, 0.9], &node, None).unwrap();
        let b = spec.evaluate(Coefficient::Obstacle, 0.3, &[0.2, 0.9], &node, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn margin_uses_conjugate_exponent() {
        let c = Constants { lambda: 1.0, kappa: 0.2, beta: 0.1, rho: 3.0, ..Constants::default() };
        assert!((c.rho_prime() - 1.5).abs() < 1e-15);
        assert!((c.margin() - 0.65).abs() < 1e-15);
    }

    #[test]
    fn blended_operator_at_theta_zero_is_laplacian() {
        let spec = heat().with_a(MatrixCoef::scaled_identity(3.0));
        let grid = spec.grid(&[4, 4]).unwrap();
        let node = NodeCtx::root(1);
        let u = grid.sample(|x| x[0] * x[1]);
        let lap = LinearOperator::laplacian(&grid).apply(&u);
        let op0 = spec.leading_operator(&grid, 0.0, &node, 0.0).unwrap().apply(&u);
        let op1 = spec.leading_operator(&grid, 0.0, &node, 1.0).unwrap().apply(&u);
        let half = spec.leading_operator(&grid, 0.0, &node, 0.5).unwrap().apply(&u);
        for i in 0..grid.len() {
            assert_eq!(op0[i], lap[i]);
            assert!((op1[i] - 3.0 * lap[i]).abs() < 1e-10);
            assert!((half[i] - 2.0 * lap[i]).abs() < 1e-10);
        }
    }
}
