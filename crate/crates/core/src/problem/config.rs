//! TOML configuration files describing a problem and its discretization.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [problem]
//! dim = 1
//! noise_dim = 1
//! horizon = 1.0
//! domain = [[-1.0, 1.0]]
//! a = [["1 + 0.5*sin(x)"]]          # d×d expressions, omitted = identity
//! sigma = [["0.3"]]                 # d×m expressions, omitted = zero
//! f = "-0.5*u"                      # omitted = 0
//! g = ["0.2*sin(y)"]                # d expressions, omitted = 0
//! terminal = "0"
//! obstacle = "max(0, 0.5 - abs(x)) - 0.1"   # optional
//! dominating = "0.4"                          # optional
//!
//! [problem.params]                  # named constants usable in expressions
//! c = 0.5
//!
//! [problem.constants]
//! lambda = 2.0
//! lambda_upper = 2.0
//! kappa = 0.0
//! beta = 0.0
//! rho = 2.0
//! lipschitz = 1.0
//!
//! [discretization]
//! grid = [65]
//! steps = 64
//! recombine = false
//! ```
//!
//! All coefficient entries are strings in the expression language of
//! [`super::expr`]. Further optional tables (`tolerances`, `penalization`,
//! `continuation`, `checks`, `rbsde`, `convergence`) tune the solvers and
//! fall back to the defaults documented on each struct.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;
use toml::Spanned;

use super::expr::{Expr, ExprArgs};
use super::spec::{Constants, Drift, Flux, MatrixCoef, ProblemSpec};
use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProblem {
    pub dim: usize,
    #[serde(default = "one")]
    pub noise_dim: usize,
    pub horizon: f64,
    pub domain: Vec<[f64; 2]>,
    pub a: Option<Vec<Vec<Spanned<String>>>>,
    pub sigma: Option<Vec<Vec<Spanned<String>>>>,
    pub f: Option<Spanned<String>>,
    pub g: Option<Vec<Spanned<String>>>,
    pub terminal: Option<Spanned<String>>,
    pub obstacle: Option<Spanned<String>>,
    pub dominating: Option<Spanned<String>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub constants: Option<Constants>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    /// Interior points per axis.
    pub grid: Vec<usize>,
    pub steps: usize,
    #[serde(default)]
    pub recombine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative residual of every implicit linear solve.
    pub linear: f64,
    /// Max-norm change that ends the inner penalty/nonlinearity iteration.
    pub inner: f64,
    pub max_inner: usize,
    /// Allowed decrease of `u_n` as `n` grows.
    pub monotonicity: f64,
    pub complementarity: f64,
    pub picard: f64,
    pub comparison: f64,
    /// Tolerance for the pathwise equivalence residual.
    pub equivalence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            linear: 1e-12,
            inner: 1e-11,
            max_inner: 200,
            monotonicity: 1e-10,
            complementarity: 1e-3,
            picard: 1e-8,
            comparison: 1e-8,
            equivalence: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenalizationConfig {
    /// Explicit schedule; when empty, `2^0 .. 2^max_exponent`.
    pub schedule: Vec<f64>,
    pub max_exponent: u32,
}

impl Default for PenalizationConfig {
    fn default() -> Self {
        Self { schedule: vec![], max_exponent: 12 }
    }
}

impl PenalizationConfig {
    pub fn schedule(&self) -> Vec<f64> {
        if self.schedule.is_empty() {
            (0..=self.max_exponent).map(|j| 2f64.powi(j as i32)).collect()
        } else {
            self.schedule.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub theta_step: f64,
    pub theta_min: f64,
    pub max_picard: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self { theta_step: 0.5, theta_min: 1.0 / 64.0, max_picard: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub sample_budget: usize,
    /// Warn when |terminal| or the obstacle exceeds this on the boundary of the box.
    pub boundary_threshold: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self { sample_budget: 256, boundary_threshold: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbsdeConfig {
    /// Start points of the characteristics; empty means every grid node.
    pub starts: Vec<Vec<f64>>,
    pub samples: usize,
    /// Joint lattice for the pathwise solver recombines (m = d = 1 only).
    pub recombine: bool,
}

impl Default for RbsdeConfig {
    fn default() -> Self {
        Self { starts: vec![], samples: 200, recombine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub levels: usize,
    /// Optional exact solution expression in `t, x1..xd`.
    pub exact: Option<String>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { levels: 3, exact: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub problem: RawProblem,
    pub discretization: Discretization,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub penalization: PenalizationConfig,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub rbsde: RbsdeConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
}

/// A parsed config: the problem plus run parameters.
#[derive(Debug, Clone)]
pub struct Config {
    pub spec: ProblemSpec,
    pub seed: u64,
    pub discretization: Discretization,
    pub tolerances: Tolerances,
    pub penalization: PenalizationConfig,
    pub continuation: ContinuationConfig,
    pub checks: ChecksConfig,
    pub rbsde: RbsdeConfig,
    pub convergence: ConvergenceConfig,
    /// Exact solution, if configured, as a function of `(t, x)`.
    pub exact: Option<Arc<Expr>>,
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((1, 1));
            Error::Parse { line, column, message: e.message().to_string() }
        })?;
        if raw.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                raw.version
            )));
        }
        let spec = build_spec(text, &raw.problem)?;
        if raw.discretization.grid.len() != spec.d {
            return Err(Error::Config(format!(
                "discretization.grid has {} entries for a {}-dimensional problem",
                raw.discretization.grid.len(),
                spec.d
            )));
        }
        let exact = match &raw.convergence.exact {
            Some(src) => Some(Arc::new(
                Expr::parse(src, spec.d, spec.m, &raw.problem.params).map_err(|e| Error::Config(format!("convergence.exact {e}")))?,
            )),
            None => None,
        };
        Ok(Self {
            spec,
            seed: raw.seed,
            discretization: raw.discretization,
            tolerances: raw.tolerances,
            penalization: raw.penalization,
            continuation: raw.continuation,
            checks: raw.checks,
            rbsde: raw.rbsde,
            convergence: raw.convergence,
            exact,
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |p| offset - p - 1) + 1;
    (line, column)
}

fn compile(text: &str, s: &Spanned<String>, d: usize, m: usize, params: &BTreeMap<String, f64>) -> Result<Arc<Expr>> {
    Expr::parse(s.get_ref(), d, m, params).map(Arc::new).map_err(|e| {
        // +1 skips the opening quote of a basic string
        let (line, column) = line_col(text, s.span().start + 1 + e.offset);
        Error::Parse { line, column, message: e.message }
    })
}

fn state_free(text: &str, s: &Spanned<String>, e: &Expr, what: &str) -> Result<()> {
    if e.uses_state() {
        let (line, column) = line_col(text, s.span().start);
        return Err(Error::Parse {
            line,
            column,
            message: format!("{what} may not depend on u, y or z"),
        });
    }
    Ok(())
}

fn build_spec(text: &str, p: &RawProblem) -> Result<ProblemSpec> {
    let (d, m) = (p.dim, p.noise_dim);
    if p.domain.len() != d {
        return Err(Error::Config(format!("domain lists {} intervals for dim = {d}", p.domain.len())));
    }
    let domain = p.domain.iter().map(|b| (b[0], b[1])).collect();
    let mut spec = ProblemSpec::new(d, m, p.horizon, domain)?;
    let params = &p.params;

    let matrix = |rows: &Vec<Vec<Spanned<String>>>, cols: usize, what: &str| -> Result<MatrixCoef> {
        if rows.len() != d || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Config(format!("{what} must be a {d}x{cols} array of expressions")));
        }
        let mut exprs = Vec::with_capacity(d * cols);
        for r in rows {
            for s in r {
                let e = compile(text, s, d, m, params)?;
                state_free(text, s, &e, what)?;
                exprs.push(e);
            }
        }
        Ok(MatrixCoef::from_fn(move |pt, out| {
            let args = ExprArgs { t: pt.t, x: pt.x, w: &pt.node.w, level: pt.node.level, node: pt.node.index, ..Default::default() };
            for (o, e) in out.iter_mut().zip(&exprs) {
                *o = e.eval(&args);
            }
        }))
    };
    if let Some(a) = &p.a {
        spec.a = matrix(a, d, "a")?;
    }
    if let Some(s) = &p.sigma {
        spec.sigma = matrix(s, m, "sigma")?;
    }
    if let Some(fs) = &p.f {
        let e = compile(text, fs, d, m, params)?;
        if e.as_constant() != Some(0.0) {
            spec.f = if e.uses_state() {
                Drift::new(move |pt, st| {
                    e.eval(&ExprArgs {
                        t: pt.t,
                        x: pt.x,
                        w: &pt.node.w,
                        level: pt.node.level,
                        node: pt.node.index,
                        u: st.value,
                        y: st.grad,
                        z: st.z,
                    })
                })
            } else {
                Drift::source(move |pt| e.eval(&ExprArgs { t: pt.t, x: pt.x, w: &pt.node.w, level: pt.node.level, node: pt.node.index, ..Default::default() }))
            };
        }
    }
    if let Some(gs) = &p.g {
        if gs.len() != d {
            return Err(Error::Config(format!("g must list {d} expressions")));
        }
        let exprs: Vec<Arc<Expr>> = gs.iter().map(|s| compile(text, s, d, m, params)).collect::<Result<_>>()?;
        if exprs.iter().any(|e| e.as_constant() != Some(0.0)) {
            let state_dependent = exprs.iter().any(|e| e.uses_state());
            let eval = move |pt: &super::Point, st: &super::State, out: &mut [f64]| {
                let args = ExprArgs {
                    t: pt.t,
                    x: pt.x,
                    w: &pt.node.w,
                    level: pt.node.level,
                    node: pt.node.index,
                    u: st.value,
                    y: st.grad,
                    z: st.z,
                };
                for (o, e) in out.iter_mut().zip(&exprs) {
                    *o = e.eval(&args);
                }
            };
            spec.g = if state_dependent {
                Flux::new(eval)
            } else {
                let zg = vec![0.0; d];
                let zz = vec![0.0; m];
                Flux::source(move |pt, out| eval(pt, &super::State { value: 0.0, grad: &zg, z: &zz }, out))
            };
        }
    }
    let scalar = |s: &Spanned<String>, what: &str| -> Result<super::ScalarFn> {
        let e = compile(text, s, d, m, params)?;
        state_free(text, s, &e, what)?;
        Ok(Arc::new(move |pt: &super::Point| {
            e.eval(&ExprArgs { t: pt.t, x: pt.x, w: &pt.node.w, level: pt.node.level, node: pt.node.index, ..Default::default() })
        }))
    };
    if let Some(s) = &p.terminal {
        spec.terminal = scalar(s, "terminal")?;
    }
    if let Some(s) = &p.obstacle {
        spec.obstacle = Some(scalar(s, "obstacle")?);
    }
    if let Some(s) = &p.dominating {
        spec.dominating = Some(scalar(s, "dominating")?);
    }
    if let Some(c) = p.constants {
        spec.constants = c;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Coefficient, CoefValue, NodeCtx, State};

    const SAMPLE: &str = r#"
version = 1
seed = 3

[problem]
dim = 1
noise_dim = 1
horizon = 1.0
domain = [[-1.0, 1.0]]
a = [["1 + c*sin(x)"]]
sigma = [["0.3"]]
f = "-0.5*u + z"
g = ["0.2*sin(y)"]
terminal = "w*0"
obstacle = "max(0, 0.5 - abs(x)) - 0.1"

[problem.params]
c = 0.5

[problem.constants]
lambda = 1.0
lambda_upper = 3.5
kappa = 0.4
beta = 0.0
rho = 2.0
lipschitz = 1.0

[discretization]
grid = [33]
steps = 16
recombine = true
"#;

    #[test]
    fn parses_sample() {
        let c = Config::from_str(SAMPLE).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.discretization.grid, vec![33]);
        assert!(c.spec.f.is_state_dependent());
        assert!(c.spec.g.is_state_dependent());
        let node = NodeCtx::root(1);
        let a = c.spec.evaluate(Coefficient::A, 0.0, &[0.0], &node, None).unwrap();
        assert_eq!(a, CoefValue::Matrix { rows: 1, cols: 1, data: vec![1.0] });
        let st = State { value: 2.0, grad: &[0.0], z: &[0.25] };
        let f = c.spec.evaluate(Coefficient::F, 0.0, &[0.0], &node, Some(st)).unwrap();
        assert_eq!(f, CoefValue::Scalar(-0.75));
        assert_eq!(c.penalization.schedule().len(), 13);
        assert_eq!(c.tolerances, Tolerances::default());
    }

    #[test]
    fn expression_errors_report_line_and_column() {
        let bad = SAMPLE.replace("\"-0.5*u + z\"", "\"-0.5*u + * z\"");
        match Config::from_str(&bad) {
            Err(Error::Parse { line, column, .. }) => {
                let l = bad.lines().nth(line - 1).unwrap();
                assert!(l.starts_with("f = "));
                assert_eq!(&l[column - 1..column], "*");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn toml_errors_and_version_mismatch() {
        assert!(matches!(Config::from_str("version = \n"), Err(Error::Parse { line: 1, .. })));
        let v2 = SAMPLE.replace("version = 1", "version = 2");
        assert!(matches!(Config::from_str(&v2), Err(Error::Config(_))));
        let state_in_a = SAMPLE.replace("1 + c*sin(x)", "1 + u");
        assert!(matches!(Config::from_str(&state_in_a), Err(Error::Parse { .. })));
    }
}
