//! Sampling-based checks of the structural assumptions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{non_finite, NodeCtx, Point, ProblemSpec, State};
use crate::error::{Error, Result};

/// Where a check attained its worst value.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub level: usize,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value (eigenvalue, ratio, margin or gap).
    pub worst: f64,
    /// The bound it was compared against.
    pub bound: f64,
    pub witness: Option<Witness>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<CheckOutcome>,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One `name=pass|fail worst bound detail` line per check.
    pub fn to_text(&self) -> String {
        let mut s = format!("samples={}\n", self.samples);
        for c in &self.checks {
            s.push_str(&format!(
                "{}={} worst={:e} bound={:e}",
                c.name,
                if c.passed { "pass" } else { "fail" },
                c.worst,
                c.bound
            ));
            if let Some(w) = &c.witness {
                s.push_str(&format!(" t={} x={:?} level={} node={}", w.t, w.x, w.level, w.node));
            }
            if !c.detail.is_empty() {
                s.push_str(&format!(" ; {}", c.detail));
            }
            s.push('\n');
        }
        s
    }
}

/// Radius of the box the state arguments are drawn from.
const STATE_RADIUS: f64 = 5.0;
/// Relative slack for floating-point comparisons against declared bounds.
const SLACK: f64 = 1e-9;
const NODE_STEPS: usize = 8;

struct Tracker {
    name: &'static str,
    worst: f64,
    witness: Option<Witness>,
    minimize: bool,
}

impl Tracker {
    fn new(name: &'static str, minimize: bool) -> Self {
        Self {
            name,
            worst: if minimize { f64::INFINITY } else { f64::NEG_INFINITY },
            witness: None,
            minimize,
        }
    }

    fn observe(&mut self, value: f64, w: &Witness) {
        let worse = if self.minimize { value < self.worst } else { value > self.worst };
        if worse || self.witness.is_none() {
            self.worst = value;
            self.witness = Some(w.clone());
        }
    }

    fn finish(self, bound: f64, detail: String) -> CheckOutcome {
        let scale = 1.0 + bound.abs();
        let passed = if self.minimize {
            self.worst >= bound - SLACK * scale
        } else {
            self.worst <= bound + SLACK * scale
        };
        CheckOutcome {
            name: self.name,
            passed,
            worst: self.worst,
            bound,
            witness: if passed { self.witness } else { self.witness.or_else(|| Some(origin())) },
            detail,
        }
    }
}

fn origin() -> Witness {
    Witness { t: 0.0, x: vec![], level: 0, node: 0 }
}

/// Sample `(t, x, node)` and state-argument pairs and compare against the
/// constants declared in `spec`. Deterministic in `seed`.
pub fn validate_assumptions(spec: &ProblemSpec, sample_budget: usize, seed: u64) -> Result<AssumptionReport> {
    if sample_budget == 0 {
        return Err(Error::InvalidInput("sample budget must be at least 1".into()));
    }
    let c = spec.constants;
    if !(c.rho > 1.0) {
        return Err(Error::InvalidInput(format!("rho must exceed 1, got {}", c.rho)));
    }
    let (d, m) = (spec.d, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut eig_lo = Tracker::new("A2.lower", true);
    let mut eig_hi = Tracker::new("A2.upper", false);
    let mut bounded = Tracker::new("A2.bounded", false);
    let mut f_lip = Tracker::new("A1.f", false);
    let mut g_u = Tracker::new("A1.g.value", false);
    let mut g_y = Tracker::new("A1.g.grad", false);
    let mut g_z = Tracker::new("A1.g.z", false);
    let mut dom = Tracker::new("A4.dominating", false);
    let mut term = Tracker::new("obstacle.terminal", false);
    let mut first: Option<Witness> = None;

    let mut a = vec![0.0; d * d];
    let mut s = vec![0.0; d * m];
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];

    for sample in 0..sample_budget {
        let t = rng.gen_range(0.0..=spec.horizon);
        let x: Vec<f64> = spec.domain.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        let step = (t / NODE_STEPS as f64).sqrt();
        let mut w = vec![0.0; m];
        for _ in 0..NODE_STEPS {
            for wr in w.iter_mut() {
                *wr += if rng.gen::<bool>() { step } else { -step };
            }
        }
        let node = NodeCtx { level: 0, index: sample, w };
        let wit = Witness { t, x: x.clone(), level: node.level, node: node.index };
        first.get_or_insert_with(|| wit.clone());
        let p = Point { t, x: &x, node: &node };

        spec.a.eval(&p, &mut a);
        spec.sigma.eval(&p, &mut s);
        if a.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(non_finite("a/sigma", t, &x, &node));
        }
        // 2a - ρσσᵀ, symmetrized
        let am = DMatrix::from_row_slice(d, d, &a);
        let sm = DMatrix::from_row_slice(d, m, &s);
        let q = &am * 2.0 - &sm * sm.transpose() * c.rho;
        let sym = (&q + q.transpose()) * 0.5;
        let eig = sym.symmetric_eigen().eigenvalues;
        eig_lo.observe(eig.min(), &wit);
        eig_hi.observe(eig.max(), &wit);
        bounded.observe(am.norm() + sm.norm(), &wit);

        // zero-state data must be finite
        let zg = vec![0.0; d];
        let zz = vec![0.0; m];
        let zero = State { value: 0.0, grad: &zg, z: &zz };
        if !spec.f.eval(&p, &zero).is_finite() {
            return Err(non_finite("f0", t, &x, &node));
        }
        spec.g.eval(&p, &zero, &mut g1);
        if g1.iter().any(|v| !v.is_finite()) {
            return Err(non_finite("g0", t, &x, &node));
        }

        if let Some(xi) = &spec.obstacle {
            let xv = xi(&p);
            if !xv.is_finite() {
                return Err(non_finite("obstacle", t, &x, &node));
            }
            if let Some(check) = &spec.dominating {
                let dv = check(&p);
                if !dv.is_finite() {
                    return Err(non_finite("dominating", t, &x, &node));
                }
                dom.observe(xv - dv, &wit);
            }
            let pt = Point { t: spec.horizon, ..p };
            let gap = xi(&pt) - (spec.terminal)(&pt);
            term.observe(gap, &Witness { t: spec.horizon, ..wit.clone() });
        }

        // Lipschitz quotients: one joint perturbation and one per argument group.
        let base = random_state(&mut rng, d, m, STATE_RADIUS);
        for kind in 0..4 {
            let mut other = base.clone();
            let delta = random_state(&mut rng, d, m, 1.0);
            match kind {
                0 => other.add(&delta),
                1 => other.value += delta.value,
                2 => other.grad.iter_mut().zip(&delta.grad).for_each(|(a, b)| *a += b),
                _ => other.z.iter_mut().zip(&delta.z).for_each(|(a, b)| *a += b),
            }
            let (dv, dy, dz) = base.distance(&other);
            if dv + dy + dz == 0.0 {
                continue;
            }
            let f1 = spec.f.eval(&p, &base.as_state());
            let f2 = spec.f.eval(&p, &other.as_state());
            if !(f1.is_finite() && f2.is_finite()) {
                return Err(non_finite("f", t, &x, &node));
            }
            f_lip.observe((f1 - f2).abs() / (dv + dy + dz), &wit);

            spec.g.eval(&p, &base.as_state(), &mut g1);
            spec.g.eval(&p, &other.as_state(), &mut g2);
            if g1.iter().chain(&g2).any(|v| !v.is_finite()) {
                return Err(non_finite("g", t, &x, &node));
            }
            let dg = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            match kind {
                1 => g_u.observe(dg / dv, &wit),
                2 => g_y.observe(dg / dy, &wit),
                3 => g_z.observe(dg / dz, &wit),
                _ => {}
            }
        }
    }

    let mut checks = vec![
        eig_lo.finish(c.lambda, "min eigenvalue of sym(2a - rho*sigma*sigma^T) vs lambda".into()),
        eig_hi.finish(c.lambda_upper, "max eigenvalue of sym(2a - rho*sigma*sigma^T) vs lambda_upper".into()),
        bounded.finish(c.lambda_upper, "|a| + |sigma| (Frobenius) vs lambda_upper".into()),
    ];
    let margin = c.margin();
    checks.push(CheckOutcome {
        name: "A2.margin",
        passed: margin > 0.0,
        worst: margin,
        bound: 0.0,
        witness: if margin > 0.0 { None } else { first.clone() },
        detail: format!(
            "lambda - kappa - rho'*beta = {} - {} - {}*{} must be > 0",
            c.lambda,
            c.kappa,
            c.rho_prime(),
            c.beta
        ),
    });
    checks.push(f_lip.finish(c.lipschitz, "|df| / (|dv| + |dy| + |dz|) vs L".into()));
    checks.push(g_u.finish(c.lipschitz, "|dg| / |dv| vs L".into()));
    checks.push(g_y.finish(0.5 * c.kappa, "|dg| / |dy| vs kappa/2".into()));
    checks.push(g_z.finish(c.beta.sqrt(), "|dg| / |dz| vs sqrt(beta)".into()));
    if spec.dominating.is_some() {
        checks.push(dom.finish(0.0, "obstacle - dominating field must be <= 0".into()));
    }
    if spec.obstacle.is_some() {
        checks.push(term.finish(0.0, "obstacle(T) - terminal must be <= 0".into()));
    }
    Ok(AssumptionReport { checks, samples: sample_budget })
}

#[derive(Clone)]
struct OwnedState {
    value: f64,
    grad: Vec<f64>,
    z: Vec<f64>,
}

impl OwnedState {
    fn as_state(&self) -> State<'_> {
        State { value: self.value, grad: &self.grad, z: &self.z }
    }

    fn add(&mut self, o: &OwnedState) {
        self.value += o.value;
        self.grad.iter_mut().zip(&o.grad).for_each(|(a, b)| *a += b);
        self.z.iter_mut().zip(&o.z).for_each(|(a, b)| *a += b);
    }

    fn distance(&self, o: &OwnedState) -> (f64, f64, f64) {
        let l2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        ((self.value - o.value).abs(), l2(&self.grad, &o.grad), l2(&self.z, &o.z))
    }
}

fn random_state(rng: &mut ChaCha8Rng, d: usize, m: usize, r: f64) -> OwnedState {
    OwnedState {
        value: rng.gen_range(-r..=r),
        grad: (0..d).map(|_| rng.gen_range(-r..=r)).collect(),
        z: (0..m).map(|_| rng.gen_range(-r..=r)).collect(),
    }
}
