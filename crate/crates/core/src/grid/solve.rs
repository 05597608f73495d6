//! Krylov solves of `(diag(c) - A) w = rhs` for implicit time steps.

use super::{dot, Field, LinearOperator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative residual target `‖r‖ ≤ tol·‖rhs‖`.
    pub tol: f64,
    /// Iteration cap; `0` means `10·len + 100`.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Field,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `(c I - A) w = rhs` from a zero initial guess.
pub fn solve_implicit(
    op: &LinearOperator,
    c: f64,
    rhs: &[f64],
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let shift = vec![c; rhs.len()];
    solve_shifted(op, &shift, rhs, None, opts)
}

/// Solve `(diag(shift) - A) w = rhs`, optionally warm-started. Uses Jacobi
/// preconditioned CG when `A` is symmetric and BiCGStab otherwise.
pub fn solve_shifted(
    op: &LinearOperator,
    shift: &[f64],
    rhs: &[f64],
    guess: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let n = rhs.len();
    if shift.len() != n || op.grid().len() != n {
        return Err(Error::LevelMismatch {
            expected: op.grid().len(),
            got: n,
        });
    }
    let bnorm = dot(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        return Ok(SolveReport {
            solution: Field::zeros(n),
            iterations: 0,
            residual: 0.0,
        });
    }
    let max_iter = if opts.max_iter == 0 { 10 * n + 100 } else { opts.max_iter };
    let diag = op.diagonal();
    let inv_m: Vec<f64> = shift.iter().zip(diag.iter()).map(|(c, d)| 1.0 / (c - d)).collect();
    let matvec = |x: &[f64]| -> Field {
        let ax = op.apply(x);
        Field(x.iter().zip(shift).zip(ax.iter()).map(|((xi, ci), ai)| ci * xi - ai).collect())
    };
    let x0 = guess.map(|g| Field(g.to_vec())).unwrap_or_else(|| Field::zeros(n));
    if op.is_symmetric() {
        pcg(matvec, &inv_m, rhs, x0, bnorm, opts.tol, max_iter)
    } else {
        bicgstab(matvec, &inv_m, rhs, x0, bnorm, opts.tol, max_iter)
    }
}

fn pcg<M: Fn(&[f64]) -> Field>(
    matvec: M,
    inv_m: &[f64],
    b: &[f64],
    mut x: Field,
    bnorm: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let mut r = Field(b.to_vec()).sub(&matvec(&x));
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= tol * bnorm {
        return Ok(SolveReport { solution: x, iterations: 0, residual: rnorm / bnorm });
    }
    let mut z: Field = Field(r.iter().zip(inv_m).map(|(a, m)| a * m).collect());
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = matvec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverDiverged { iterations: it, residual: rnorm / bnorm });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(SolveReport { solution: x, iterations: it, residual: rnorm / bnorm });
        }
        for ((zi, ri), mi) in z.iter_mut().zip(r.iter()).zip(inv_m) {
            *zi = ri * mi;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(z.iter()) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::SolverDiverged { iterations: max_iter, residual: rnorm / bnorm })
}

fn bicgstab<M: Fn(&[f64]) -> Field>(
    matvec: M,
    inv_m: &[f64],
    b: &[f64],
    mut x: Field,
    bnorm: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let precond = |v: &[f64]| Field(v.iter().zip(inv_m).map(|(a, m)| a * m).collect());
    let mut r = Field(b.to_vec()).sub(&matvec(&x));
    let r_hat = r.clone();
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= tol * bnorm {
        return Ok(SolveReport { solution: x, iterations: 0, residual: rnorm / bnorm });
    }
    let n = b.len();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = Field::zeros(n);
    let mut p = Field::zeros(n);
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = matvec(&y);
        alpha = rho / dot(&r_hat, &v);
        let s = r.sub(&v.scaled(alpha));
        let snorm = dot(&s, &s).sqrt();
        if snorm <= tol * bnorm {
            x.axpy(alpha, &y);
            return Ok(SolveReport { solution: x, iterations: it, residual: snorm / bnorm });
        }
        let zs = precond(&s);
        let t = matvec(&zs);
        omega = dot(&t, &s) / dot(&t, &t);
        x.axpy(alpha, &y);
        x.axpy(omega, &zs);
        r = s.sub(&t.scaled(omega));
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(SolveReport { solution: x, iterations: it, residual: rnorm / bnorm });
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::SolverDiverged { iterations: max_iter, residual: rnorm / bnorm })
}
