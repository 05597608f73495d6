//! Reference routines written independently of the library.

#![allow(dead_code)]

/// Solve `(c I - Δ_h) w = rhs` in 1-d with zero Dirichlet data.
pub fn thomas(c: f64, h: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let off = -1.0 / (h * h);
    let diag = c + 2.0 / (h * h);
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = off / diag;
    dp[0] = rhs[0] / diag;
    for i in 1..n {
        let m = diag - off * cp[i - 1];
        cp[i] = off / m;
        dp[i] = (rhs[i] - off * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Projected Gauss-Seidel for `min((c I - Δ_h) u - rhs, u - ξ) = 0` in 1-d.
pub fn projected_gauss_seidel(c: f64, h: f64, rhs: &[f64], xi: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let off = 1.0 / (h * h);
    let diag = c + 2.0 * off;
    let mut u: Vec<f64> = xi.iter().map(|x| x.max(0.0)).collect();
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            let new = ((rhs[i] + off * (left + right)) / diag).max(xi[i]);
            change = change.max((new - u[i]).abs());
            u[i] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    u
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
