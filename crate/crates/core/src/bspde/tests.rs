use super::*;
use crate::grid::SpatialGrid;
use crate::lattice::NoiseTree;
use crate::par::Exec;
use crate::problem::{Drift, MatrixCoef, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solve `(c I - Δ_h) w = rhs` in 1-d by tridiagonal elimination.
fn thomas(c: f64, h: f64, rhs: &[f64]) -> Vec<f64> {
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

fn heat_spec(t: f64) -> ProblemSpec {
    ProblemSpec::new(1, 1, t, vec![(0.0, 1.0)]).unwrap()
}

#[test]
fn zero_data_gives_zero_solution() {
    let spec = heat_spec(1.0).with_obstacle(|p| -0.5 - p.x[0]);
    let grid = spec.grid(&[17]).unwrap();
    let tree = NoiseTree::build(1, 5, 1.0, false).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let opts = BackwardOptions { penalty: 64.0, ..Default::default() };
    let sol = solve_backward(&model, &opts, None).unwrap();
    assert_eq!(sol.max_abs_u(), 0.0);
    assert_eq!(sol.max_abs_v(), 0.0);
    let beta = sol.beta.as_ref().unwrap();
    assert!(beta.iter().flatten().all(|b| b.max_abs() == 0.0));
}

#[test]
fn deterministic_data_matches_tridiagonal_backward_heat() {
    let spec = heat_spec(0.5)
        .with_terminal(|p| (std::f64::consts::PI * p.x[0]).sin())
        .with_f(Drift::source(|p| p.t * p.x[0]));
    let grid = spec.grid(&[31]).unwrap();
    let tree = NoiseTree::build(1, 6, 0.5, false).unwrap();
    let sol = solve_linear_bspde(&spec, &tree, &grid, &BackwardOptions::default()).unwrap();
    let h = grid.spacing()[0];
    let dt = tree.dt();
    let mut u: Vec<f64> = grid.sample(|x| (std::f64::consts::PI * x[0]).sin()).0;
    for k in (0..6).rev() {
        let t = tree.time(k);
        let rhs: Vec<f64> = (0..31).map(|i| u[i] / dt + t * grid.coord(0, i)).collect();
        u = thomas(1.0 / dt, h, &rhs);
        for node in &sol.u[k] {
            let err = node.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "level {k}: {err}");
        }
        for vs in &sol.v[k] {
            assert!(vs[0].max_abs() < 1e-12);
        }
    }
}

#[test]
fn duality_with_random_terminal_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tree = NoiseTree::build(1, 2, 1.0, false).unwrap();
    let grid = SpatialGrid::uniform_1d(0.0, 1.0, 15).unwrap();
    let rand_field = |rng: &mut ChaCha8Rng| Field((0..15).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let terminal = (0..4).map(|_| rand_field(&mut rng)).collect();
    let forcing = (0..2).map(|_| (0..4).map(|_| rand_field(&mut rng)).collect()).collect();
    let data = TerminalData { terminal, forcing };
    let r = duality_residual(&tree, &grid, &data, &BackwardOptions::default()).unwrap();
    assert!(r < 1e-8, "{r}");
}

#[test]
fn duality_check_for_path_dependent_spec() {
    let spec = ProblemSpec::new(1, 1, 1.0, vec![(-1.0, 1.0)])
        .unwrap()
        .with_terminal(|p| p.node.w[0] * (1.0 - p.x[0] * p.x[0]))
        .with_f(Drift::source(|p| p.node.w[0].sin() + p.x[0]));
    let grid = spec.grid(&[21]).unwrap();
    let tree = NoiseTree::build(1, 3, 1.0, false).unwrap();
    let r = duality_check(&spec, &tree, &grid, &BackwardOptions::default()).unwrap();
    assert!(r < 1e-8, "{r}");
}

#[test]
fn terminal_linear_in_noise_has_nonzero_diffusion() {
    // G = c W_T φ(x) is a martingale in W scaled by a heat evolution of φ.
    let c = 0.7;
    let spec = heat_spec(1.0).with_terminal(move |p| c * p.node.w[0] * (std::f64::consts::PI * p.x[0]).sin());
    let grid = spec.grid(&[15]).unwrap();
    let tree = NoiseTree::build(1, 4, 1.0, false).unwrap();
    let sol = solve_linear_bspde(&spec, &tree, &grid, &BackwardOptions::default()).unwrap();
    // v at level k is c times the profile carried back from level k+1 by the heat steps.
    let h = grid.spacing()[0];
    let dt = tree.dt();
    let mut profile: Vec<f64> = grid.sample(|x| (std::f64::consts::PI * x[0]).sin()).0;
    for k in (0..4).rev() {
        for vs in &sol.v[k] {
            let err = vs[0].iter().zip(&profile).map(|(a, b)| (a - c * b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "level {k}: {err}");
        }
        let rhs: Vec<f64> = profile.iter().map(|p| p / dt).collect();
        profile = thomas(1.0 / dt, h, &rhs);
    }
    assert!(sol.martingale_residual.iter().flatten().all(|r| *r < 1e-12));
}

#[test]
fn energy_balance_closes_on_binary_tree() {
    let spec = ProblemSpec::new(1, 1, 1.0, vec![(0.0, 1.0)])
        .unwrap()
        .with_sigma(MatrixCoef::scaled_identity(0.3))
        .with_terminal(|p| (1.0 + p.node.w[0]) * (std::f64::consts::PI * p.x[0]).sin())
        .with_f(Drift::source(|p| p.x[0] * (1.0 - p.x[0])));
    let grid = spec.grid(&[19]).unwrap();
    let tree = NoiseTree::build(1, 6, 1.0, false).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap().frozen();
    let sol = solve_backward(&model, &BackwardOptions::default(), None).unwrap();
    let e = energy_identity(&sol, &model).unwrap();
    assert!(e.closed < 1e-10, "{}", e.closed);
    assert!(e.max > 0.0);
}

#[test]
fn energy_of_zero_data_is_zero() {
    let spec = heat_spec(1.0);
    let grid = spec.grid(&[9]).unwrap();
    let tree = NoiseTree::build(1, 3, 1.0, true).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let sol = solve_backward(&model, &BackwardOptions::default(), None).unwrap();
    let e = energy_identity(&sol, &model).unwrap();
    assert_eq!(e.max, 0.0);
}

#[test]
fn inactive_obstacle_leaves_solution_untouched() {
    let spec = heat_spec(1.0)
        .with_terminal(|p| p.x[0] * (1.0 - p.x[0]))
        .with_obstacle(|_| -1.0);
    let grid = spec.grid(&[15]).unwrap();
    let tree = NoiseTree::build(1, 4, 1.0, true).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let free = solve_backward(&model.clone().without_obstacle(), &BackwardOptions::default(), None).unwrap();
    let pen = solve_backward(&model, &BackwardOptions { penalty: 1e3, ..Default::default() }, None).unwrap();
    assert!(free.max_abs_diff(&pen) < 1e-12);
    assert!(pen.beta.unwrap().iter().flatten().all(|b| b.max_abs() == 0.0));
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let spec = ProblemSpec::new(1, 2, 1.0, vec![(0.0, 1.0)])
        .unwrap()
        .with_terminal(|p| (p.node.w[0] - p.node.w[1]) * p.x[0] * (1.0 - p.x[0]))
        .with_obstacle(|p| 0.05 - (p.x[0] - 0.5).abs());
    let grid = spec.grid(&[13]).unwrap();
    let tree = NoiseTree::build(2, 3, 1.0, false).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let mut opts = BackwardOptions { penalty: 100.0, ..Default::default() };
    opts.exec = Exec::Sequential;
    let a = solve_backward(&model, &opts, None).unwrap();
    opts.exec = Exec::Parallel;
    let b = solve_backward(&model, &opts, None).unwrap();
    assert_eq!(a.u, b.u);
    assert_eq!(a.v, b.v);
}

#[test]
fn norms_of_zero_are_zero_and_distance_is_symmetric() {
    let spec = heat_spec(1.0).with_terminal(|p| p.node.w[0] * p.x[0]);
    let grid = spec.grid(&[9]).unwrap();
    let tree = NoiseTree::build(1, 3, 1.0, false).unwrap();
    let a = solve_linear_bspde(&spec, &tree, &grid, &BackwardOptions::default()).unwrap();
    let (du, dv) = a.distance(&a, &tree, &grid).unwrap();
    assert_eq!((du, dv), (0.0, 0.0));
    assert!(a.h_norm(&tree, &grid) > 0.0 && a.v_norm(&tree, &grid) > 0.0);
}

#[test]
fn inner_iteration_cap_is_reported() {
    let spec = heat_spec(1.0).with_obstacle(|p| 0.2 - (p.x[0] - 0.5).abs());
    let grid = spec.grid(&[15]).unwrap();
    let tree = NoiseTree::build(1, 2, 1.0, true).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let opts = BackwardOptions { penalty: 1e4, max_inner: 1, inner_tol: 0.0, ..Default::default() };
    match solve_backward(&model, &opts, None) {
        Err(crate::Error::InnerIteration { iterations, .. }) => assert_eq!(iterations, 1),
        other => panic!("expected inner iteration failure, got {other:?}"),
    }
}
