//! Sequential vs rayon execution of the main kernels.
//!
//! Run `cargo bench -p rbspde-core --no-default-features` to measure the build
//! without rayon; there both policies take the sequential path.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rbspde_core::bspde::{solve_backward, BackwardOptions, SpecModel};
use rbspde_core::lattice::{JointTree, NoiseTree};
use rbspde_core::par::Exec;
use rbspde_core::pathwise::{equivalence_residual, EquivalenceOptions};
use rbspde_core::penalty::solve_penalized;
use rbspde_core::problem::{Drift, ProblemSpec};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn obstacle_2d() -> ProblemSpec {
    ProblemSpec::new(2, 2, 0.5, vec![(-1.0, 1.0), (-1.0, 1.0)])
        .unwrap()
        .with_terminal(|p| (1.0 + 0.5 * p.node.w[0].sin()) * (1.0 - p.x[0] * p.x[0]) * (1.0 - p.x[1] * p.x[1]))
        .with_obstacle(|p| 0.3 - p.x[0].abs() - p.x[1].abs() + 0.1 * p.node.w[1])
        .with_f(Drift::source(|p| p.x[0] * p.node.w[1]))
}

fn backward(c: &mut Criterion) {
    let spec = obstacle_2d();
    let grid = spec.grid(&[31, 31]).unwrap();
    let tree = NoiseTree::build(2, 4, 0.5, false).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let mut group = c.benchmark_group("penalized_backward_2d");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let opts = BackwardOptions { exec, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| solve_penalized(&model, black_box(256.0), opts, None).unwrap())
        });
    }
    group.finish();
}

fn linear_heat(c: &mut Criterion) {
    let spec = ProblemSpec::new(1, 1, 1.0, vec![(0.0, 1.0)])
        .unwrap()
        .with_terminal(|p| p.node.w[0] * (std::f64::consts::PI * p.x[0]).sin());
    let grid = spec.grid(&[255]).unwrap();
    let tree = NoiseTree::build(1, 10, 1.0, false).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let mut group = c.benchmark_group("linear_backward_1d");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let opts = BackwardOptions { exec, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| solve_backward(&model, opts, None).unwrap())
        });
    }
    group.finish();
}

fn pathwise(c: &mut Criterion) {
    let spec = ProblemSpec::new(1, 1, 0.25, vec![(-2.0, 2.0)])
        .unwrap()
        .with_obstacle(|p| (0.25 - p.t) * (1.0 - 4.0 * p.x[0] * p.x[0]));
    let grid = spec.grid(&[31]).unwrap();
    let tree = NoiseTree::build(1, 16, 0.25, true).unwrap();
    let joint = JointTree::build(1, 1, 16, 0.25, true).unwrap();
    let model = SpecModel::new(&spec, &tree, &grid).unwrap();
    let sol = solve_penalized(&model, 1e5, &BackwardOptions::default(), None).unwrap();
    let mut group = c.benchmark_group("equivalence_residual");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let opts = EquivalenceOptions {
            starts: (0..21).map(|i| vec![-0.5 + 0.05 * i as f64]).collect(),
            samples: 200,
            seed: 7,
            exec,
            keep_rows: false,
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| equivalence_residual(&spec, &sol, &grid, &joint, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, backward, linear_heat, pathwise);
criterion_main!(benches);
