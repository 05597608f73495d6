//! One function per verb. Each loads its config, applies the command-line
//! overrides, runs the solver and records parameters, results, checks and
//! artifacts in the manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rbspde_core::bspde::{energy_identity, solve_linear_bspde, BackwardOptions, BackwardSolution, SpecModel};
use rbspde_core::grid::{write_node_fields_csv, Field, SolverOptions, SpatialGrid};
use rbspde_core::lattice::{JointTree, NoiseTree, DEFAULT_NODE_BUDGET};
use rbspde_core::par::Exec;
use rbspde_core::pathwise::{
    brute_force_stopping, check_linear_setting, equivalence_residual, measure_pushforward, snell_value, solve_reflected_bsde,
    CharacteristicData, EquivalenceOptions, DEFAULT_POLICY_BUDGET,
};
use rbspde_core::penalty::{run_penalization, solution_complementarity, PenaltyOptions};
use rbspde_core::problem::expr::ExprArgs;
use rbspde_core::problem::{validate_assumptions, Config, NodeCtx, Point, ProblemSpec};
use rbspde_core::quasilinear::{comparison_test, solve_rbspde, RbspdeOptions};

use crate::args::{Common, PlotKind, Vary};
use crate::manifest::{sha256_hex, Manifest};
use crate::plot::{figure_from_csv, render_svg};

/// Budget override for lattice node counts.
pub const BUDGET_ENV: &str = "RBSPDE_LAB_BUDGET";
/// Relative gap allowed between the grid measure and the pathwise reflections.
pub const PUSHFORWARD_TOL: f64 = 0.1;
/// Agreement required between the three optimal stopping values.
pub const STOPPING_TOL: f64 = 1e-12;

/// Bad config, bad flags or a refused budget: exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_checks(m: &Manifest) -> Self {
        if m.all_passed() {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

pub struct Ctx<'a> {
    pub common: &'a Common,
    pub exec: Exec,
    pub budget: usize,
}

impl Ctx<'_> {
    pub fn budget_from_env() -> Result<usize> {
        match std::env::var(BUDGET_ENV) {
            Ok(v) => v.trim().parse::<usize>().map_err(|_| input(format!("{BUDGET_ENV} must be a positive integer, got `{v}`"))),
            Err(_) => Ok(DEFAULT_NODE_BUDGET),
        }
    }

    fn load(&self, path: &Path, m: &mut Manifest, suffix: &str) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        let mut cfg = Config::from_str(&text).map_err(|e| input(format!("{}:{e}", path.display())))?;
        let c = self.common;
        if let Some(g) = &c.grid {
            if g.len() != cfg.spec.d {
                return Err(input(format!("--grid lists {} axes for a {}-dimensional problem", g.len(), cfg.spec.d)));
            }
            cfg.discretization.grid = g.clone();
        }
        if let Some(s) = c.steps {
            cfg.discretization.steps = s;
        }
        if let Some(s) = &c.schedule {
            cfg.penalization.schedule = s.clone();
        }
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        let t = &mut cfg.tolerances;
        for (slot, v) in [
            (&mut t.linear, c.tol_linear),
            (&mut t.inner, c.tol_inner),
            (&mut t.monotonicity, c.tol_monotonicity),
            (&mut t.complementarity, c.tol_complementarity),
            (&mut t.picard, c.tol_picard),
            (&mut t.comparison, c.tol_comparison),
            (&mut t.equivalence, c.tol_equivalence),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        m.set(&format!("config{suffix}"), path.display());
        m.set(&format!("spec_sha256{suffix}"), sha256_hex(text.as_bytes()));
        if suffix.is_empty() {
            record_run(m, &cfg, self);
        }
        Ok(cfg)
    }

    fn tree(&self, cfg: &Config) -> Result<NoiseTree> {
        let d = &cfg.discretization;
        let recombine = d.recombine && cfg.spec.m == 1;
        Ok(NoiseTree::build_with_budget(cfg.spec.m, d.steps, cfg.spec.horizon, recombine, self.budget)?)
    }

    fn backward(&self, cfg: &Config) -> BackwardOptions {
        BackwardOptions {
            penalty: 0.0,
            linear: SolverOptions { tol: cfg.tolerances.linear, max_iter: 0 },
            inner_tol: cfg.tolerances.inner,
            max_inner: cfg.tolerances.max_inner,
            exec: self.exec,
        }
    }

    fn penalty(&self, cfg: &Config) -> PenaltyOptions {
        PenaltyOptions {
            schedule: cfg.penalization.schedule(),
            backward: self.backward(cfg),
            monotonicity_tol: cfg.tolerances.monotonicity,
            strict_monotonicity: false,
        }
    }

    fn rbspde(&self, cfg: &Config) -> RbspdeOptions {
        RbspdeOptions {
            penalty: self.penalty(cfg),
            picard_tol: cfg.tolerances.picard,
            theta_step: cfg.continuation.theta_step,
            theta_min: cfg.continuation.theta_min,
            max_picard: cfg.continuation.max_picard,
            ..Default::default()
        }
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn record_run(m: &mut Manifest, cfg: &Config, ctx: &Ctx) {
    let d = &cfg.discretization;
    m.set("dim", cfg.spec.d);
    m.set("noise_dim", cfg.spec.m);
    m.set("horizon", cfg.spec.horizon);
    m.set("grid", join(&d.grid));
    m.set("steps", d.steps);
    m.set("recombine", d.recombine && cfg.spec.m == 1);
    m.set("seed", cfg.seed);
    m.set("schedule", cfg.penalization.schedule().iter().map(|n| format!("{n:e}")).collect::<Vec<_>>().join(","));
    let t = &cfg.tolerances;
    m.set("tol.linear", format!("{:e}", t.linear));
    m.set("tol.inner", format!("{:e}", t.inner));
    m.set("tol.max_inner", t.max_inner);
    m.set("tol.monotonicity", format!("{:e}", t.monotonicity));
    m.set("tol.complementarity", format!("{:e}", t.complementarity));
    m.set("tol.picard", format!("{:e}", t.picard));
    m.set("tol.comparison", format!("{:e}", t.comparison));
    m.set("tol.equivalence", format!("{:e}", t.equivalence));
    m.set("workers", ctx.common.workers.map_or("default".to_string(), |w| w.to_string()));
    m.set("budget", ctx.budget);
}

fn grid_of(cfg: &Config) -> Result<SpatialGrid> {
    Ok(cfg.spec.grid(&cfg.discretization.grid)?)
}

fn write_solution(m: &mut Manifest, sol: &BackwardSolution, grid: &SpatialGrid, spec: &ProblemSpec) -> Result<()> {
    sol.write_csv(&m.artifact("u.csv"), grid, None)?;
    for r in 0..spec.m {
        sol.write_csv(&m.artifact(&format!("v{}.csv", r + 1)), grid, Some(r))?;
    }
    Ok(())
}

fn record_root(m: &mut Manifest, sol: &BackwardSolution, grid: &SpatialGrid) {
    let root = sol.root();
    m.set("result.root_max_abs_u", format!("{:e}", root.max_abs()));
    m.set("result.root_l2_u", format!("{:e}", root.inner(root, grid).sqrt()));
    m.set("result.max_abs_u", format!("{:e}", sol.max_abs_u()));
    m.set("result.max_abs_v", format!("{:e}", sol.max_abs_v()));
}

pub fn validate(ctx: &Ctx, config: &Path, m: &mut Manifest) -> Result<Outcome> {
    let cfg = ctx.load(config, m, "")?;
    let report = validate_assumptions(&cfg.spec, cfg.checks.sample_budget, cfg.seed)?;
    let mut text = report.to_text();
    for c in &report.checks {
        m.check(c.name, c.worst, c.bound, c.passed);
        if !c.passed {
            eprintln!("{} failed: {} (worst {:e}, bound {:e})", c.name, c.detail, c.worst, c.bound);
        }
    }
    let warnings = boundary_warnings(&cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
        text.push_str(&format!("warning={w}\n"));
    }
    m.set("result.boundary_warnings", warnings.len());
    fs::write(m.artifact("assumptions.txt"), text)?;
    Ok(Outcome::from_checks(m))
}

/// Terminal value or positive obstacle on the faces of the box, where the
/// zero boundary condition of the truncated problem takes over.
fn boundary_warnings(cfg: &Config) -> Result<Vec<String>> {
    let grid = grid_of(cfg)?;
    let spec = &cfg.spec;
    let thr = cfg.checks.boundary_threshold;
    let node = NodeCtx::root(spec.m);
    let mut worst_g: f64 = 0.0;
    let mut worst_xi: f64 = 0.0;
    let mut x = vec![0.0; spec.d];
    for idx in 0..grid.len() {
        let mi = grid.multi_index(idx);
        grid.point_into(idx, &mut x);
        let mut on_face = false;
        for (a, (i, n)) in mi.iter().zip(grid.counts()).enumerate() {
            if *i == 0 {
                x[a] = spec.domain[a].0;
                on_face = true;
            } else if *i + 1 == *n {
                x[a] = spec.domain[a].1;
                on_face = true;
            }
        }
        if !on_face {
            continue;
        }
        let g = (spec.terminal)(&Point { t: spec.horizon, x: &x, node: &node });
        worst_g = worst_g.max(g.abs());
        if let Some(o) = &spec.obstacle {
            for t in [0.0, spec.horizon] {
                worst_xi = worst_xi.max(o(&Point { t, x: &x, node: &node }).max(0.0));
            }
        }
    }
    let mut out = Vec::new();
    if worst_g > thr {
        out.push(format!("|terminal| reaches {worst_g:e} on the boundary (threshold {thr:e})"));
    }
    if worst_xi > thr {
        out.push(format!("obstacle reaches {worst_xi:e} on the boundary (threshold {thr:e})"));
    }
    Ok(out)
}

pub fn solve(ctx: &Ctx, config: &Path, m: &mut Manifest) -> Result<Outcome> {
    let cfg = ctx.load(config, m, "")?;
    let grid = grid_of(&cfg)?;
    let tree = ctx.tree(&cfg)?;
    let out = solve_rbspde(&cfg.spec, &tree, &grid, &ctx.rbspde(&cfg))?;
    write_solution(m, &out.solution, &grid, &cfg.spec)?;
    out.measure.write_sparse_csv(&m.artifact("mu.csv"), &grid)?;
    out.initial.write_csv(&m.artifact("penalization.csv"))?;
    out.trace.write_csv(&m.artifact("trace.csv"))?;
    record_root(m, &out.solution, &grid);
    let model = SpecModel::new(&cfg.spec, &tree, &grid)?;
    let comp = solution_complementarity(&out.solution, &model)?;
    m.set("result.measure_mass", format!("{:e}", out.measure.mass()));
    m.set("result.complementarity_signed", format!("{:e}", comp.signed));
    m.set("result.min_gap", format!("{:e}", comp.min_gap));
    m.set("result.theta_breakpoints", join(&out.trace.breakpoints));
    m.set("result.halvings", out.trace.halvings);
    m.check_le("complementarity", comp.residual, cfg.tolerances.complementarity);
    m.check_le("monotonicity", out.initial.max_monotonicity_violation().max(0.0), cfg.tolerances.monotonicity);
    if let Some(r) = out.trace.final_residual() {
        m.check_le("picard", r, cfg.tolerances.picard);
    }
    if let Some(r) = out.trace.max_accepted_ratio() {
        m.check("contraction", r, 1.0, r < 1.0);
    }
    Ok(Outcome::Pass)
}

pub fn bspde(ctx: &Ctx, config: &Path, m: &mut Manifest) -> Result<Outcome> {
    let cfg = ctx.load(config, m, "")?;
    let grid = grid_of(&cfg)?;
    let tree = ctx.tree(&cfg)?;
    let sol = solve_linear_bspde(&cfg.spec, &tree, &grid, &ctx.backward(&cfg))?;
    write_solution(m, &sol, &grid, &cfg.spec)?;
    record_root(m, &sol, &grid);
    let model = SpecModel::new(&cfg.spec, &tree, &grid)?.frozen().without_obstacle();
    let energy = energy_identity(&sol, &model)?;
    m.set("result.energy_residual", format!("{:e}", energy.max));
    m.set("result.energy_closed", format!("{:e}", energy.closed));
    m.set("result.martingale_residual", format!("{:e}", sol.martingale_residual.iter().flatten().fold(0.0_f64, |a, r| a.max(*r))));
    Ok(Outcome::Pass)
}

pub fn penalize(ctx: &Ctx, config: &Path, m: &mut Manifest) -> Result<Outcome> {
    let cfg = ctx.load(config, m, "")?;
    let grid = grid_of(&cfg)?;
    let tree = ctx.tree(&cfg)?;
    let model = SpecModel::new(&cfg.spec, &tree, &grid)?;
    let run = run_penalization(&model, &ctx.penalty(&cfg))?;
    run.write_csv(&m.artifact("penalization.csv"))?;
    write_solution(m, &run.solution, &grid, &cfg.spec)?;
    run.measure.write_sparse_csv(&m.artifact("mu.csv"), &grid)?;
    record_root(m, &run.solution, &grid);
    let last = run.last();
    m.set("result.final_n", last.n);
    m.set("result.penalty_mass", format!("{:e}", last.penalty_mass));
    m.set("result.measure_mass", format!("{:e}", last.measure_mass));
    m.set("result.complementarity_signed", format!("{:e}", last.complementarity.signed));
    m.set("result.min_gap", format!("{:e}", last.complementarity.min_gap));
    if let Some(o) = run.violation_order() {
        m.set("result.violation_order", format!("{o:.4}"));
    }
    m.check_le("monotonicity", run.max_monotonicity_violation().max(0.0), cfg.tolerances.monotonicity);
    m.check_le("complementarity", last.complementarity.residual, cfg.tolerances.complementarity);
    if let Some(r) = run.mass_ratio() {
        m.check_le("mass_ratio", r, 10.0);
    }
    Ok(Outcome::Pass)
}

pub fn compare(ctx: &Ctx, lower: &Path, upper: &Path, m: &mut Manifest) -> Result<Outcome> {
    let lo = ctx.load(lower, m, "")?;
    let hi = ctx.load(upper, m, ".upper")?;
    if lo.spec.d != hi.spec.d || lo.spec.m != hi.spec.m || lo.spec.horizon != hi.spec.horizon || lo.spec.domain != hi.spec.domain {
        return Err(input("the two configs must share dimension, noise dimension, horizon and domain"));
    }
    let grid = grid_of(&lo)?;
    let tree = ctx.tree(&lo)?;
    let report = comparison_test(&lo.spec, &hi.spec, &tree, &grid, &ctx.rbspde(&lo))?;
    if let Some(reason) = &report.skipped {
        eprintln!("comparison skipped: {reason}");
        m.set("result.skipped", reason);
        m.check("comparison", f64::NAN, lo.tolerances.comparison, false);
        return Ok(Outcome::Fail);
    }
    let (a, b) = (report.lo.as_ref().expect("solved"), report.hi.as_ref().expect("solved"));
    let diff: Vec<(usize, usize, Field)> = b
        .solution
        .u
        .iter()
        .zip(&a.solution.u)
        .enumerate()
        .flat_map(|(k, (lh, ll))| lh.iter().zip(ll).enumerate().map(move |(i, (h, l))| (k, i, h.sub(l))))
        .collect();
    write_node_fields_csv(&m.artifact("difference.csv"), &grid, diff.iter().map(|(k, i, f)| (*k, *i, f)))?;
    m.set("result.max_violation", format!("{:e}", report.max_violation));
    m.check_le("comparison", report.max_violation, lo.tolerances.comparison);
    Ok(Outcome::from_checks(m))
}

fn joint_tree(ctx: &Ctx, cfg: &Config, w: &NoiseTree) -> Result<JointTree> {
    let recombine = cfg.rbsde.recombine && cfg.spec.d == 1;
    let b = NoiseTree::build_with_budget(cfg.spec.d, w.steps(), cfg.spec.horizon, recombine, ctx.budget)?;
    let joint = JointTree::new(w.clone(), b)?;
    if joint.total_nodes() > ctx.budget {
        return Err(input(format!("joint tree has {} nodes, budget is {}", joint.total_nodes(), ctx.budget)));
    }
    Ok(joint)
}

fn starts_of(cfg: &Config, grid: &SpatialGrid) -> Vec<Vec<f64>> {
    if cfg.rbsde.starts.is_empty() {
        (0..grid.len()).map(|p| grid.point(p)).collect()
    } else {
        cfg.rbsde.starts.clone()
    }
}

fn linear_setting(spec: &ProblemSpec) -> Result<()> {
    check_linear_setting(spec).map_err(|e| input(format!("{e}; the pathwise checks cover only the linear characteristic setting")))
}

pub fn rbsde_check(ctx: &Ctx, config: &Path, samples: Option<usize>, m: &mut Manifest) -> Result<Outcome> {
    let cfg = ctx.load(config, m, "")?;
    linear_setting(&cfg.spec)?;
    let grid = grid_of(&cfg)?;
    let tree = ctx.tree(&cfg)?;
    let joint = joint_tree(ctx, &cfg, &tree)?;
    let out = solve_rbspde(&cfg.spec, &tree, &grid, &ctx.rbspde(&cfg))?;
    let opts = EquivalenceOptions {
        starts: starts_of(&cfg, &grid),
        samples: samples.unwrap_or(cfg.rbsde.samples),
        seed: cfg.seed,
        exec: ctx.exec,
        keep_rows: true,
    };
    m.set("rbsde.starts", opts.starts.len());
    m.set("rbsde.samples", opts.samples);
    let report = equivalence_residual(&cfg.spec, &out.solution, &grid, &joint, &opts)?;
    report.write_csv(&m.artifact("equivalence.csv"))?;
    let push = measure_pushforward(&cfg.spec, &out.measure, &grid, &joint, |_, x| (-x.iter().map(|c| c * c).sum::<f64>()).exp(), ctx.exec)?;
    m.set("result.samples", report.samples);
    m.set("result.discarded", report.discarded);
    m.set("result.mean_y", format!("{:e}", report.mean_y));
    m.set("result.max_z", format!("{:e}", report.max_z));
    m.set("result.mean_z", format!("{:e}", report.mean_z));
    m.set("result.max_z_tilde", format!("{:e}", report.max_z_tilde));
    m.set("result.mean_z_tilde", format!("{:e}", report.mean_z_tilde));
    m.set("result.pushforward_grid", format!("{:e}", push.grid_side));
    m.set("result.pushforward_paths", format!("{:e}", push.path_side));
    if report.discarded > 0 {
        eprintln!("warning: {} samples left the grid box and were discarded", report.discarded);
    }
    m.check_le("equivalence", report.max_y, cfg.tolerances.equivalence);
    m.check_le("pushforward", push.relative_gap, PUSHFORWARD_TOL);
    Ok(Outcome::from_checks(m))
}

pub fn stopping(ctx: &Ctx, config: &Path, start: Option<Vec<f64>>, m: &mut Manifest) -> Result<Outcome> {
    let cfg = ctx.load(config, m, "")?;
    linear_setting(&cfg.spec)?;
    let spec = &cfg.spec;
    let x = match start {
        Some(x) => x,
        None => cfg
            .rbsde
            .starts
            .first()
            .cloned()
            .unwrap_or_else(|| spec.domain.iter().map(|(a, b)| 0.5 * (a + b)).collect()),
    };
    if x.len() != spec.d {
        return Err(input(format!("start point has {} coordinates for a {}-dimensional problem", x.len(), spec.d)));
    }
    m.set("start", join(&x));
    let joint = JointTree::build(spec.m, spec.d, cfg.discretization.steps, spec.horizon, false)?;
    let data = CharacteristicData::sample(spec, &joint, &x, ctx.exec)?;
    let rb = solve_reflected_bsde(&data, &joint, ctx.exec)?;
    let snell = snell_value(&data, &joint)?;
    let bf = brute_force_stopping(&data, &joint, DEFAULT_POLICY_BUDGET)?;

    let mut w = csv::Writer::from_path(m.artifact("stopping.csv"))?;
    w.write_record(["level", "node", "obstacle", "y", "snell", "dk", "stop"])?;
    for k in 0..=joint.steps() {
        for i in 0..joint.level_size(k) {
            w.write_record([
                k.to_string(),
                i.to_string(),
                format!("{:.12e}", data.obstacle[k][i]),
                format!("{:.12e}", rb.y[k][i]),
                format!("{:.12e}", snell[k][i]),
                rb.dk.get(k).map_or_else(String::new, |l| format!("{:.12e}", l[i])),
                u8::from(bf.best.stop[k][i]).to_string(),
            ])?;
        }
    }
    w.flush()?;
    let nodewise = rb.y.iter().flatten().zip(snell.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    m.set("result.value", format!("{:.15e}", bf.value));
    m.set("result.policies", bf.policies);
    m.set("result.joint_nodes", joint.total_nodes());
    m.check_le("brute_force_vs_snell", (bf.value - snell[0][0]).abs(), STOPPING_TOL);
    m.check_le("snell_vs_rbsde", nodewise, STOPPING_TOL);
    Ok(Outcome::from_checks(m))
}

struct LevelRow {
    grid: Vec<usize>,
    steps: usize,
    h: f64,
    dt: f64,
    l2_error: Option<f64>,
    energy: f64,
    equivalence: Option<f64>,
    violation: f64,
}

/// `sqrt(E ‖u_k - exact(t_k)‖²)` maximized over levels.
fn exact_error(cfg: &Config, sol: &BackwardSolution, tree: &NoiseTree, grid: &SpatialGrid) -> Option<f64> {
    let exact = cfg.exact.as_ref()?;
    let mut x = vec![0.0; grid.dim()];
    let mut worst: f64 = 0.0;
    for (k, level) in sol.u.iter().enumerate() {
        let t = tree.time(k);
        let errs: Vec<f64> = level
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let w = tree.position(k, i);
                let mut s = 0.0;
                for (p, v) in u.iter().enumerate() {
                    grid.point_into(p, &mut x);
                    let e = exact.eval(&ExprArgs { t, x: &x, w: &w, level: k, node: i, ..Default::default() });
                    s += (v - e).powi(2);
                }
                s * grid.cell_volume()
            })
            .collect();
        worst = worst.max(tree.expectation(k, &errs).sqrt());
    }
    Some(worst)
}

fn order(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
        _ => None,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.12e}"))
}

pub fn convergence(ctx: &Ctx, config: &Path, levels: Option<usize>, vary: Vary, m: &mut Manifest) -> Result<Outcome> {
    let base = ctx.load(config, m, "")?;
    let levels = levels.unwrap_or(base.convergence.levels);
    if levels < 2 {
        return Err(input("a refinement study needs at least 2 levels"));
    }
    m.set("convergence.levels", levels);
    m.set("convergence.vary", format!("{vary:?}").to_lowercase());
    let pathwise = check_linear_setting(&base.spec).is_ok();
    let mut rows = Vec::with_capacity(levels);
    for j in 0..levels {
        let mut cfg = base.clone();
        if vary != Vary::Time {
            cfg.discretization.grid = base.discretization.grid.iter().map(|n| ((n + 1) << j) - 1).collect();
        }
        if vary != Vary::Space {
            cfg.discretization.steps = base.discretization.steps << j;
        }
        let grid = grid_of(&cfg)?;
        let tree = ctx.tree(&cfg)?;
        let out = solve_rbspde(&cfg.spec, &tree, &grid, &ctx.rbspde(&cfg)).with_context(|| format!("refinement level {j}"))?;
        let model = SpecModel::new(&cfg.spec, &tree, &grid)?;
        let energy = energy_identity(&out.solution, &model)?.max;
        let comp = solution_complementarity(&out.solution, &model)?;
        let equivalence = if pathwise {
            match joint_tree(ctx, &cfg, &tree) {
                Ok(joint) => {
                    let opts = EquivalenceOptions {
                        starts: if cfg.rbsde.starts.is_empty() {
                            vec![cfg.spec.domain.iter().map(|(a, b)| 0.5 * (a + b)).collect()]
                        } else {
                            cfg.rbsde.starts.clone()
                        },
                        samples: cfg.rbsde.samples,
                        seed: cfg.seed,
                        exec: ctx.exec,
                        keep_rows: false,
                    };
                    Some(equivalence_residual(&cfg.spec, &out.solution, &grid, &joint, &opts)?.max_y)
                }
                Err(e) => {
                    m.set(&format!("note.level{j}"), format!("equivalence skipped: {e}"));
                    None
                }
            }
        } else {
            None
        };
        rows.push(LevelRow {
            grid: cfg.discretization.grid.clone(),
            steps: cfg.discretization.steps,
            h: grid.max_spacing(),
            dt: tree.dt(),
            l2_error: exact_error(&cfg, &out.solution, &tree, &grid),
            energy,
            equivalence,
            violation: (-comp.min_gap).max(0.0),
        });
    }

    let mut w = csv::Writer::from_path(m.artifact("convergence.csv"))?;
    w.write_record(["level", "grid", "steps", "h", "dt", "l2_error", "energy_residual", "equivalence_residual", "obstacle_violation"])?;
    for (j, r) in rows.iter().enumerate() {
        w.write_record([
            j.to_string(),
            r.grid.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
            r.steps.to_string(),
            format!("{:.12e}", r.h),
            format!("{:.12e}", r.dt),
            cell(r.l2_error),
            format!("{:.12e}", r.energy),
            cell(r.equivalence),
            format!("{:.12e}", r.violation),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(m.artifact("orders.csv"))?;
    w.write_record(["metric", "from_level", "to_level", "order"])?;
    for (j, pair) in rows.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        for (name, o) in [
            ("l2_error", order(a.l2_error, b.l2_error)),
            ("energy_residual", order(Some(a.energy), Some(b.energy))),
            ("equivalence_residual", order(a.equivalence, b.equivalence)),
            ("obstacle_violation", order(Some(a.violation), Some(b.violation))),
        ] {
            if let Some(o) = o {
                w.write_record([name.to_string(), j.to_string(), (j + 1).to_string(), format!("{o:.6}")])?;
                m.set(&format!("result.order.{name}.{j}"), format!("{o:.4}"));
            }
        }
    }
    w.flush()?;
    Ok(Outcome::Pass)
}

pub fn plot(csv_path: &Path, kind: PlotKind, level: usize, max_lines: usize, m: &mut Manifest) -> Result<Outcome> {
    m.set("input", csv_path.display());
    let fig = figure_from_csv(csv_path, kind, level, max_lines).map_err(|e| input(format!("{e:#}")))?;
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let name: PathBuf = format!("{stem}-{}.svg", format!("{kind:?}").to_lowercase()).into();
    let path = m.artifact(name.to_str().expect("utf-8 name"));
    fs::write(path, render_svg(&fig))?;
    m.set("result.series", fig.series.len());
    Ok(Outcome::Pass)
}
