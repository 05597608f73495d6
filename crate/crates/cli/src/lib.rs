//! Command-line front end of the reflected BSPDE lab.
//!
//! Exit codes: `0` success (and, for verifying verbs, every check passed),
//! `1` a check failed, `2` bad config, flags or budget, `3` solver failure.
//! A manifest is written to the output directory in every case.

pub mod args;
pub mod commands;
pub mod manifest;
pub mod plot;

use std::fs;
use std::time::Instant;

use anyhow::Result;

use args::{Cli, Command};
use commands::{Ctx, InputError, Outcome};
use manifest::Manifest;
use rbspde_core::par::Exec;

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Solve { .. } => "solve",
            Command::Bspde { .. } => "bspde",
            Command::Penalize { .. } => "penalize",
            Command::Compare { .. } => "compare",
            Command::RbsdeCheck { .. } => "rbsde-check",
            Command::Stopping { .. } => "stopping",
            Command::Convergence { .. } => "convergence",
            Command::Plot { .. } => "plot",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<InputError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<rbspde_core::Error>() {
        Some(
            rbspde_core::Error::InvalidInput(_)
            | rbspde_core::Error::Parse { .. }
            | rbspde_core::Error::Config(_)
            | rbspde_core::Error::Budget { .. },
        ) => 2,
        _ => 3,
    }
}

fn dispatch(cli: &Cli, m: &mut Manifest) -> Result<Outcome> {
    let budget = Ctx::budget_from_env()?;
    let exec = if cli.common.workers == Some(1) { Exec::Sequential } else { Exec::Parallel };
    let ctx = Ctx { common: &cli.common, exec, budget };
    match &cli.command {
        Command::Validate { config } => commands::validate(&ctx, config, m),
        Command::Solve { config } => commands::solve(&ctx, config, m),
        Command::Bspde { config } => commands::bspde(&ctx, config, m),
        Command::Penalize { config } => commands::penalize(&ctx, config, m),
        Command::Compare { lower, upper } => commands::compare(&ctx, lower, upper, m),
        Command::RbsdeCheck { config, samples } => commands::rbsde_check(&ctx, config, *samples, m),
        Command::Stopping { config, start } => commands::stopping(&ctx, config, start.clone(), m),
        Command::Convergence { config, levels, vary } => commands::convergence(&ctx, config, *levels, *vary, m),
        Command::Plot { csv, kind, level, max_lines } => commands::plot(csv, *kind, *level, *max_lines, m),
    }
}

/// Run one command and return its exit code.
pub fn run(cli: &Cli) -> i32 {
    let mut m = Manifest::new(&cli.common.out, cli.command.name());
    m.set("status", "running");
    let started = Instant::now();
    let result = fs::create_dir_all(&cli.common.out).map_err(anyhow::Error::from).and_then(|_| match cli.common.workers {
        Some(0) => Err(InputError("--workers must be at least 1".into()).into()),
        Some(w) if w > 1 => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build()?;
            pool.install(|| dispatch(cli, &mut m))
        }
        _ => dispatch(cli, &mut m),
    });
    m.set("wall_clock_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    let code = match &result {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 1,
        Err(e) => exit_code(e),
    };
    m.set("status", match code {
        0 => "pass",
        1 => "fail",
        _ => "error",
    });
    if let Err(e) = &result {
        m.set("error", format!("{e:#}"));
        eprintln!("error: {e:#}");
    }
    for c in m.checks() {
        println!("{}: {} (value {:e}, bound {:e})", c.name, if c.passed { "pass" } else { "fail" }, c.value, c.bound);
    }
    match m.write() {
        Ok(p) => println!("manifest: {}", p.display()),
        Err(e) => {
            eprintln!("error: cannot write manifest: {e}");
            return code.max(3);
        }
    }
    code
}
