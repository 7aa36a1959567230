//! The `converge` subcommand: self-convergence studies of the configured
//! problem under grid, step-size, or fixed-point-tolerance refinement.
//!
//! Levels run in parallel worker threads; the `CHRFLOW_THREADS` environment
//! variable caps the width. Errors between successive levels must decrease
//! monotonically unless `--allow-preasymptotic` is given.

use crate::config::{RunConfig, SolverKind};
use crate::formats;
use crate::Failure;
use chr_core::gradientflow::{run_weak, TimeGrid};
use chr_core::mesh::{build_grid, restrict_nested, Grid};
use chr_core::strongsolver::picard_solve;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lower")]
pub enum Kind {
    /// Refine the grid, halving the mesh width per level.
    Space,
    /// Refine the time step, halving it per level.
    Time,
    /// Tighten the fixed-point tolerance, one factor of 4 per level
    /// (strong solver configs only).
    Picard,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Space => "space",
            Kind::Time => "time",
            Kind::Picard => "picard",
        }
    }
    fn parameter_label(self) -> &'static str {
        match self {
            Kind::Space => "h",
            Kind::Time => "tau",
            Kind::Picard => "tol",
        }
    }
}

/// One refinement level: the grid it ran on, its refinement parameter, and
/// the trajectory states.
struct LevelOut {
    grid: Grid,
    parameter: f64,
    states: Vec<Vec<f64>>,
    tau: f64,
}

pub fn cmd_converge(
    kind: Kind,
    levels: usize,
    allow_preasymptotic: bool,
    config_path: &Path,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Failure::Config(format!("reading {}: {e}", config_path.display())))?;
    let cfg = RunConfig::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if kind == Kind::Picard && cfg.solver.kind != SolverKind::Strong {
        return Err(Failure::Config(
            "solver.kind: a picard study needs solver.kind = \"strong\"".into(),
        ));
    }

    let outs = run_levels(&cfg, kind, levels)?;

    // Successive-difference errors; with factor-2 (or 4) refinement their
    // ratios expose the observed order directly.
    let mut errors = Vec::new();
    for j in 0..levels - 1 {
        errors.push(match kind {
            Kind::Space => {
                let fine_final = outs[j + 1].states.last().expect("states");
                let restricted = restrict_nested(&outs[j + 1].grid, &outs[j].grid, fine_final)
                    .map_err(|e| Failure::Run(format!("restriction failed: {e}")))?;
                l2_dist(&outs[j].grid, outs[j].states.last().expect("states"), &restricted)
            }
            Kind::Time => l2_dist(
                &outs[j].grid,
                outs[j].states.last().expect("states"),
                outs[j + 1].states.last().expect("states"),
            ),
            Kind::Picard => {
                // Whole-trajectory distance: the fixed-point error lives in
                // L2 of time, not just at the final state.
                let mut acc = 0.0;
                for (a, b) in outs[j].states.iter().zip(outs[j + 1].states.iter()).skip(1) {
                    let d = l2_dist(&outs[j].grid, a, b);
                    acc += outs[j].tau * d * d;
                }
                acc.sqrt()
            }
        });
    }

    let mut orders = Vec::new();
    for j in 0..errors.len().saturating_sub(1) {
        let shrink = outs[j].parameter / outs[j + 1].parameter;
        orders.push((errors[j] / errors[j + 1]).ln() / shrink.ln());
    }
    let observed = ls_order(&outs, &errors);

    let mut csv = format!(
        "# converge kind={} levels={} observed_order={}\n",
        kind.name(),
        levels,
        observed
    );
    csv.push_str("level,");
    csv.push_str(kind.parameter_label());
    csv.push_str(",error,order\n");
    for (j, err) in errors.iter().enumerate() {
        let ord = if j == 0 {
            String::new()
        } else {
            format!("{}", orders[j - 1])
        };
        let _ = writeln!(csv, "{},{},{},{}", j, outs[j].parameter, err, ord);
    }
    let path = out.unwrap_or_else(|| PathBuf::from(format!("converge_{}.csv", kind.name())));
    formats::write_file(&path, &csv).map_err(Failure::Run)?;
    print!("{csv}");
    println!("report: {}", path.display());

    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    if !monotone && !allow_preasymptotic {
        return Err(Failure::Run(
            "error sequence is not monotonically decreasing; \
             rerun with --allow-preasymptotic to accept it"
                .into(),
        ));
    }
    Ok(())
}

/// Build and solve every refinement level, in parallel waves capped by
/// CHRFLOW_THREADS.
fn run_levels(cfg: &RunConfig, kind: Kind, levels: usize) -> Result<Vec<LevelOut>, Failure> {
    let cap = thread_cap(levels);
    let jobs: Vec<usize> = (0..levels).collect();
    let mut results: Vec<Option<Result<LevelOut, Failure>>> = Vec::new();
    results.resize_with(levels, || None);

    for wave in jobs.chunks(cap) {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for &level in wave {
                handles.push((level, scope.spawn(move || solve_level(cfg, kind, level, levels))));
            }
            for (level, h) in handles {
                let res = h.join().unwrap_or_else(|_| {
                    Err(Failure::Run(format!("level {level} worker panicked")))
                });
                results[level] = Some(res);
            }
        });
    }
    results
        .into_iter()
        .map(|r| r.expect("every level ran"))
        .collect()
}

fn thread_cap(levels: usize) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = match std::env::var("CHRFLOW_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                log::warn!("CHRFLOW_THREADS is not a positive integer; using {available}");
                available
            }
        },
        Err(_) => available,
    };
    cap.min(levels).max(1)
}

fn solve_level(cfg: &RunConfig, kind: Kind, level: usize, levels: usize) -> Result<LevelOut, Failure> {
    // Per-kind refinement of one quantity; everything else comes from the
    // config unchanged.
    let factor = 1usize << level;
    let counts: Vec<usize> = match kind {
        Kind::Space => cfg.grid.counts.iter().map(|&n| (n - 1) * factor + 1).collect(),
        _ => cfg.grid.counts.clone(),
    };
    let steps = match kind {
        Kind::Time => cfg.time.steps * factor,
        _ => cfg.time.steps,
    };
    // The finest picard level runs at the configured tolerance; coarser
    // levels loosen it by factors of 4.
    let tol = match kind {
        Kind::Picard => cfg.solver.picard_tol * 4f64.powi((levels - 1 - level) as i32),
        _ => cfg.solver.picard_tol,
    };

    let grid = build_grid(cfg.grid.dim, &cfg.grid.extents, &counts)
        .map_err(|e| Failure::Run(format!("level {level}: {e}")))?;
    let tg = TimeGrid::new(cfg.time.horizon, steps)
        .map_err(|e| Failure::Run(format!("level {level}: {e}")))?;
    let prep_base = cfg.prepare().map_err(|e| Failure::Config(e.to_string()))?;
    let c0 = cfg.initial_field_on(&grid);

    let parameter = match kind {
        Kind::Space => grid.hx().max(if grid.dim() == 2 { grid.hy() } else { 0.0 }),
        Kind::Time => tg.tau(),
        Kind::Picard => tol,
    };

    let states = match cfg.solver.kind {
        SolverKind::Weak => {
            let outcome = run_weak(&grid, &c0, &tg, &prep_base.params, &prep_base.newton);
            if let Some(e) = outcome.error {
                return Err(Failure::Run(format!("level {level}: {e}")));
            }
            outcome.trajectory.states
        }
        SolverKind::Strong => {
            let traj = picard_solve(
                &grid,
                &c0,
                &prep_base.params,
                &tg,
                tol,
                cfg.solver.picard_max_outer,
            )
            .map_err(|e| Failure::Run(format!("level {level}: {e}")))?;
            traj.states
        }
    };
    Ok(LevelOut { grid, parameter, states, tau: tg.tau() })
}

fn l2_dist(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).collect();
    grid.integrate(&sq).max(0.0).sqrt()
}

/// Least-squares slope of ln(error) against ln(parameter).
fn ls_order(outs: &[LevelOut], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = outs[..errors.len()].iter().map(|o| o.parameter.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}
