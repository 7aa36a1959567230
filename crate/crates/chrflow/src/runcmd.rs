//! The `run` subcommand: one batch solve from a JSON config.
//!
//! Writes the trajectory CSV and optional field snapshots. A solver failure
//! still writes whatever part of the trajectory was computed, then exits
//! nonzero with the diagnostic; a failed de-truncation check is reported in
//! the CSV but is not an error.

use crate::config::{RunConfig, SolverKind};
use crate::formats;
use crate::Failure;
use chr_core::gradientflow::{run_weak, Trajectory};
use chr_core::strongsolver::picard_solve;
use std::path::Path;

pub fn cmd_run(config_path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Failure::Config(format!("reading {}: {e}", config_path.display())))?;
    let cfg = RunConfig::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
    let prep = cfg.prepare().map_err(|e| Failure::Config(e.to_string()))?;

    // Echo the effective configuration, defaults included, before solving.
    println!(
        "{}",
        serde_json::to_string_pretty(&cfg).expect("config serializes")
    );
    println!(
        "derived: tau = {}, nodes = {}",
        prep.tg.tau(),
        prep.grid.node_count()
    );

    let traj: Trajectory = match cfg.solver.kind {
        SolverKind::Weak => {
            let outcome = run_weak(&prep.grid, &prep.c0, &prep.tg, &prep.params, &prep.newton);
            if let Some(err) = outcome.error {
                // Keep the partial trajectory on disk for post-mortems.
                write_outputs(&cfg, &prep.grid, &outcome.trajectory)?;
                return Err(Failure::Run(format!(
                    "solve stopped after {} of {} steps: {err}",
                    outcome.trajectory.reports.len().saturating_sub(1),
                    cfg.time.steps
                )));
            }
            outcome.trajectory
        }
        SolverKind::Strong => picard_solve(
            &prep.grid,
            &prep.c0,
            &prep.params,
            &prep.tg,
            cfg.solver.picard_tol,
            cfg.solver.picard_max_outer,
        )
        .map_err(|e| Failure::Run(format!("strong solve failed: {e}")))?,
    };

    write_outputs(&cfg, &prep.grid, &traj)?;

    if let Some(p) = &traj.picard {
        println!(
            "strong solve: {} outer sweeps, contraction ratio {}, de-truncation check {}",
            p.outer_iters,
            p.contraction_ratio(),
            if p.detrunc_ok { "passed" } else { "FAILED (see detrunc_ok column)" }
        );
        if let Some((step, node)) = p.first_violation {
            println!("first truncation-region exit at step {step}, node {node}");
        }
    }
    let last = traj.reports.last().expect("at least the initial report");
    println!(
        "done: {} steps, final time {}, final energy {}, final mass {}",
        traj.reports.len() - 1,
        last.time,
        last.energy,
        last.mass
    );
    Ok(())
}

fn write_outputs(cfg: &RunConfig, grid: &chr_core::mesh::Grid, traj: &Trajectory) -> Result<(), Failure> {
    let path = Path::new(&cfg.output.trajectory);
    formats::write_file(path, &formats::trajectory_csv(traj)).map_err(Failure::Run)?;
    println!("trajectory: {}", path.display());

    let stride = cfg.output.snapshot_stride;
    if stride > 0 {
        let last = traj.states.len() - 1;
        for (k, state) in traj.states.iter().enumerate() {
            if k % stride == 0 || k == last {
                let snap = format!("{}_{:06}.csv", cfg.output.snapshot_prefix, k);
                formats::write_file(Path::new(&snap), &grid.snapshot_csv(state))
                    .map_err(Failure::Run)?;
            }
        }
        println!("snapshots: {}_*.csv (stride {stride})", cfg.output.snapshot_prefix);
    }
    Ok(())
}
