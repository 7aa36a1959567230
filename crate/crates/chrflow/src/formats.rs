//! CSV writers for trajectories and verification reports.
//!
//! All numbers are written with Rust's shortest round-trip formatting, so a
//! file is reproduced byte for byte by a rerun with the same inputs.

use chr_core::gradientflow::Trajectory;
use std::fmt::Write as _;
use std::path::Path;

/// Render a trajectory as CSV. Strong-pathway trajectories carry three extra
/// columns with the fixed-point diagnostics (constant down the file: they
/// describe the whole solve).
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    let strong = traj.picard.is_some();
    out.push_str("i,t,energy,Astar,Aanchor,mass,flux,newton_iters,max_residual");
    if strong {
        out.push_str(",outer_iter,contraction_ratio,detrunc_ok");
    }
    out.push('\n');
    for r in &traj.reports {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.index,
            r.time,
            r.energy,
            r.astar,
            r.aanchor,
            r.mass,
            r.flux,
            r.newton_iters,
            r.max_residual
        );
        if let Some(p) = &traj.picard {
            let _ = write!(out, ",{},{},{}", p.outer_iters, p.contraction_ratio(), p.detrunc_ok);
        }
        out.push('\n');
    }
    out
}

/// One verification check: `lhs` compared against `rhs` within `tolerance`.
/// The meaning of the three numbers is check-specific (a residual against
/// zero, an observed order against a target, ...) but `pass` is always the
/// final word.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(check: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64, pass: bool) -> Self {
        CheckRow { check: check.into(), lhs, rhs, tolerance, pass }
    }
}

/// One time-regularity check, tagged with the fractional order and horizon it
/// was evaluated at. `margin` is `rhs - lhs`: non-negative means the bound
/// holds with room to spare.
#[derive(Debug, Clone)]
pub struct SobolevRow {
    pub check: String,
    pub s: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

pub fn checks_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("check,lhs,rhs,tolerance,pass\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.check, r.lhs, r.rhs, r.tolerance, r.pass);
    }
    out
}

pub fn sobolev_csv(rows: &[SobolevRow]) -> String {
    let mut out = String::from("check,s,T,lhs,rhs,margin,pass\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.check, r.s, r.t, r.lhs, r.rhs, r.margin, r.pass
        );
    }
    out
}

/// Human-readable one-liner per generic check.
pub fn checks_text(rows: &[CheckRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let flag = if r.pass { "ok  " } else { "FAIL" };
        let _ = writeln!(
            out,
            "[{flag}] {:<42} lhs={:<24} rhs={:<24} tol={}",
            r.check, r.lhs, r.rhs, r.tolerance
        );
    }
    out
}

/// Human-readable one-liner per time-regularity check.
pub fn sobolev_text(rows: &[SobolevRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let flag = if r.pass { "ok  " } else { "FAIL" };
        let _ = writeln!(
            out,
            "[{flag}] {:<28} s={:<6} T={:<6} lhs={:<24} rhs={:<24} margin={}",
            r.check, r.s, r.t, r.lhs, r.rhs, r.margin
        );
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("writing {}: {e}", path.display()))
}
