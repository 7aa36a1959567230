//! The `verify` subcommand: seeded property suites over the library modules.
//!
//! Each suite re-checks the module's documented invariants on randomized
//! inputs drawn from a counter-based generator, so a rerun with the same seed
//! produces byte-identical reports. Every check becomes one CSV row; any
//! failed row makes the command exit nonzero.

use crate::formats::{self, CheckRow, SobolevRow};
use crate::Failure;
use chr_core::gradientflow::{run_weak, TimeGrid};
use chr_core::mesh::{build_grid, Grid};
use chr_core::operators::{
    bbar, dual_h1_norm_with_rep, h1_norm, robin_forward, solve_elasticity, stiffness_apply,
    Diffusion, ElasticSystem, NewtonConfig,
};
use chr_core::physics::{ElasticParams, FreeEnergy, ModelParams, ReactionRate};
use chr_core::sobolev::{extension_bound, fractional_norm, gagliardo_seminorm, TimeSeries};
use chr_core::strongsolver::{
    picard_solve, truncated_laplacian_fprime, BiharmonicData, BiharmonicStepper, Truncation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lower")]
pub enum Suite {
    Physics,
    Operators,
    Gradientflow,
    Strongsolver,
    Sobolev,
    All,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Physics => "physics",
            Suite::Operators => "operators",
            Suite::Gradientflow => "gradientflow",
            Suite::Strongsolver => "strongsolver",
            Suite::Sobolev => "sobolev",
            Suite::All => "all",
        }
    }
}

fn core_err(e: impl core::fmt::Display) -> Failure {
    Failure::Run(format!("verify: {e}"))
}

/// Per-suite generator, decorrelated from the other suites.
fn suite_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn cmd_verify(suite: Suite, seed: u64, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut generic: Vec<CheckRow> = Vec::new();
    let mut sobolev: Vec<SobolevRow> = Vec::new();

    let run_physics = matches!(suite, Suite::Physics | Suite::All);
    let run_operators = matches!(suite, Suite::Operators | Suite::All);
    let run_gradientflow = matches!(suite, Suite::Gradientflow | Suite::All);
    let run_strongsolver = matches!(suite, Suite::Strongsolver | Suite::All);
    let run_sobolev = matches!(suite, Suite::Sobolev | Suite::All);

    if run_physics {
        suite_physics(seed, &mut generic)?;
    }
    if run_operators {
        suite_operators(seed, &mut generic)?;
    }
    if run_gradientflow {
        suite_gradientflow(seed, &mut generic)?;
    }
    if run_strongsolver {
        suite_strongsolver(seed, &mut generic)?;
    }
    if run_sobolev {
        suite_sobolev(seed, &mut sobolev)?;
    }

    // Reports: CSV file(s) plus the same rows as text on stdout.
    let base = out.unwrap_or_else(|| PathBuf::from(format!("verify_{}.csv", suite.name())));
    if !generic.is_empty() {
        formats::write_file(&base, &formats::checks_csv(&generic)).map_err(Failure::Run)?;
        print!("{}", formats::checks_text(&generic));
        println!("report: {}", base.display());
    }
    if !sobolev.is_empty() {
        let path = if generic.is_empty() {
            base.clone()
        } else {
            // suite=all writes the time-regularity rows beside the main file
            // because their schema differs.
            sibling(&base, "_sobolev")
        };
        formats::write_file(&path, &formats::sobolev_csv(&sobolev)).map_err(Failure::Run)?;
        print!("{}", formats::sobolev_text(&sobolev));
        println!("report: {}", path.display());
    }

    let total = generic.len() + sobolev.len();
    let failed =
        generic.iter().filter(|r| !r.pass).count() + sobolev.iter().filter(|r| !r.pass).count();
    println!("suite {}: {}/{} checks passed", suite.name(), total - failed, total);
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} of {total} checks failed")));
    }
    Ok(())
}

fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("verify");
    let mut name = format!("{stem}{suffix}");
    if let Some(ext) = base.extension().and_then(|s| s.to_str()) {
        name.push('.');
        name.push_str(ext);
    }
    base.with_file_name(name)
}

// ---------------------------------------------------------------------------
// shared random input builders

/// Smooth random field: base plus a short cosine series, bounded by `amp`.
fn smooth_field(grid: &Grid, rng: &mut ChaCha8Rng, base: f64, amp: f64) -> Vec<f64> {
    use core::f64::consts::PI;
    let coef: Vec<(f64, f64)> = (1..=4)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm: f64 = coef.iter().map(|(a, b)| a.abs() + b.abs()).sum::<f64>().max(1e-12);
    grid.field_from_fn(|x, y| {
        let mut v = 0.0;
        for (k, (a, b)) in coef.iter().enumerate() {
            let kk = (k + 1) as f64;
            let mut m = a * (kk * PI * x / grid.lx()).cos();
            if grid.dim() == 2 {
                m += b * (kk * PI * y / grid.ly()).cos() * (kk * PI * x / grid.lx()).cos();
            }
            v += m;
        }
        base + amp * v / norm
    })
}

/// Smooth random time signal: a few low modes plus a linear drift.
fn smooth_series(rng: &mut ChaCha8Rng, horizon: f64, count: usize) -> TimeSeries {
    use core::f64::consts::PI;
    let base = rng.gen_range(-1.0..1.0);
    let drift = rng.gen_range(-1.0..1.0);
    let coef: Vec<(f64, f64)> = (1..=4)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    TimeSeries::from_fn(horizon, count, |t| {
        let mut v = base + drift * t / horizon;
        for (k, (a, ph)) in coef.iter().enumerate() {
            v += a * ((k + 1) as f64 * PI * t / horizon + ph).cos();
        }
        v
    })
    .expect("series construction")
}

fn l2_dist(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).collect();
    grid.integrate(&sq).max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// physics

fn suite_physics(seed: u64, rows: &mut Vec<CheckRow>) -> Result<(), Failure> {
    let mut rng = suite_rng(seed, 1);

    // Densities: a centered difference of each derivative order matches the
    // next order. Samples stay inside the admissible interval.
    let densities: [(&str, FreeEnergy); 3] = [
        ("regular_solution", FreeEnergy::regular_solution(3.0, 1.0).map_err(core_err)?),
        ("double_well", FreeEnergy::double_well()),
        ("quadratic", FreeEnergy::quadratic()),
    ];
    for (name, fe) in &densities {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let s = rng.gen_range(0.05..0.95);
            for order in 0..3usize {
                let h = 1e-5;
                let hi = fe.eval(s + h, order).map_err(core_err)?;
                let lo = fe.eval(s - h, order).map_err(core_err)?;
                let fd = (hi - lo) / (2.0 * h);
                let exact = fe.eval(s, order + 1).map_err(core_err)?;
                let rel = (fd - exact).abs() / exact.abs().max(1.0);
                worst = worst.max(rel);
            }
        }
        rows.push(CheckRow::new(
            format!("physics.fe_derivatives_{name}"),
            worst,
            0.0,
            1e-6,
            worst <= 1e-6,
        ));
    }

    // Rates: dR/dw and the antiderivative G are consistent with R. The
    // truncated kind has a curvature kink at |w - mu_e| = w_max, so samples
    // are nudged off a small window around it.
    let rates: [(&str, ReactionRate); 3] = [
        ("butler_volmer", ReactionRate::butler_volmer(1.0, 2.0, 1.0, 0.1).map_err(core_err)?),
        ("truncated_bv", ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.1, 3.0).map_err(core_err)?),
        ("linear", ReactionRate::linear(0.7).map_err(core_err)?),
    ];
    for (name, rate) in &rates {
        let mut worst_dw = 0.0f64;
        let mut worst_g = 0.0f64;
        for _ in 0..100 {
            let s = rng.gen_range(0.1..0.9);
            let mut w: f64 = rng.gen_range(-6.0..6.0);
            for kink in [3.1f64, -2.9] {
                if (w - kink).abs() < 1e-3 {
                    w += 5e-3;
                }
            }
            let h = 1e-5;
            let r_hi = rate.rate(s, w + h).map_err(core_err)?;
            let r_lo = rate.rate(s, w - h).map_err(core_err)?;
            let dw = rate.rate_dw(s, w).map_err(core_err)?;
            let rel_dw = ((r_hi - r_lo) / (2.0 * h) - dw).abs() / dw.abs().max(1.0);
            worst_dw = worst_dw.max(rel_dw);

            let g_hi = rate.antiderivative(s, w + h).map_err(core_err)?;
            let g_lo = rate.antiderivative(s, w - h).map_err(core_err)?;
            let r = rate.rate(s, w).map_err(core_err)?;
            let rel_g = ((g_hi - g_lo) / (2.0 * h) - r).abs() / r.abs().max(1.0);
            worst_g = worst_g.max(rel_g);
        }
        rows.push(CheckRow::new(
            format!("physics.rate_derivative_{name}"),
            worst_dw,
            0.0,
            1e-6,
            worst_dw <= 1e-6,
        ));
        rows.push(CheckRow::new(
            format!("physics.rate_antiderivative_{name}"),
            worst_g,
            0.0,
            1e-6,
            worst_g <= 1e-6,
        ));
    }

    // Quantified monotonic decay with the declared constant:
    // (R(s,w1) - R(s,w2))(w1 - w2) <= -C (w1 - w2)^2.
    let s_min = 0.1;
    for (name, rate) in [
        ("truncated_bv", ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.1, 3.0).map_err(core_err)?),
        ("linear", ReactionRate::linear(0.7).map_err(core_err)?),
    ] {
        let c = rate
            .monotonicity_constant(s_min)
            .ok_or_else(|| Failure::Run(format!("verify: no monotonicity constant for {name}")))?;
        let mut worst = f64::NEG_INFINITY;
        for s in [s_min, 0.5, 0.9] {
            for i in 0..100 {
                for j in 0..100 {
                    let w1 = -4.0 + 8.0 * i as f64 / 99.0;
                    let w2 = -4.0 + 8.0 * j as f64 / 99.0;
                    if i == j {
                        continue;
                    }
                    let r1 = rate.rate(s, w1).map_err(core_err)?;
                    let r2 = rate.rate(s, w2).map_err(core_err)?;
                    let excess = (r1 - r2) * (w1 - w2) + c * (w1 - w2) * (w1 - w2);
                    worst = worst.max(excess);
                }
            }
        }
        rows.push(CheckRow::new(
            format!("physics.monotonic_decay_{name}"),
            worst,
            0.0,
            1e-10,
            worst <= 1e-10,
        ));
    }

    // Coercive sign condition: -w R(s,w) >= w^2 / C - C with the declared C.
    let (s_lo, s_hi) = (0.1, 0.9);
    for (name, rate) in [
        ("truncated_bv", ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 3.0).map_err(core_err)?),
        ("linear", ReactionRate::linear(0.7).map_err(core_err)?),
    ] {
        let c = rate
            .sign_condition_constant(s_lo, s_hi)
            .ok_or_else(|| Failure::Run(format!("verify: no sign-condition constant for {name}")))?;
        let mut margin = f64::INFINITY;
        for si in 0..20 {
            let s = s_lo + (s_hi - s_lo) * si as f64 / 19.0;
            for wi in 0..400 {
                let w = -8.0 + 16.0 * wi as f64 / 399.0;
                let r = rate.rate(s, w).map_err(core_err)?;
                margin = margin.min(-w * r - w * w / c + c);
            }
        }
        rows.push(CheckRow::new(
            format!("physics.coercivity_{name}"),
            margin,
            0.0,
            1e-12,
            margin >= -1e-12,
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// operators

fn suite_operators(seed: u64, rows: &mut Vec<CheckRow>) -> Result<(), Failure> {
    let mut rng = suite_rng(seed, 2);
    let newton = NewtonConfig::default();
    let rate = ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).map_err(core_err)?;

    // Inverse property of the Robin solver on a line and a square: mapping a
    // potential forward and solving back reproduces it.
    for (tag, grid) in [
        ("1d", build_grid(1, &[1.0], &[33]).map_err(core_err)?),
        ("2d", build_grid(2, &[1.0, 1.0], &[9, 9]).map_err(core_err)?),
    ] {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let c = smooth_field(&grid, &mut rng, 0.5, 0.3);
            let mu = smooth_field(&grid, &mut rng, 0.0, 0.5);
            let vstar = robin_forward(&grid, &c, &mu, &rate).map_err(core_err)?;
            let back = bbar(&grid, &c, &vstar, &rate, &newton).map_err(core_err)?;
            let scale = 1.0 + mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let gap = mu
                .iter()
                .zip(back.iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(gap / scale);
        }
        rows.push(CheckRow::new(
            format!("operators.bbar_inverse_{tag}"),
            worst,
            0.0,
            10.0 * newton.abs_tol,
            worst <= 10.0 * newton.abs_tol,
        ));
    }

    // Strong monotonicity of the solution map: pairing the source difference
    // against the potential difference dominates the potential's Dirichlet
    // energy plus the declared boundary constant.
    {
        let grid = build_grid(1, &[1.0], &[33]).map_err(core_err)?;
        let c = smooth_field(&grid, &mut rng, 0.5, 0.2);
        let cmin = c.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let cc = rate
            .monotonicity_constant(cmin)
            .ok_or_else(|| Failure::Run("verify: no monotonicity constant".into()))?;
        let w = grid.quad_weights().to_vec();
        let bw = grid.boundary_weights().to_vec();
        let mut worst = f64::INFINITY;
        for _ in 0..50 {
            let v1 = smooth_field(&grid, &mut rng, 0.0, 1.0);
            let v2 = smooth_field(&grid, &mut rng, 0.0, 1.0);
            let m1 = bbar(&grid, &c, &v1, &rate, &newton).map_err(core_err)?;
            let m2 = bbar(&grid, &c, &v2, &rate, &newton).map_err(core_err)?;
            let dmu: Vec<f64> = m1.iter().zip(m2.iter()).map(|(a, b)| a - b).collect();
            let dv: Vec<f64> = v1.iter().zip(v2.iter()).map(|(a, b)| a - b).collect();
            let mut pairing = 0.0;
            let mut bterm = 0.0;
            for i in 0..dmu.len() {
                pairing += w[i] * dv[i] * dmu[i];
                bterm += bw[i] * dmu[i] * dmu[i];
            }
            let adm = stiffness_apply(&grid, &Diffusion::scalar(1.0), &dmu);
            let dirichlet: f64 = dmu.iter().zip(adm.iter()).map(|(a, b)| a * b).sum();
            let slack = pairing - dirichlet - cc * bterm;
            worst = worst.min(slack / pairing.abs().max(1.0));
        }
        rows.push(CheckRow::new(
            "operators.robin_monotonicity",
            worst,
            0.0,
            1e-7,
            worst >= -1e-7,
        ));
    }

    // Dual norm: it bounds the pairing against every test function and is
    // attained at its Riesz representative.
    {
        let grid = build_grid(1, &[1.0], &[65]).map_err(core_err)?;
        let w = grid.quad_weights().to_vec();
        let mut worst_bound = 0.0f64;
        let mut worst_attain = 0.0f64;
        for _ in 0..50 {
            let g = smooth_field(&grid, &mut rng, 0.0, 1.0);
            let (dual, z) = dual_h1_norm_with_rep(&grid, &g).map_err(core_err)?;
            for _ in 0..4 {
                let xi = smooth_field(&grid, &mut rng, 0.0, 1.0);
                let mut pairing = 0.0;
                for i in 0..g.len() {
                    pairing += w[i] * g[i] * xi[i];
                }
                let ratio = pairing.abs() / (dual * h1_norm(&grid, &xi)).max(1e-300);
                worst_bound = worst_bound.max(ratio);
            }
            let mut pz = 0.0;
            for i in 0..g.len() {
                pz += w[i] * g[i] * z[i];
            }
            let target = dual * h1_norm(&grid, &z);
            worst_attain = worst_attain.max((pz - target).abs() / target.max(1e-300));
        }
        rows.push(CheckRow::new(
            "operators.dual_norm_bound",
            worst_bound,
            1.0,
            1e-10,
            worst_bound <= 1.0 + 1e-10,
        ));
        rows.push(CheckRow::new(
            "operators.dual_norm_attained",
            worst_attain,
            0.0,
            1e-8,
            worst_attain <= 1e-8,
        ));
    }

    // Interpolation ratio ||g||_L2^2 / (|g|_H1 ||g||_dual): bounded by one,
    // and its sampled maximum is stable under drawing a fresh batch.
    {
        let grid = build_grid(1, &[1.0], &[65]).map_err(core_err)?;
        let w = grid.quad_weights().to_vec();
        let mut batch_max = [0.0f64; 2];
        for (b, slot) in batch_max.iter_mut().enumerate() {
            let mut m = 0.0f64;
            for _ in 0..100 {
                let g = smooth_field(&grid, &mut rng, 0.0, 1.0);
                let mut l2sq = 0.0;
                for i in 0..g.len() {
                    l2sq += w[i] * g[i] * g[i];
                }
                let (dual, _) = dual_h1_norm_with_rep(&grid, &g).map_err(core_err)?;
                let ratio = l2sq / (h1_norm(&grid, &g) * dual).max(1e-300);
                m = m.max(ratio);
            }
            let _ = b;
            *slot = m;
        }
        rows.push(CheckRow::new(
            "operators.interpolation_bound",
            batch_max[0].max(batch_max[1]),
            1.0,
            1e-12,
            batch_max[0].max(batch_max[1]) <= 1.0 + 1e-12,
        ));
        let gap = (batch_max[0] - batch_max[1]).abs();
        let tol = 0.25 * batch_max[0].max(batch_max[1]);
        rows.push(CheckRow::new(
            "operators.interpolation_stability",
            gap,
            0.0,
            tol,
            gap.is_finite() && gap <= tol,
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradientflow

fn suite_gradientflow(seed: u64, rows: &mut Vec<CheckRow>) -> Result<(), Failure> {
    let mut rng = suite_rng(seed, 3);

    // Reference run: rough random data on a line, logarithmic density.
    let grid = build_grid(1, &[1.0], &[33]).map_err(core_err)?;
    let params = ModelParams {
        free_energy: FreeEnergy::regular_solution(3.0, 1.0).map_err(core_err)?,
        rate: ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).map_err(core_err)?,
        rho: 1.0,
        elasticity: None,
        alpha: None,
    };
    let tg = TimeGrid::new(0.02, 20).map_err(core_err)?;
    let c0: Vec<f64> = (0..grid.node_count()).map(|_| rng.gen_range(0.35..0.65)).collect();
    // A tiny relative gate would stop Newton above the absolute target on
    // rough data; disable it so the absolute residual bound is the contract.
    let newton = NewtonConfig { rel_tol: 1e-16, ..NewtonConfig::default() };
    let outcome = run_weak(&grid, &c0, &tg, &params, &newton);
    if let Some(e) = outcome.error {
        return Err(Failure::Run(format!("verify: gradient-flow run failed: {e}")));
    }
    let traj = outcome.trajectory;
    let reports = &traj.reports;
    let tau = tg.tau();
    let scale = 1.0 + reports[0].energy.abs();

    // Per-step minimizer-vs-competitor estimate.
    let mut worst_step = f64::NEG_INFINITY;
    let mut all_flagged = true;
    for k in 1..reports.len() {
        let r = &reports[k];
        let excess = r.energy + tau * (r.astar + r.aanchor) - reports[k - 1].energy;
        worst_step = worst_step.max(excess);
        all_flagged &= r.energy_ok;
    }
    rows.push(CheckRow::new(
        "gradientflow.step_descent",
        worst_step,
        0.0,
        1e-8 * scale,
        all_flagged && worst_step <= 1e-8 * scale,
    ));

    // Telescoped energy estimate over the whole horizon.
    let dissipated: f64 = reports[1..].iter().map(|r| tau * (r.astar + r.aanchor)).sum();
    let k = (reports.len() - 1) as f64;
    let excess = reports.last().unwrap().energy + dissipated - reports[0].energy;
    rows.push(CheckRow::new(
        "gradientflow.telescoped_estimate",
        excess,
        0.0,
        1e-6 * k * scale,
        excess <= 1e-6 * k * scale,
    ));

    // Mass balance against the boundary reaction flux.
    let mut worst_mass = 0.0f64;
    for k in 1..reports.len() {
        let defect = (reports[k].mass - reports[k - 1].mass - tau * reports[k].flux).abs()
            / (1.0 + reports[k].mass.abs());
        worst_mass = worst_mass.max(defect);
    }
    rows.push(CheckRow::new(
        "gradientflow.mass_flux",
        worst_mass,
        0.0,
        1e-10,
        worst_mass <= 1e-10,
    ));

    // Euler-Lagrange residual of every accepted step.
    let worst_res = reports[1..].iter().fold(0.0f64, |m, r| m.max(r.max_residual));
    rows.push(CheckRow::new(
        "gradientflow.el_residual",
        worst_res,
        0.0,
        newton.abs_tol,
        worst_res <= newton.abs_tol,
    ));

    // Elastic coupling on a square: the displacement solve stays consistent
    // along the trajectory, and zero misfit strain changes nothing.
    let grid2 = build_grid(2, &[1.0, 1.0], &[9, 9]).map_err(core_err)?;
    let ep = ElasticParams::new(1.3, 0.8, [[0.05, 0.0], [0.0, 0.05]]).map_err(core_err)?;
    let coupled = ModelParams {
        elasticity: Some(ep),
        ..params.clone()
    };
    let tg2 = TimeGrid::new(0.01, 8).map_err(core_err)?;
    let c02 = grid2.plateau_bump(0.5, 0.05, 0.2, 0.8);
    let outcome2 = run_weak(&grid2, &c02, &tg2, &coupled, &newton);
    if let Some(e) = outcome2.error {
        return Err(Failure::Run(format!("verify: elastic run failed: {e}")));
    }
    let traj2 = outcome2.trajectory;
    let sys = ElasticSystem::new(&grid2, &ep).map_err(core_err)?;
    let us = traj2
        .displacements
        .as_ref()
        .ok_or_else(|| Failure::Run("verify: elastic run carries no displacements".into()))?;
    let mut worst_el = 0.0f64;
    for (c, u) in traj2.states.iter().zip(us.iter()) {
        let res = sys.weak_residual(c, u);
        let unorm = 1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst_el = worst_el.max(res / unorm);
    }
    rows.push(CheckRow::new(
        "gradientflow.elastic_consistency",
        worst_el,
        0.0,
        1e-8,
        worst_el <= 1e-8,
    ));

    let zero_misfit = ModelParams {
        elasticity: Some(ElasticParams::new(1.3, 0.8, [[0.0; 2]; 2]).map_err(core_err)?),
        ..params.clone()
    };
    let plain = ModelParams { elasticity: None, ..params.clone() };
    let a = run_weak(&grid2, &c02, &tg2, &zero_misfit, &newton);
    let b = run_weak(&grid2, &c02, &tg2, &plain, &newton);
    if let Some(e) = a.error.or(b.error) {
        return Err(Failure::Run(format!("verify: zero-misfit run failed: {e}")));
    }
    let mut gap = 0.0f64;
    for (sa, sb) in a.trajectory.states.iter().zip(b.trajectory.states.iter()) {
        for (x, y) in sa.iter().zip(sb.iter()) {
            gap = gap.max((x - y).abs());
        }
    }
    rows.push(CheckRow::new(
        "gradientflow.elastic_zero_misfit",
        gap,
        0.0,
        1e-10,
        gap <= 1e-10,
    ));

    // Uniform eigenstrain on a free body relaxes to a stress-free state.
    {
        let epu = ElasticParams::new(1.3, 0.8, [[0.15, 0.0], [0.0, 0.15]]).map_err(core_err)?;
        let sysu = ElasticSystem::new(&grid2, &epu).map_err(core_err)?;
        let cflat = grid2.constant_field(0.6);
        let u = solve_elasticity(&grid2, &cflat, &epu).map_err(core_err)?;
        let stress = sysu.stress_field(&grid2, &cflat, &u);
        let mut worst = 0.0f64;
        for t in &stress {
            worst = worst.max(t.xx.abs()).max(t.yy.abs()).max(t.xy.abs());
        }
        rows.push(CheckRow::new(
            "gradientflow.eigenstrain_stress_free",
            worst,
            0.0,
            1e-10,
            worst <= 1e-10,
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// strongsolver

fn suite_strongsolver(seed: u64, rows: &mut Vec<CheckRow>) -> Result<(), Failure> {
    let mut rng = suite_rng(seed, 4);

    // Fixed-point run on compatible data.
    let grid = build_grid(1, &[1.0], &[17]).map_err(core_err)?;
    let params = ModelParams {
        free_energy: FreeEnergy::regular_solution(3.0, 1.0).map_err(core_err)?,
        rate: ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).map_err(core_err)?,
        rho: 1.0,
        elasticity: None,
        alpha: Some(5.0),
    };
    let tg = TimeGrid::new(0.02, 20).map_err(core_err)?;
    let c0 = grid.plateau_bump(0.5, 0.02, 0.2, 0.8);
    let tol = 1e-10;
    let traj = picard_solve(&grid, &c0, &params, &tg, tol, 60).map_err(core_err)?;

    // One extra frozen sweep moves no node by more than ten tolerances.
    let worst_res = traj.reports.iter().fold(0.0f64, |m, r| m.max(r.max_residual));
    rows.push(CheckRow::new(
        "strongsolver.fixed_point_residual",
        worst_res,
        0.0,
        10.0 * tol,
        worst_res <= 10.0 * tol,
    ));

    // Inside the truncation identity region, the truncated bulk term equals
    // the untruncated one bit for bit.
    {
        let info = traj.picard.as_ref().expect("strong trajectory carries diagnostics");
        let tr = Truncation::new(5.0).map_err(core_err)?;
        let wide = Truncation::new(1e300).map_err(core_err)?;
        let mut gap = 0.0f64;
        for c in &traj.states {
            let a = truncated_laplacian_fprime(&grid, c, &params.free_energy, &tr)
                .map_err(core_err)?;
            let b = truncated_laplacian_fprime(&grid, c, &params.free_energy, &wide)
                .map_err(core_err)?;
            for (x, y) in a.iter().zip(b.iter()) {
                gap = gap.max((x - y).abs());
            }
        }
        rows.push(CheckRow::new(
            "strongsolver.detruncation_soundness",
            gap,
            0.0,
            0.0,
            info.detrunc_ok && gap == 0.0,
        ));
    }

    // Mean identity of the linear stepper: the mass change per step equals
    // tau (int g - boundary int beta) up to roundoff, for random data.
    {
        let g = smooth_field(&grid, &mut rng, 0.3, 1.0);
        let mut data = BiharmonicData::with_source(&grid, g.clone(), Diffusion::scalar(1.0));
        for b in data.beta_bc.iter_mut() {
            *b = rng.gen_range(-1.0..1.0);
        }
        for a in data.alpha_bc.iter_mut() {
            *a = rng.gen_range(-1.0..1.0);
        }
        let tau = 1e-3;
        let stepper = BiharmonicStepper::new(&grid, Diffusion::scalar(1.0), tau).map_err(core_err)?;
        let mut c = smooth_field(&grid, &mut rng, 0.5, 0.2);
        let mut source = grid.integrate(&g);
        for (entry, beta) in grid.boundary().iter().zip(data.beta_bc.iter()) {
            source -= entry.weight * beta;
        }
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let next = stepper.step(&grid, &c, &data).map_err(core_err)?;
            let defect =
                (grid.integrate(&next) - grid.integrate(&c) - tau * source).abs();
            worst = worst.max(defect);
            c = next;
        }
        rows.push(CheckRow::new(
            "strongsolver.mean_identity",
            worst,
            0.0,
            1e-10,
            worst <= 1e-10,
        ));
    }

    // Manufactured fourth-order problem: second order in space, first order
    // in time.
    {
        let exact = |x: f64, t: f64| (-t).exp() * ((x + 0.3).cos() + (2.0 * x).cos());
        let source = |x: f64, t: f64| 15.0 * (-t).exp() * (2.0 * x).cos();
        let du = |x: f64, t: f64| -(-t).exp() * ((x + 0.3).sin() + 2.0 * (2.0 * x).sin());
        let dlap = |x: f64, t: f64| (-t).exp() * ((x + 0.3).sin() + 8.0 * (2.0 * x).sin());

        let advance = |n: usize, tau: f64, horizon: f64| -> Result<(Grid, Vec<f64>), Failure> {
            let g = build_grid(1, &[1.0], &[n]).map_err(core_err)?;
            let stepper =
                BiharmonicStepper::new(&g, Diffusion::scalar(1.0), tau).map_err(core_err)?;
            let mut c = g.field_from_fn(|x, _| exact(x, 0.0));
            let steps = (horizon / tau).round() as usize;
            for k in 1..=steps {
                let t = tau * k as f64;
                let mut data = BiharmonicData::with_source(
                    &g,
                    g.field_from_fn(|x, _| source(x, t)),
                    Diffusion::scalar(1.0),
                );
                for (e, entry) in g.boundary().iter().enumerate() {
                    let (x, _) = g.coords(entry.node);
                    data.alpha_bc[e] = entry.normal[0] * du(x, t);
                    data.beta_bc[e] = entry.normal[0] * dlap(x, t);
                }
                c = stepper.step(&g, &c, &data).map_err(core_err)?;
            }
            Ok((g, c))
        };

        // Spatial sweep at a time step far below the spatial error floor.
        let horizon = 0.002;
        let mut errs = Vec::new();
        for n in [17usize, 33, 65] {
            let (g, c) = advance(n, 1e-5, horizon)?;
            let truth = g.field_from_fn(|x, _| exact(x, horizon));
            errs.push(l2_dist(&g, &c, &truth));
        }
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        let spatial = 0.5 * (o1 + o2);
        rows.push(CheckRow::new(
            "strongsolver.spatial_order",
            spatial,
            2.0,
            0.3,
            (spatial - 2.0).abs() <= 0.3,
        ));

        // Temporal sweep by successive differences on a fixed grid.
        let horizon = 0.02;
        let mut fields = Vec::new();
        let mut gref = None;
        for tau in [4e-4, 2e-4, 1e-4] {
            let (g, c) = advance(33, tau, horizon)?;
            gref.get_or_insert(g);
            fields.push(c);
        }
        let g = gref.unwrap();
        let d1 = l2_dist(&g, &fields[0], &fields[1]);
        let d2 = l2_dist(&g, &fields[1], &fields[2]);
        let temporal = (d1 / d2).log2();
        rows.push(CheckRow::new(
            "strongsolver.temporal_order",
            temporal,
            1.0,
            0.2,
            (temporal - 1.0).abs() <= 0.2,
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sobolev

fn suite_sobolev(seed: u64, rows: &mut Vec<SobolevRow>) -> Result<(), Failure> {
    let mut rng = suite_rng(seed, 5);

    // Norm axioms at quadrature level: absolute homogeneity and the triangle
    // inequality of the seminorm.
    for s in [0.3, 0.5, 0.7] {
        for t in [0.5, 2.0] {
            let u = smooth_series(&mut rng, t, 513);
            let v = smooth_series(&mut rng, t, 513);
            let a = 2.37;
            let ua = TimeSeries::new(u.samples().iter().map(|x| a * x).collect(), t)
                .map_err(core_err)?;
            let lhs = gagliardo_seminorm(&ua, s).map_err(core_err)?;
            let rhs = a * gagliardo_seminorm(&u, s).map_err(core_err)?;
            let margin = 1e-6 * rhs - (lhs - rhs).abs();
            rows.push(SobolevRow {
                check: "sobolev.homogeneity".into(),
                s,
                t,
                lhs,
                rhs,
                margin,
                pass: margin >= 0.0,
            });

            let sum = TimeSeries::new(
                u.samples().iter().zip(v.samples()).map(|(x, y)| x + y).collect(),
                t,
            )
            .map_err(core_err)?;
            let lhs = gagliardo_seminorm(&sum, s).map_err(core_err)?;
            let rhs = gagliardo_seminorm(&u, s).map_err(core_err)?
                + gagliardo_seminorm(&v, s).map_err(core_err)?;
            let margin = rhs - lhs;
            rows.push(SobolevRow {
                check: "sobolev.triangle".into(),
                s,
                t,
                lhs,
                rhs,
                margin,
                pass: margin >= -1e-6 * rhs.max(1.0),
            });
        }
    }

    // Quadrature consistency: successive refinements form a Cauchy sequence
    // on a fixed smooth signal.
    for s in [0.3, 0.6] {
        let t = 1.0;
        let norm_at = |count: usize| -> Result<f64, Failure> {
            let u = TimeSeries::from_fn(t, count, |x| {
                (2.0 * core::f64::consts::PI * x).cos() + 0.4 * (5.0 * x).sin()
            })
            .map_err(core_err)?;
            fractional_norm(&u, s).map_err(core_err)
        };
        let i0 = norm_at(129)?;
        let i1 = norm_at(257)?;
        let i2 = norm_at(513)?;
        let lhs = (i2 - i1).abs();
        let rhs = (i1 - i0).abs();
        rows.push(SobolevRow {
            check: "sobolev.quadrature_cauchy".into(),
            s,
            t,
            lhs,
            rhs,
            margin: rhs - lhs,
            pass: lhs < rhs,
        });
    }

    // Seminorm bound through the time derivative with its explicit constant:
    // |u|_s <= T^(1-s) / (s sqrt(2(1-s))) ||u'||_L2. Worst sample reported.
    for s in [0.25, 0.5, 0.75] {
        for t in [0.5, 1.0, 2.0] {
            let mut worst: Option<SobolevRow> = None;
            for _ in 0..50 {
                let u = smooth_series(&mut rng, t, 257);
                let lhs = gagliardo_seminorm(&u, s).map_err(core_err)?;
                let factor = t.powf(1.0 - s) / (s * (2.0 * (1.0 - s)).sqrt());
                let rhs = factor * u.derivative_l2_norm();
                let margin = rhs - lhs;
                if worst.as_ref().map_or(true, |w| margin < w.margin) {
                    worst = Some(SobolevRow {
                        check: "sobolev.derivative_bound".into(),
                        s,
                        t,
                        lhs,
                        rhs,
                        margin,
                        pass: margin >= 0.0,
                    });
                }
            }
            rows.push(worst.expect("at least one sample"));
        }
    }

    // Stretching to a horizon T rescales the seminorm by exactly
    // T^((1-2s)/2); the quadrature inherits the identity to roundoff.
    for s in [0.25, 0.6, 0.75] {
        for t in [0.5, 2.0, 4.0] {
            let u = smooth_series(&mut rng, 1.0, 385);
            let stretched = TimeSeries::new(u.samples().to_vec(), t).map_err(core_err)?;
            let lhs = gagliardo_seminorm(&stretched, s).map_err(core_err)?;
            let rhs = t.powf((1.0 - 2.0 * s) / 2.0) * gagliardo_seminorm(&u, s).map_err(core_err)?;
            let margin = 1e-12 * rhs - (lhs - rhs).abs();
            rows.push(SobolevRow {
                check: "sobolev.stretch_identity".into(),
                s,
                t,
                lhs,
                rhs,
                margin,
                pass: margin >= 0.0,
            });
        }
    }

    // Reflection extension: the extended norm stays below the certified
    // multiple of the original. Worst of 50 samples per order.
    for s in [0.25, 0.5, 0.75] {
        let t = 1.0;
        let target = 2.0;
        let mut worst: Option<SobolevRow> = None;
        for _ in 0..50 {
            let u = smooth_series(&mut rng, t, 257);
            let (lhs, rhs) = extension_bound(&u, s, target).map_err(core_err)?;
            let margin = rhs - lhs;
            if worst.as_ref().map_or(true, |w| margin < w.margin) {
                worst = Some(SobolevRow {
                    check: "sobolev.extension_bound".into(),
                    s,
                    t,
                    lhs,
                    rhs,
                    margin,
                    pass: margin >= 0.0,
                });
            }
        }
        rows.push(worst.expect("at least one sample"));
    }
    Ok(())
}
