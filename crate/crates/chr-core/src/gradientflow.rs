//! Weak-solution pathway: implicit minimizing-movements steps for the
//! reaction-driven Cahn-Hilliard flow.
//!
//! Each step solves the coupled Euler-Lagrange system of the step objective
//! I[c] + tau A*(-(c - c_prev)/tau) by Newton on the stacked unknowns (c, mu):
//!   row 1: W (c - c_prev)/tau + A mu - BW R(c_prev, mu) = 0
//!   row 2: rho A c + W (f'(c) + T c - mu) = 0
//! where A is the edge-based stiffness, W the trapezoid weights, BW the
//! boundary quadrature, and T the (optional) elastic coupling obtained by
//! minimizing the elastic energy at fixed c. The reaction is evaluated at the
//! previous concentration and the new potential, which keeps the dissipation
//! operator monotone within the step.
//!
//! The dual functional A and its conjugate A* are evaluated with the same
//! quadratures, so the minimizer-vs-competitor energy inequality holds at
//! every accepted step up to solver tolerance and is recorded per step.

use alloc::vec;
use alloc::vec::Vec;

// Routes float math through libm when built without std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, DenseMat};
use crate::mesh::Grid;
use crate::operators::{
    assemble_stiffness, bbar, bbar_from, stiffness_apply, Diffusion, ElasticSystem, NewtonConfig,
};
use crate::physics::{chemical_potential, total_energy, FreeEnergyKind, ModelParams, ReactionRate};

/// Uniform time grid on [0, horizon].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    /// Final time, > 0.
    pub horizon: f64,
    /// Number of implicit steps. Zero is accepted and yields the degenerate
    /// initial-state-only trajectory.
    pub steps: usize,
}

impl TimeGrid {
    /// Validated constructor.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidInput(alloc::format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(TimeGrid { horizon, steps })
    }

    /// Step size horizon/steps; callers must have steps >= 1.
    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Per-step certification record.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Step index (0 is the initial state).
    pub index: usize,
    /// Time at the end of the step.
    pub time: f64,
    /// Total free energy of the new state.
    pub energy: f64,
    /// Conjugate value A*(-(c - c_prev)/tau) at the step's potential.
    pub astar: f64,
    /// Anchor value A(B(c_prev, 0)), the competitor side of the estimate.
    pub aanchor: f64,
    /// Mass of the new state.
    pub mass: f64,
    /// Boundary reaction flux at (c_prev, mu_new).
    pub flux: f64,
    /// Newton iterations spent.
    pub newton_iters: usize,
    /// Infinity norm of the accepted Euler-Lagrange residual.
    pub max_residual: f64,
    /// Per-step energy estimate held within tolerance.
    pub energy_ok: bool,
}

impl StepReport {
    fn initial(energy: f64, mass: f64) -> StepReport {
        StepReport {
            index: 0,
            time: 0.0,
            energy,
            astar: 0.0,
            aanchor: 0.0,
            mass,
            flux: 0.0,
            newton_iters: 0,
            max_residual: 0.0,
            energy_ok: true,
        }
    }
}

/// Fixed-point diagnostics attached to strong-solver trajectories.
#[derive(Debug, Clone)]
pub struct PicardInfo {
    /// Outer sweeps used.
    pub outer_iters: usize,
    /// Successive contraction ratios of the sweep metric.
    pub ratios: Vec<f64>,
    /// Whether the trajectory stayed inside the truncation identity region.
    pub detrunc_ok: bool,
    /// First (step, node) leaving the identity region, if any.
    pub first_violation: Option<(usize, usize)>,
}

impl PicardInfo {
    /// Empirical contraction factor of the fixed-point map.
    ///
    /// Geometric mean of the sweep-metric ratios after the first one; the
    /// first ratio compares against the constant-in-time initial guess and
    /// reflects initialization rather than the map. Zero when the iteration
    /// converged without a measurable ratio.
    pub fn contraction_ratio(&self) -> f64 {
        match self.ratios.len() {
            0 => 0.0,
            1 => self.ratios[0],
            n => {
                let log_sum: f64 = self.ratios[1..].iter().map(|r| r.ln()).sum();
                (log_sum / (n - 1) as f64).exp()
            }
        }
    }
}

/// One solver state.
#[derive(Debug, Clone)]
pub struct State {
    /// Concentration field.
    pub c: Vec<f64>,
    /// Chemical potential (diagnostic at index 0, solver output afterwards).
    pub mu: Vec<f64>,
    /// Stacked displacement when elasticity is configured.
    pub u: Option<Vec<f64>>,
}

/// Time-discrete trajectory with per-step reports.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// State times, strictly increasing, times[0] = 0.
    pub times: Vec<f64>,
    /// Concentration per state.
    pub states: Vec<Vec<f64>>,
    /// Potential per state.
    pub potentials: Vec<Vec<f64>>,
    /// Displacement per state when elasticity is configured.
    pub displacements: Option<Vec<Vec<f64>>>,
    /// One report per state (index 0 describes the initial state).
    pub reports: Vec<StepReport>,
    /// Digest of the generating parameters, for provenance checks.
    pub params_digest: u64,
    /// Generating time grid.
    pub timegrid: TimeGrid,
    /// Fixed-point diagnostics (strong pathway only).
    pub picard: Option<PicardInfo>,
}

/// A run that may have stopped early: the partial trajectory is always
/// returned, together with the error that ended it.
#[derive(Debug)]
pub struct RunOutcome {
    /// The states computed before the failure (all of them on success).
    pub trajectory: Trajectory,
    /// The error that aborted the run, if any.
    pub error: Option<Error>,
}

/// FNV-1a digest of the parameter set, recorded in trajectories.
pub(crate) fn params_digest(p: &ModelParams, tg: &TimeGrid) -> u64 {
    let text = alloc::format!("{p:?}|{tg:?}");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Dissipation functional A(c, v) = (1/2) int |grad v|^2 - bdry int G(c, v),
/// convex in v for monotone rates.
pub fn functional_a(grid: &Grid, c_boundary: &[f64], v: &[f64], rate: &ReactionRate) -> Result<f64> {
    let n = grid.node_count();
    assert_eq!(c_boundary.len(), n, "field length mismatch");
    assert_eq!(v.len(), n, "field length mismatch");
    let av = stiffness_apply(grid, &Diffusion::scalar(1.0), v);
    let mut acc = 0.5 * crate::linalg::dot(v, &av);
    for e in grid.boundary() {
        acc -= e.weight * rate.antiderivative(c_boundary[e.node], v[e.node])?;
    }
    Ok(acc)
}

/// Fenchel conjugate A*(v*) = sup_v { (v*, v) - A(c, v) }, returned together
/// with the maximizer mu = B(c, v*).
pub fn conjugate_astar(
    grid: &Grid,
    c_boundary: &[f64],
    vstar: &[f64],
    rate: &ReactionRate,
    newton: &NewtonConfig,
) -> Result<(f64, Vec<f64>)> {
    let mu = bbar(grid, c_boundary, vstar, rate, newton)?;
    let mut pairing = 0.0;
    for (i, w) in grid.quad_weights().iter().enumerate() {
        pairing += w * vstar[i] * mu[i];
    }
    let value = pairing - functional_a(grid, c_boundary, &mu, rate)?;
    Ok((value, mu))
}

/// Free energy used inside solves: the logarithmic kind is continued
/// quadratically outside its admissible interval so that line searches stay
/// defined; accepted states are still gated by [`domain_check`].
fn solver_energy(p: &ModelParams) -> Result<ModelParams> {
    let mut q = p.clone();
    if let FreeEnergyKind::RegularSolution { .. } = p.free_energy.kind() {
        let eps = p.free_energy.domain_floor();
        q.free_energy = p.free_energy.clamped(eps, 1.0 - eps)?;
    }
    Ok(q)
}

/// Reject states that left the admissible domain, naming the first node.
fn domain_check(p: &ModelParams, c: &[f64]) -> Result<()> {
    for (node, &v) in c.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::DomainExit {
                node,
                value: v,
                detail: "concentration is not finite".into(),
            });
        }
        if let FreeEnergyKind::RegularSolution { .. } = p.free_energy.kind() {
            let eps = p.free_energy.domain_floor();
            if v < eps || v > 1.0 - eps {
                return Err(Error::DomainExit {
                    node,
                    value: v,
                    detail: alloc::format!(
                        "concentration left the admissible interval [{eps}, {}]",
                        1.0 - eps
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Factored-once stepper for repeated minimizing-movements steps on a fixed
/// grid and parameter set.
pub struct WeakStepper<'g> {
    grid: &'g Grid,
    params: ModelParams,
    solve_params: ModelParams,
    a1: DenseMat,
    elastic: Option<(ElasticSystem, DenseMat)>,
    newton: NewtonConfig,
}

impl<'g> WeakStepper<'g> {
    /// Validate parameters and assemble the step operators.
    pub fn new(grid: &'g Grid, params: &ModelParams, newton: &NewtonConfig) -> Result<Self> {
        params.validate()?;
        newton.validate()?;
        if params.elasticity.is_some() && grid.dim() != 2 {
            return Err(Error::InvalidInput("elastic coupling requires a 2D grid".into()));
        }
        let elastic = match &params.elasticity {
            Some(ep) => {
                let sys = ElasticSystem::new(grid, ep)?;
                let t = sys.coupling_matrix(grid)?;
                Some((sys, t))
            }
            None => None,
        };
        Ok(WeakStepper {
            grid,
            params: params.clone(),
            solve_params: solver_energy(params)?,
            a1: assemble_stiffness(grid, &Diffusion::scalar(1.0)),
            elastic,
            newton: *newton,
        })
    }

    fn displacement(&self, c: &[f64]) -> Result<Option<Vec<f64>>> {
        match &self.elastic {
            Some((sys, _)) => Ok(Some(sys.solve(c)?)),
            None => Ok(None),
        }
    }

    /// Total free energy with the elastic minimum substituted.
    pub fn energy(&self, c: &[f64]) -> Result<f64> {
        let u = self.displacement(c)?;
        total_energy(self.grid, c, u.as_deref(), &self.solve_params)
    }

    /// Euler-Lagrange residual rows at (c, mu) for the step from c_prev.
    fn residual(
        &self,
        cprev: &[f64],
        c: &[f64],
        mu: &[f64],
        tau: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.grid.node_count();
        let w = self.grid.quad_weights();
        let bw = self.grid.boundary_weights();
        let fe = &self.solve_params.free_energy;
        let mut r1 = self.a1.mul_vec(mu);
        for i in 0..n {
            r1[i] += w[i] * (c[i] - cprev[i]) / tau;
            if bw[i] > 0.0 {
                r1[i] -= bw[i] * self.params.rate.rate(cprev[i], mu[i])?;
            }
        }
        let mut r2 = self.a1.mul_vec(c);
        for v in r2.iter_mut() {
            *v *= self.params.rho;
        }
        let tc = self.elastic.as_ref().map(|(_, t)| t.mul_vec(c));
        for i in 0..n {
            let mut row = fe.eval(c[i], 1)? - mu[i];
            if let Some(tc) = &tc {
                row += tc[i];
            }
            r2[i] += w[i] * row;
        }
        Ok((r1, r2))
    }

    fn residual_norm(r1: &[f64], r2: &[f64]) -> f64 {
        norm_inf(r1).max(norm_inf(r2))
    }

    /// One minimizing-movements step from c_prev, warm-started at mu_init.
    /// `scale` sets the slack allowed in the recorded energy-estimate flag.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        cprev: &[f64],
        mu_init: &[f64],
        tau: f64,
        index: usize,
        time: f64,
        scale: f64,
        anchor_warm: Option<&[f64]>,
    ) -> Result<(State, StepReport, Vec<f64>)> {
        let n = self.grid.node_count();
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidInput(alloc::format!("step size must be positive, got {tau}")));
        }
        let w = self.grid.quad_weights();
        let bw = self.grid.boundary_weights();
        let mut c = cprev.to_vec();
        let mut mu = mu_init.to_vec();
        let (mut r1, mut r2) = self.residual(cprev, &c, &mu, tau)?;
        let mut rnorm = Self::residual_norm(&r1, &r2);
        let r0 = rnorm.max(f64::MIN_POSITIVE);
        let mut iters = 0usize;
        let mut converged = rnorm <= self.newton.abs_tol || rnorm <= self.newton.rel_tol * r0;

        while !converged {
            if iters >= self.newton.max_iter {
                break;
            }
            // Stacked Jacobian: [[W/tau, A - BW dR], [rho A + W f'' + W T, -W]].
            let fe = &self.solve_params.free_energy;
            let mut jac = DenseMat::zeros(2 * n, 2 * n);
            for i in 0..n {
                jac.set(i, i, w[i] / tau);
                for j in 0..n {
                    let a = self.a1.at(i, j);
                    if a != 0.0 {
                        jac.add(i, n + j, a);
                        jac.add(n + i, j, self.params.rho * a);
                    }
                }
                if bw[i] > 0.0 {
                    jac.add(i, n + i, -bw[i] * self.params.rate.rate_dw(cprev[i], mu[i])?);
                }
                jac.add(n + i, i, w[i] * fe.eval(c[i], 2)?);
                if let Some((_, t)) = &self.elastic {
                    for j in 0..n {
                        let tij = t.at(i, j);
                        if tij != 0.0 {
                            jac.add(n + i, j, w[i] * tij);
                        }
                    }
                }
                jac.set(n + i, n + i, -w[i]);
            }
            let mut delta = Vec::with_capacity(2 * n);
            delta.extend(r1.iter().map(|v| -v));
            delta.extend(r2.iter().map(|v| -v));
            jac.lu()?.solve_in_place(&mut delta);

            let mut t_step = 1.0f64;
            let mut accepted = false;
            while t_step >= 1e-6 {
                let ct: Vec<f64> = (0..n).map(|i| c[i] + t_step * delta[i]).collect();
                let mt: Vec<f64> = (0..n).map(|i| mu[i] + t_step * delta[n + i]).collect();
                match self.residual(cprev, &ct, &mt, tau) {
                    Ok((t1, t2)) => {
                        let tn = Self::residual_norm(&t1, &t2);
                        if tn <= (1.0 - self.newton.armijo * t_step) * rnorm {
                            c = ct;
                            mu = mt;
                            r1 = t1;
                            r2 = t2;
                            rnorm = tn;
                            accepted = true;
                            break;
                        }
                    }
                    Err(Error::RangeOverflow { .. }) | Err(Error::Domain { .. }) => {}
                    Err(e) => return Err(e),
                }
                t_step *= self.newton.backtrack;
            }
            iters += 1;
            log::debug!("solver=mm_step iter={iters} residual={rnorm:e}");
            if !accepted {
                break;
            }
            converged = rnorm <= self.newton.abs_tol || rnorm <= self.newton.rel_tol * r0;
        }

        if !converged {
            // Fall back to direct descent on the variational step objective
            // I[c] + tau A*(-(c - c_prev)/tau); its gradient is row 2 with the
            // conjugate maximizer substituted for mu.
            let objective = |cv: &[f64]| -> Result<(f64, Vec<f64>)> {
                let vstar: Vec<f64> =
                    (0..n).map(|i| -(cv[i] - cprev[i]) / tau).collect();
                let (val, muhat) =
                    conjugate_astar(self.grid, cprev, &vstar, &self.params.rate, &self.newton)?;
                Ok((self.energy(cv)? + tau * val, muhat))
            };
            for sweep in 0..self.newton.max_iter {
                let (phi, muhat) = objective(&c)?;
                let tc = self.elastic.as_ref().map(|(_, t)| t.mul_vec(&c));
                let fe = &self.solve_params.free_energy;
                let mut grad = self.a1.mul_vec(&c);
                for i in 0..n {
                    grad[i] *= self.params.rho;
                    let mut row = fe.eval(c[i], 1)? - muhat[i];
                    if let Some(tc) = &tc {
                        row += tc[i];
                    }
                    grad[i] += w[i] * row;
                }
                let gnorm = norm_inf(&grad);
                log::debug!("solver=mm_descent iter={sweep} residual={gnorm:e}");
                if gnorm <= self.newton.abs_tol {
                    mu = muhat;
                    break;
                }
                let mut t_step = 1.0f64;
                let mut moved = false;
                while t_step >= 1e-8 {
                    let ct: Vec<f64> =
                        (0..n).map(|i| c[i] - t_step * grad[i] / w[i]).collect();
                    if let Ok((phit, _)) = objective(&ct) {
                        let decrease: f64 =
                            (0..n).map(|i| grad[i] * grad[i] / w[i]).sum::<f64>();
                        if phit <= phi - self.newton.armijo * t_step * decrease {
                            c = ct;
                            moved = true;
                            break;
                        }
                    }
                    t_step *= self.newton.backtrack;
                }
                if !moved {
                    break;
                }
            }
            let rr = self.residual(cprev, &c, &mu, tau)?;
            r1 = rr.0;
            r2 = rr.1;
            rnorm = Self::residual_norm(&r1, &r2);
            if !(rnorm <= self.newton.abs_tol || rnorm <= self.newton.rel_tol * r0) {
                return Err(Error::NonConvergence {
                    solver: "mm_step",
                    iterations: iters,
                    residual: rnorm,
                });
            }
        }

        domain_check(&self.params, &c)?;
        let u = self.displacement(&c)?;
        let energy = total_energy(self.grid, &c, u.as_deref(), &self.solve_params)?;
        let prev_energy = self.energy(cprev)?;

        // Conjugate value at the step's own maximizer (row 1 is exactly the
        // optimality condition for mu).
        let mut pairing = 0.0;
        for i in 0..n {
            pairing += w[i] * (-(c[i] - cprev[i]) / tau) * mu[i];
        }
        let astar = pairing - functional_a(self.grid, cprev, &mu, &self.params.rate)?;

        // Anchor competitor A(B(c_prev, 0)); zero in closed form when the
        // boundary reaction is switched off.
        let conservative =
            matches!(self.params.rate, ReactionRate::Linear { kappa } if kappa == 0.0);
        let (aanchor, anchor_mu) = if conservative {
            (0.0, vec![0.0; n])
        } else {
            let zero = vec![0.0; n];
            let muhat = bbar_from(self.grid, cprev, &zero, &self.params.rate, &self.newton, anchor_warm)?;
            (functional_a(self.grid, cprev, &muhat, &self.params.rate)?, muhat)
        };

        let mass = self.grid.integrate(&c);
        let mut flux = 0.0;
        for i in 0..n {
            if bw[i] > 0.0 {
                flux += bw[i] * self.params.rate.rate(cprev[i], mu[i])?;
            }
        }
        let energy_ok = energy + tau * (astar + aanchor) <= prev_energy + 1e-8 * scale;
        let report = StepReport {
            index,
            time,
            energy,
            astar,
            aanchor,
            mass,
            flux,
            newton_iters: iters,
            max_residual: rnorm,
            energy_ok,
        };
        Ok((State { c, mu, u }, report, anchor_mu))
    }

    /// Relative elastic weak-form residual of a state (0 when elasticity is
    /// off or the displacement is absent).
    pub fn elastic_residual(&self, state: &State) -> f64 {
        match (&self.elastic, &state.u) {
            (Some((sys, _)), Some(u)) => sys.weak_residual(&state.c, u),
            _ => 0.0,
        }
    }
}

/// One minimizing-movements step (assembles the operators; use
/// [`WeakStepper`] directly for repeated stepping).
pub fn mm_step(
    grid: &Grid,
    prev: &State,
    tg: &TimeGrid,
    p: &ModelParams,
    newton: &NewtonConfig,
) -> Result<(State, StepReport)> {
    let stepper = WeakStepper::new(grid, p, newton)?;
    let tau = tg.tau();
    let scale = 1.0 + stepper.energy(&prev.c)?.abs();
    let (state, report, _) = stepper.step(&prev.c, &prev.mu, tau, 1, tau, scale, None)?;
    Ok((state, report))
}

/// Run the weak pathway for tg.steps implicit steps. A failing step aborts
/// the run; the partial trajectory up to the last accepted state is returned
/// together with the error.
pub fn run_weak(
    grid: &Grid,
    c0: &[f64],
    tg: &TimeGrid,
    p: &ModelParams,
    newton: &NewtonConfig,
) -> RunOutcome {
    let digest = params_digest(p, tg);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![c0.to_vec()],
        potentials: Vec::new(),
        displacements: None,
        reports: Vec::new(),
        params_digest: digest,
        timegrid: *tg,
        picard: None,
    };
    let fail = |traj: Trajectory, e: Error| RunOutcome { trajectory: traj, error: Some(e) };

    if c0.len() != grid.node_count() {
        return fail(traj, Error::InvalidInput("initial field length mismatch".into()));
    }
    if let Err(e) = domain_check(p, c0) {
        return fail(traj, e);
    }
    let stepper = match WeakStepper::new(grid, p, newton) {
        Ok(s) => s,
        Err(e) => return fail(traj, e),
    };
    let u0 = match stepper.displacement(c0) {
        Ok(u) => u,
        Err(e) => return fail(traj, e),
    };
    // Diagnostic initial potential; the scheme never reads it back.
    let mu0 = match chemical_potential(grid, c0, u0.as_deref(), &stepper.solve_params) {
        Ok(m) => m,
        Err(e) => return fail(traj, e),
    };
    let e0 = match total_energy(grid, c0, u0.as_deref(), &stepper.solve_params) {
        Ok(v) => v,
        Err(e) => return fail(traj, e),
    };
    traj.potentials.push(mu0);
    if let Some(u0) = &u0 {
        traj.displacements = Some(vec![u0.clone()]);
    }
    traj.reports.push(StepReport::initial(e0, grid.integrate(c0)));

    if tg.steps == 0 {
        return RunOutcome { trajectory: traj, error: None };
    }
    let tau = tg.tau();
    let scale = 1.0 + e0.abs();
    let mut anchor_warm: Option<Vec<f64>> = None;
    for i in 1..=tg.steps {
        let cprev = traj.states.last().unwrap().clone();
        let muprev = traj.potentials.last().unwrap().clone();
        let time = tau * i as f64;
        match stepper.step(&cprev, &muprev, tau, i, time, scale, anchor_warm.as_deref()) {
            Ok((state, report, anchor)) => {
                traj.times.push(time);
                traj.states.push(state.c);
                traj.potentials.push(state.mu);
                if let (Some(ds), Some(u)) = (traj.displacements.as_mut(), state.u) {
                    ds.push(u);
                }
                traj.reports.push(report);
                anchor_warm = Some(anchor);
            }
            Err(e) => return fail(traj, e),
        }
    }
    RunOutcome { trajectory: traj, error: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;
    use crate::physics::FreeEnergy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base_params() -> ModelParams {
        ModelParams {
            free_energy: FreeEnergy::regular_solution(3.0, 1.0).unwrap(),
            rate: ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).unwrap(),
            rho: 1.0,
            elasticity: None,
            alpha: None,
        }
    }

    #[test]
    fn functional_a_examples() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let rate = ReactionRate::linear(2.0).unwrap();
        let zero = g.constant_field(0.0);
        let c = g.constant_field(0.5);
        assert_eq!(functional_a(&g, &c, &zero, &rate).unwrap(), 0.0);
        // Linear rate: A = (kappa/2) * sum of boundary v^2 = kappa for v = 1.
        let ones = g.constant_field(1.0);
        assert!((functional_a(&g, &c, &ones, &rate).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn functional_a_is_midpoint_convex() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let rate = ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).unwrap();
        let c = g.constant_field(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let v1: Vec<f64> = (0..17).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v2: Vec<f64> = (0..17).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mid: Vec<f64> = v1.iter().zip(v2.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
            let am = functional_a(&g, &c, &mid, &rate).unwrap();
            let a1 = functional_a(&g, &c, &v1, &rate).unwrap();
            let a2 = functional_a(&g, &c, &v2, &rate).unwrap();
            assert!(am <= 0.5 * (a1 + a2) + 1e-12 * (1.0 + a1.abs() + a2.abs()));
        }
    }

    #[test]
    fn conjugate_zero_and_homogeneity() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let rate = ReactionRate::linear(1.5).unwrap();
        let cfg = NewtonConfig::default();
        let c = g.constant_field(0.5);
        let zero = g.constant_field(0.0);
        let (v0, mu0) = conjugate_astar(&g, &c, &zero, &rate, &cfg).unwrap();
        assert_eq!(v0, 0.0);
        assert!(norm_inf(&mu0) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vstar: Vec<f64> = g.field_from_fn(|x, _| (core::f64::consts::PI * x).cos())
            .iter()
            .map(|v| v * rng.gen_range(0.5..1.5))
            .collect();
        let (val1, _) = conjugate_astar(&g, &c, &vstar, &rate, &cfg).unwrap();
        let doubled: Vec<f64> = vstar.iter().map(|v| 2.0 * v).collect();
        let (val2, _) = conjugate_astar(&g, &c, &doubled, &rate, &cfg).unwrap();
        assert!((val2 - 4.0 * val1).abs() < 1e-7 * (1.0 + val2.abs()), "{val2} vs {}", 4.0 * val1);
    }

    #[test]
    fn conjugate_dominates_competitors_and_matches_at_maximizer() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let cfg = NewtonConfig::default();
        let c = g.constant_field(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for rate in [
            ReactionRate::linear(0.8).unwrap(),
            ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).unwrap(),
        ] {
            let vstar: Vec<f64> = (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (value, mu) = conjugate_astar(&g, &c, &vstar, &rate, &cfg).unwrap();
            let pair = |v: &[f64]| -> f64 {
                v.iter().zip(vstar.iter()).zip(g.quad_weights()).map(|((a, b), w)| w * a * b).sum()
            };
            // Fenchel equality at the maximizer.
            let defect = value + functional_a(&g, &c, &mu, &rate).unwrap() - pair(&mu);
            assert!(defect.abs() <= 1e-8 * (1.0 + value.abs()));
            // Dominance over arbitrary competitors.
            for _ in 0..5 {
                let v: Vec<f64> = (0..17).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let lower = pair(&v) - functional_a(&g, &c, &v, &rate).unwrap();
                assert!(value >= lower - 1e-9 * (1.0 + value.abs()));
            }
        }
    }

    #[test]
    fn equilibrium_is_a_bitwise_fixed_point() {
        // f'(1/2) = 0 for the symmetric logarithmic density and the rate
        // 1*exp(-w) - 2*0.5*exp(w) vanishes at w = 0, both exactly in floats.
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let p = base_params();
        let tg = TimeGrid::new(0.1, 100).unwrap();
        let c0 = g.constant_field(0.5);
        let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
        assert!(out.error.is_none(), "{:?}", out.error);
        let traj = out.trajectory;
        assert_eq!(traj.states.len(), 101);
        for (i, state) in traj.states.iter().enumerate() {
            for (a, b) in state.iter().zip(c0.iter()) {
                assert_eq!(a, b, "state {i} drifted");
            }
        }
        for r in &traj.reports[1..] {
            assert_eq!(r.newton_iters, 0);
            assert!(r.energy_ok);
        }
    }

    #[test]
    fn mass_flux_identity_every_step() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let p = base_params();
        let tg = TimeGrid::new(0.01, 10).unwrap();
        let c0 = g.field_from_fn(|x, _| 0.5 + 0.1 * (core::f64::consts::PI * x).cos());
        let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
        assert!(out.error.is_none(), "{:?}", out.error);
        let traj = out.trajectory;
        let tau = tg.tau();
        for i in 1..traj.reports.len() {
            let dm = traj.reports[i].mass - traj.reports[i - 1].mass;
            let defect = (dm - tau * traj.reports[i].flux).abs();
            assert!(
                defect <= 1e-10 * (1.0 + traj.reports[i].mass.abs()),
                "step {i}: defect {defect:e}"
            );
        }
    }

    #[test]
    fn reaction_free_run_conserves_mass() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let mut p = base_params();
        p.rate = ReactionRate::linear(0.0).unwrap();
        let tg = TimeGrid::new(0.01, 10).unwrap();
        let c0 = g.field_from_fn(|x, _| 0.5 + 0.1 * (core::f64::consts::PI * x).cos());
        let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
        assert!(out.error.is_none(), "{:?}", out.error);
        let m0 = out.trajectory.reports[0].mass;
        for r in &out.trajectory.reports {
            assert!((r.mass - m0).abs() < 1e-12, "step {}: mass drift {}", r.index, r.mass - m0);
            assert_eq!(r.aanchor, 0.0);
        }
    }

    #[test]
    fn energy_estimate_holds_per_step_and_telescoped() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let p = base_params();
        let tg = TimeGrid::new(0.02, 20).unwrap();
        let c0 = g.field_from_fn(|x, _| {
            0.5 + 0.08 * (core::f64::consts::PI * x).cos()
                + 0.05 * (2.0 * core::f64::consts::PI * x).cos()
        });
        let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
        assert!(out.error.is_none(), "{:?}", out.error);
        let traj = out.trajectory;
        let tau = tg.tau();
        let e0 = traj.reports[0].energy;
        let scale = 1.0 + e0.abs();
        let mut dissip = 0.0;
        for i in 1..traj.reports.len() {
            let r = &traj.reports[i];
            assert!(r.energy_ok, "step {i}");
            dissip += tau * (r.astar + r.aanchor);
            assert!(
                r.energy + dissip <= e0 + 1e-6 * i as f64 * scale,
                "telescoped estimate failed at step {i}"
            );
        }
    }

    #[test]
    fn domain_exit_is_reported_with_node() {
        let g = build_grid(1, &[1.0], &[9]).unwrap();
        let p = base_params();
        let tg = TimeGrid::new(0.01, 5).unwrap();
        let c0 = g.constant_field(1.5);
        let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
        assert_eq!(out.trajectory.states.len(), 1);
        match out.error {
            Some(Error::DomainExit { node, value, .. }) => {
                assert_eq!(node, 0);
                assert_eq!(value, 1.5);
            }
            other => panic!("expected domain exit, got {other:?}"),
        }
    }

    #[test]
    fn zero_step_run_returns_initial_state_only() {
        let g = build_grid(1, &[1.0], &[9]).unwrap();
        let p = base_params();
        let tg = TimeGrid { horizon: 1.0, steps: 0 };
        let c0 = g.constant_field(0.5);
        let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
        assert!(out.error.is_none());
        assert_eq!(out.trajectory.states.len(), 1);
        assert_eq!(out.trajectory.reports.len(), 1);
    }

    #[test]
    fn tau_refinement_is_first_order() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let p = base_params();
        let c0 = g.field_from_fn(|x, _| 0.5 + 0.1 * (core::f64::consts::PI * x).cos());
        let final_state = |steps: usize| -> Vec<f64> {
            let tg = TimeGrid::new(0.02, steps).unwrap();
            let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
            assert!(out.error.is_none(), "{:?}", out.error);
            out.trajectory.states.last().unwrap().clone()
        };
        let l2 = |a: &[f64], b: &[f64]| -> f64 {
            let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
            g.integrate(&d.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt()
        };
        let c10 = final_state(10);
        let c20 = final_state(20);
        let c40 = final_state(40);
        let c80 = final_state(80);
        let d1 = l2(&c10, &c20);
        let d2 = l2(&c20, &c40);
        let d3 = l2(&c40, &c80);
        assert!((1.4..2.8).contains(&(d1 / d2)), "ratio {}", d1 / d2);
        assert!((1.4..2.8).contains(&(d2 / d3)), "ratio {}", d2 / d3);
    }

    #[test]
    fn elastic_coupling_with_zero_misfit_matches_uncoupled_run() {
        let g = build_grid(2, &[1.0, 1.0], &[7, 7]).unwrap();
        let mut with = base_params();
        with.elasticity =
            Some(crate::physics::ElasticParams::new(1.0, 1.0, [[0.0, 0.0], [0.0, 0.0]]).unwrap());
        let without = base_params();
        let tg = TimeGrid::new(0.005, 5).unwrap();
        let c0 = g.field_from_fn(|x, y| {
            0.5 + 0.05
                * (core::f64::consts::PI * x).cos()
                * (core::f64::consts::PI * y).cos()
        });
        let a = run_weak(&g, &c0, &tg, &with, &NewtonConfig::default());
        let b = run_weak(&g, &c0, &tg, &without, &NewtonConfig::default());
        assert!(a.error.is_none(), "{:?}", a.error);
        assert!(b.error.is_none(), "{:?}", b.error);
        for (sa, sb) in a.trajectory.states.iter().zip(b.trajectory.states.iter()) {
            for (x, y) in sa.iter().zip(sb.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        // Displacements are recorded and satisfy the elastic weak form.
        let stepper = WeakStepper::new(&g, &with, &NewtonConfig::default()).unwrap();
        let us = a.trajectory.displacements.as_ref().unwrap();
        let last = State {
            c: a.trajectory.states.last().unwrap().clone(),
            mu: a.trajectory.potentials.last().unwrap().clone(),
            u: Some(us.last().unwrap().clone()),
        };
        assert!(stepper.elastic_residual(&last) < 1e-8);
    }

    #[test]
    fn mm_step_single_call_matches_run() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let p = base_params();
        let tg = TimeGrid::new(0.001, 1).unwrap();
        let c0 = g.field_from_fn(|x, _| 0.5 + 0.1 * (core::f64::consts::PI * x).cos());
        let mu0 = chemical_potential(&g, &c0, None, &p).unwrap();
        let prev = State { c: c0.clone(), mu: mu0, u: None };
        let (next, report) = mm_step(&g, &prev, &tg, &p, &NewtonConfig::default()).unwrap();
        let out = run_weak(&g, &c0, &tg, &p, &NewtonConfig::default());
        assert!(out.error.is_none());
        for (a, b) in next.c.iter().zip(out.trajectory.states[1].iter()) {
            assert_eq!(a, b);
        }
        assert!(report.max_residual <= 1e-10);
        assert!(report.energy_ok);
    }
}
