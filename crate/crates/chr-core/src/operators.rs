//! Discrete elliptic building blocks: the ghost-reflected diffusion operator,
//! Neumann Poisson and dual-norm solves, the nonlinear Robin inverse, and the
//! plane-strain elasticity solve.
//!
//! All operators derive from edge-based quadratic forms, so the assembled
//! stiffness A is symmetric positive semi-definite with the constants in its
//! kernel and satisfies A f = W (-div(L grad f)) exactly, where the right-hand
//! side is the centered stencil with ghost-node reflection and W the diagonal
//! of trapezoid weights. Inhomogeneous Neumann data never edits stencils; it
//! enters as boundary-quadrature sources.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Routes float math through libm when built without std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, DenseLu, DenseMat};
use crate::mesh::Grid;
use crate::physics::{ElasticParams, ReactionRate, SymTensor2};

/// Constant diffusion tensor (scalar in 1D, diagonal SPD in 2D). The full
/// symmetric type is accepted for validation purposes, but nonzero
/// off-diagonal entries are rejected: the tensor-product stencils have no
/// symmetric positive realization for them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffusion {
    /// xx entry (the scalar coefficient in 1D).
    pub xx: f64,
    /// xy = yx entry; must be zero.
    pub xy: f64,
    /// yy entry (ignored in 1D).
    pub yy: f64,
}

impl Diffusion {
    /// Isotropic coefficient.
    pub fn scalar(v: f64) -> Self {
        Diffusion { xx: v, xy: 0.0, yy: v }
    }

    /// Diagonal anisotropic coefficient.
    pub fn diag(xx: f64, yy: f64) -> Self {
        Diffusion { xx, xy: 0.0, yy }
    }

    /// Check symmetric positive definiteness for the given dimension and the
    /// diagonal-support restriction.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let spd = if dim == 1 {
            self.xx > 0.0
        } else {
            self.xx > 0.0 && self.yy > 0.0 && self.xx * self.yy - self.xy * self.xy > 0.0
        };
        if !spd {
            return Err(Error::InvalidInput(format!(
                "diffusion tensor [[{}, {}], [{}, {}]] is not SPD",
                self.xx, self.xy, self.xy, self.yy
            )));
        }
        if self.xy != 0.0 {
            return Err(Error::InvalidInput(
                "off-diagonal diffusion entries are not supported on tensor-product grids".into(),
            ));
        }
        Ok(())
    }
}

/// Visit every grid edge as (node_p, node_q, coefficient) where the
/// coefficient is lambda_axis * transverse_weight / h_axis. The quadratic form
/// (1/2) sum_e k_e (f_p - f_q)^2 is the discrete Dirichlet energy.
fn for_each_edge<F: FnMut(usize, usize, f64)>(grid: &Grid, lam: &Diffusion, mut visit: F) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let axis_w = |n: usize, h: f64, k: usize| if k == 0 || k == n - 1 { 0.5 * h } else { h };
    if grid.dim() == 1 {
        let k = lam.xx / grid.hx();
        for i in 0..nx - 1 {
            visit(i, i + 1, k);
        }
        return;
    }
    for j in 0..ny {
        let wt = axis_w(ny, grid.hy(), j);
        let k = lam.xx * wt / grid.hx();
        for i in 0..nx - 1 {
            visit(grid.idx(i, j), grid.idx(i + 1, j), k);
        }
    }
    for i in 0..nx {
        let wt = axis_w(nx, grid.hx(), i);
        let k = lam.yy * wt / grid.hy();
        for j in 0..ny - 1 {
            visit(grid.idx(i, j), grid.idx(i, j + 1), k);
        }
    }
}

/// Apply the weighted stiffness A f (A = W compose -div(L grad .) with ghost
/// reflection). Symmetric PSD; constants map to zero exactly.
pub fn stiffness_apply(grid: &Grid, lam: &Diffusion, f: &[f64]) -> Vec<f64> {
    assert_eq!(f.len(), grid.node_count(), "field length mismatch");
    let mut out = vec![0.0; f.len()];
    for_each_edge(grid, lam, |p, q, k| {
        let d = k * (f[p] - f[q]);
        out[p] += d;
        out[q] -= d;
    });
    out
}

/// Assemble the stiffness matrix of [`stiffness_apply`].
pub(crate) fn assemble_stiffness(grid: &Grid, lam: &Diffusion) -> DenseMat {
    let n = grid.node_count();
    let mut m = DenseMat::zeros(n, n);
    for_each_edge(grid, lam, |p, q, k| {
        m.add(p, p, k);
        m.add(q, q, k);
        m.add(p, q, -k);
        m.add(q, p, -k);
    });
    m
}

/// Discrete div(L grad f) with homogeneous co-normal data via ghost-node
/// reflection: second-order centered in the interior, exact on quadratics.
pub fn laplacian(grid: &Grid, f: &[f64], lam: &Diffusion) -> Result<Vec<f64>> {
    lam.validate(grid.dim())?;
    let w = grid.quad_weights();
    let mut af = stiffness_apply(grid, lam, f);
    for (v, wi) in af.iter_mut().zip(w.iter()) {
        *v = -*v / wi;
    }
    Ok(af)
}

/// Mean-zero solution of -div(L grad v) = g with zero co-normal flux,
/// via a bordered (mean-constraint) direct solve.
pub fn solve_neumann_poisson(grid: &Grid, g: &[f64], lam: &Diffusion) -> Result<Vec<f64>> {
    lam.validate(grid.dim())?;
    let n = grid.node_count();
    assert_eq!(g.len(), n, "field length mismatch");
    let w = grid.quad_weights();
    let mean = grid.integrate(g);
    let l2 = {
        let mut acc = 0.0;
        for (wi, gi) in w.iter().zip(g.iter()) {
            acc += wi * gi * gi;
        }
        acc.sqrt()
    };
    if mean.abs() > 1e-10 * l2.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(format!(
            "Poisson data must have zero mean: integral {mean:e} exceeds 1e-10 * ||g|| = {:e}",
            1e-10 * l2
        )));
    }
    if l2 == 0.0 {
        return Ok(vec![0.0; n]);
    }
    // Exact mean removal so the bordered multiplier vanishes.
    let volume: f64 = w.iter().sum();
    let shift = mean / volume;
    let mut sys = DenseMat::zeros(n + 1, n + 1);
    for_each_edge(grid, lam, |p, q, k| {
        sys.add(p, p, k);
        sys.add(q, q, k);
        sys.add(p, q, -k);
        sys.add(q, p, -k);
    });
    for i in 0..n {
        sys.set(i, n, w[i]);
        sys.set(n, i, w[i]);
    }
    let lu = sys.lu()?;
    let mut rhs = vec![0.0; n + 1];
    for i in 0..n {
        rhs[i] = w[i] * (g[i] - shift);
    }
    lu.solve_in_place(&mut rhs);
    rhs.truncate(n);
    Ok(rhs)
}

/// Discrete H1 norm: sqrt(int f^2 + int |grad f|^2) with the edge-based
/// Dirichlet form.
pub fn h1_norm(grid: &Grid, f: &[f64]) -> f64 {
    let af = stiffness_apply(grid, &Diffusion::scalar(1.0), f);
    let mut acc = dot(f, &af);
    for (wi, fi) in grid.quad_weights().iter().zip(f.iter()) {
        acc += wi * fi * fi;
    }
    acc.max(0.0).sqrt()
}

/// Dual H1 norm together with its Riesz representative z solving
/// (-lap + id) z = g with Neumann reflection; the norm is sqrt(int g z).
pub fn dual_h1_norm_with_rep(grid: &Grid, g: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = grid.node_count();
    assert_eq!(g.len(), n, "field length mismatch");
    let w = grid.quad_weights();
    let mut sys = assemble_stiffness(grid, &Diffusion::scalar(1.0));
    for i in 0..n {
        sys.add(i, i, w[i]);
    }
    let lu = sys.lu()?;
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = w[i] * g[i];
    }
    lu.solve_in_place(&mut z);
    let mut pairing = 0.0;
    for i in 0..n {
        pairing += w[i] * g[i] * z[i];
    }
    Ok((pairing.max(0.0).sqrt(), z))
}

/// Dual H1 norm of g (see [`dual_h1_norm_with_rep`]).
pub fn dual_h1_norm(grid: &Grid, g: &[f64]) -> Result<f64> {
    dual_h1_norm_with_rep(grid, g).map(|(v, _)| v)
}

/// Newton solver configuration shared by the implicit solvers.
#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    /// Absolute residual tolerance (infinity norm).
    pub abs_tol: f64,
    /// Relative residual tolerance against the initial residual.
    pub rel_tol: f64,
    /// Iteration budget.
    pub max_iter: usize,
    /// Backtracking shrink factor.
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { abs_tol: 1e-10, rel_tol: 1e-10, max_iter: 50, backtrack: 0.5, armijo: 1e-4 }
    }
}

impl NewtonConfig {
    /// Validate positivity constraints.
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("Newton tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("Newton max_iter must be at least 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidInput("backtracking parameters must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Forward Robin operator B_c: maps mu to the nodal source v* it solves, i.e.
/// v* = W^{-1} (A mu - BW R(c, mu)) where BW holds the boundary quadrature
/// weights. Inverse of [`bbar`].
pub fn robin_forward(grid: &Grid, c: &[f64], mu: &[f64], rate: &ReactionRate) -> Result<Vec<f64>> {
    let n = grid.node_count();
    assert_eq!(c.len(), n, "field length mismatch");
    assert_eq!(mu.len(), n, "field length mismatch");
    let mut out = stiffness_apply(grid, &Diffusion::scalar(1.0), mu);
    let bw = grid.boundary_weights();
    for i in 0..n {
        if bw[i] > 0.0 {
            out[i] -= bw[i] * rate.rate(c[i], mu[i])?;
        }
        out[i] /= grid.quad_weights()[i];
    }
    Ok(out)
}

/// Residual F(mu) = A mu - BW R(c, mu) - W v* of the Robin problem.
fn robin_residual(
    grid: &Grid,
    stiff: &DenseMat,
    c: &[f64],
    mu: &[f64],
    vstar: &[f64],
    rate: &ReactionRate,
) -> Result<Vec<f64>> {
    let n = grid.node_count();
    let mut f = stiff.mul_vec(mu);
    let bw = grid.boundary_weights();
    let w = grid.quad_weights();
    for i in 0..n {
        if bw[i] > 0.0 {
            f[i] -= bw[i] * rate.rate(c[i], mu[i])?;
        }
        f[i] -= w[i] * vstar[i];
    }
    Ok(f)
}

/// Solve the nonlinear Robin problem: find mu with -lap mu = v* in the bulk
/// and d mu/d nu = R(c, mu) on the boundary (discrete weak form
/// A mu - BW R(c, mu) = W v*), by damped Newton with a monotone Picard
/// fallback. The rate must be strictly decreasing in its potential argument.
pub fn bbar(
    grid: &Grid,
    c: &[f64],
    vstar: &[f64],
    rate: &ReactionRate,
    cfg: &NewtonConfig,
) -> Result<Vec<f64>> {
    bbar_from(grid, c, vstar, rate, cfg, None)
}

/// [`bbar`] with an optional warm-start iterate.
pub fn bbar_from(
    grid: &Grid,
    c: &[f64],
    vstar: &[f64],
    rate: &ReactionRate,
    cfg: &NewtonConfig,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = grid.node_count();
    assert_eq!(c.len(), n, "field length mismatch");
    assert_eq!(vstar.len(), n, "field length mismatch");
    let stiff = assemble_stiffness(grid, &Diffusion::scalar(1.0));
    let bw = grid.boundary_weights();

    let mut mu = match warm {
        Some(m) => m.to_vec(),
        None => vec![0.0; n],
    };
    let mut res = robin_residual(grid, &stiff, c, &mu, vstar, rate)?;
    let mut rnorm = norm_inf(&res);
    let r0 = rnorm.max(f64::MIN_POSITIVE);

    for iter in 0..cfg.max_iter {
        if rnorm <= cfg.abs_tol || rnorm <= cfg.rel_tol * r0 {
            log::debug!("solver=bbar iter={iter} residual={rnorm:e}");
            return Ok(mu);
        }
        // Jacobian: A + BW diag(-dR/dw); SPD while the rate stays monotone.
        let mut jac = stiff.clone();
        for i in 0..n {
            if bw[i] > 0.0 {
                let slope = rate.rate_dw(c[i], mu[i])?;
                if slope >= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "rate monotonicity violated at node {i}: dR/dw = {slope:e} >= 0"
                    )));
                }
                jac.add(i, i, -bw[i] * slope);
            }
        }
        let mut step = res.clone();
        for v in step.iter_mut() {
            *v = -*v;
        }
        jac.lu()?.solve_in_place(&mut step);

        // Backtracking on the residual norm.
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-6 {
            let trial: Vec<f64> = mu.iter().zip(step.iter()).map(|(m, s)| m + t * s).collect();
            match robin_residual(grid, &stiff, c, &trial, vstar, rate) {
                Ok(tr) => {
                    let tn = norm_inf(&tr);
                    if tn <= (1.0 - cfg.armijo * t) * rnorm {
                        mu = trial;
                        res = tr;
                        rnorm = tn;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::RangeOverflow { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= cfg.backtrack;
        }
        log::debug!("solver=bbar iter={} residual={rnorm:e}", iter + 1);
        if !accepted {
            // Monotone Picard fallback: freeze a uniform negative slope sigma
            // and iterate (A + sigma BW) mu = W v* + BW (R(mu) + sigma mu).
            let mut sigma = 0.0f64;
            for i in 0..n {
                if bw[i] > 0.0 {
                    sigma = sigma.max(-rate.rate_dw(c[i], mu[i])?);
                }
            }
            let sigma = sigma.max(1.0);
            let mut sys = stiff.clone();
            for i in 0..n {
                if bw[i] > 0.0 {
                    sys.add(i, i, sigma * bw[i]);
                }
            }
            let lu = sys.lu()?;
            let w = grid.quad_weights();
            for pic in 0..cfg.max_iter {
                let mut rhs = vec![0.0; n];
                for i in 0..n {
                    rhs[i] = w[i] * vstar[i];
                    if bw[i] > 0.0 {
                        rhs[i] += bw[i] * (rate.rate(c[i], mu[i])? + sigma * mu[i]);
                    }
                }
                lu.solve_in_place(&mut rhs);
                mu = rhs;
                res = robin_residual(grid, &stiff, c, &mu, vstar, rate)?;
                rnorm = norm_inf(&res);
                log::debug!("solver=bbar_picard iter={pic} residual={rnorm:e}");
                if rnorm <= cfg.abs_tol || rnorm <= cfg.rel_tol * r0 {
                    return Ok(mu);
                }
            }
            return Err(Error::NonConvergence {
                solver: "bbar",
                iterations: cfg.max_iter,
                residual: rnorm,
            });
        }
    }
    if rnorm <= cfg.abs_tol || rnorm <= cfg.rel_tol * r0 {
        return Ok(mu);
    }
    Err(Error::NonConvergence { solver: "bbar", iterations: cfg.max_iter, residual: rnorm })
}

/// Gradient (derivative) matrices along each axis matching
/// [`crate::mesh::centered_gradient`]: centered interior rows, second-order
/// one-sided boundary rows.
pub(crate) fn gradient_matrices(grid: &Grid) -> (DenseMat, DenseMat) {
    let n = grid.node_count();
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut dx = DenseMat::zeros(n, n);
    let mut dy = DenseMat::zeros(n, n);
    for j in 0..ny {
        for i in 0..nx {
            let r = grid.idx(i, j);
            let h = grid.hx();
            if i == 0 {
                dx.add(r, grid.idx(0, j), -3.0 / (2.0 * h));
                dx.add(r, grid.idx(1, j), 4.0 / (2.0 * h));
                dx.add(r, grid.idx(2, j), -1.0 / (2.0 * h));
            } else if i == nx - 1 {
                dx.add(r, grid.idx(nx - 1, j), 3.0 / (2.0 * h));
                dx.add(r, grid.idx(nx - 2, j), -4.0 / (2.0 * h));
                dx.add(r, grid.idx(nx - 3, j), 1.0 / (2.0 * h));
            } else {
                dx.add(r, grid.idx(i - 1, j), -1.0 / (2.0 * h));
                dx.add(r, grid.idx(i + 1, j), 1.0 / (2.0 * h));
            }
            if grid.dim() == 2 {
                let h = grid.hy();
                if j == 0 {
                    dy.add(r, grid.idx(i, 0), -3.0 / (2.0 * h));
                    dy.add(r, grid.idx(i, 1), 4.0 / (2.0 * h));
                    dy.add(r, grid.idx(i, 2), -1.0 / (2.0 * h));
                } else if j == ny - 1 {
                    dy.add(r, grid.idx(i, ny - 1), 3.0 / (2.0 * h));
                    dy.add(r, grid.idx(i, ny - 2), -4.0 / (2.0 * h));
                    dy.add(r, grid.idx(i, ny - 3), 1.0 / (2.0 * h));
                } else {
                    dy.add(r, grid.idx(i, j - 1), -1.0 / (2.0 * h));
                    dy.add(r, grid.idx(i, j + 1), 1.0 / (2.0 * h));
                }
            }
        }
    }
    (dx, dy)
}

/// A^T diag(d) B for square matrices.
fn atdb(a: &DenseMat, d: &[f64], b: &DenseMat) -> DenseMat {
    let n = a.nrows;
    let mut out = DenseMat::zeros(n, n);
    // out[i][j] = sum_k a[k][i] d[k] b[k][j]
    for k in 0..n {
        let dk = d[k];
        if dk == 0.0 {
            continue;
        }
        for i in 0..n {
            let aki = a.at(k, i);
            if aki == 0.0 {
                continue;
            }
            let f = aki * dk;
            for j in 0..n {
                let bkj = b.at(k, j);
                if bkj != 0.0 {
                    out.add(i, j, f * bkj);
                }
            }
        }
    }
    out
}

/// Factored quasi-static plane-strain elasticity on a fixed grid, with rigid
/// motions removed by three constraint rows (mean displacement and mean
/// discrete curl). Displacements are stored stacked: [u1 ..., u2 ...].
pub struct ElasticSystem {
    n: usize,
    k: DenseMat,
    lu: DenseLu,
    dx: DenseMat,
    dy: DenseMat,
    /// Stress per unit concentration: C(e0).
    sigma0: SymTensor2,
    /// C(e0) : e0.
    pub d0: f64,
    w: Vec<f64>,
    params: ElasticParams,
}

impl ElasticSystem {
    /// Assemble and factor the elasticity operator for a 2D grid.
    pub fn new(grid: &Grid, ep: &ElasticParams) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::InvalidInput("elasticity requires a 2D grid".into()));
        }
        let n = grid.node_count();
        let w = grid.quad_weights().to_vec();
        let (dx, dy) = gradient_matrices(grid);
        let (mu, la) = (ep.mu_shear, ep.lambda);
        let wa: Vec<f64> = w.iter().map(|wi| wi * (2.0 * mu + la)).collect();
        let wmu: Vec<f64> = w.iter().map(|wi| wi * mu).collect();
        let wla: Vec<f64> = w.iter().map(|wi| wi * la).collect();

        let k11a = atdb(&dx, &wa, &dx);
        let k11b = atdb(&dy, &wmu, &dy);
        let k22a = atdb(&dy, &wa, &dy);
        let k22b = atdb(&dx, &wmu, &dx);
        let k12a = atdb(&dx, &wla, &dy);
        let k12b = atdb(&dy, &wmu, &dx);

        let m = 2 * n + 3;
        let mut k = DenseMat::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                k.set(i, j, k11a.at(i, j) + k11b.at(i, j));
                k.set(n + i, n + j, k22a.at(i, j) + k22b.at(i, j));
                let k12 = k12a.at(i, j) + k12b.at(i, j);
                k.set(i, n + j, k12);
                k.set(n + j, i, k12);
            }
        }
        let mut sys = DenseMat::zeros(m, m);
        for i in 0..2 * n {
            for j in 0..2 * n {
                sys.set(i, j, k.at(i, j));
            }
        }
        // Constraints: mean u1 = 0, mean u2 = 0, mean (dx u2 - dy u1) = 0.
        let dxt_w = {
            let mut v = vec![0.0; n];
            for kk in 0..n {
                for i in 0..n {
                    v[i] += dx.at(kk, i) * w[kk];
                }
            }
            v
        };
        let dyt_w = {
            let mut v = vec![0.0; n];
            for kk in 0..n {
                for i in 0..n {
                    v[i] += dy.at(kk, i) * w[kk];
                }
            }
            v
        };
        for i in 0..n {
            sys.set(2 * n, i, w[i]);
            sys.set(i, 2 * n, w[i]);
            sys.set(2 * n + 1, n + i, w[i]);
            sys.set(n + i, 2 * n + 1, w[i]);
            sys.set(2 * n + 2, i, -dyt_w[i]);
            sys.set(i, 2 * n + 2, -dyt_w[i]);
            sys.set(2 * n + 2, n + i, dxt_w[i]);
            sys.set(n + i, 2 * n + 2, dxt_w[i]);
        }
        let lu = sys.lu()?;
        let sigma0 = ep.stress(&ep.e0);
        let d0 = sigma0.contract(&ep.e0);
        Ok(ElasticSystem { n, k, lu, dx, dy, sigma0, d0, w, params: *ep })
    }

    /// Misfit load vector b(c) with K u = b(c) at equilibrium.
    fn load(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut b = vec![0.0; 2 * n];
        // b1 = Dx^T (w c sxx) + Dy^T (w c sxy); b2 = Dy^T (w c syy) + Dx^T (w c sxy).
        for k in 0..n {
            let f = self.w[k] * c[k];
            if f == 0.0 {
                continue;
            }
            let fxx = f * self.sigma0.xx;
            let fyy = f * self.sigma0.yy;
            let fxy = f * self.sigma0.xy;
            for i in 0..n {
                let dxki = self.dx.at(k, i);
                let dyki = self.dy.at(k, i);
                if dxki != 0.0 {
                    b[i] += dxki * fxx;
                    b[n + i] += dxki * fxy;
                }
                if dyki != 0.0 {
                    b[i] += dyki * fxy;
                    b[n + i] += dyki * fyy;
                }
            }
        }
        b
    }

    /// Solve for the displacement induced by concentration c.
    pub fn solve(&self, c: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(c.len(), self.n, "field length mismatch");
        let mut rhs = self.load(c);
        rhs.resize(2 * self.n + 3, 0.0);
        self.lu.solve_in_place(&mut rhs);
        rhs.truncate(2 * self.n);
        Ok(rhs)
    }

    /// Relative infinity-norm residual of the weak form, ||K u - b(c)|| over
    /// the load scale.
    pub fn weak_residual(&self, c: &[f64], u: &[f64]) -> f64 {
        let b = self.load(c);
        let ku = self.k.mul_vec(u);
        let mut r = 0.0f64;
        for (kui, bi) in ku.iter().zip(b.iter()) {
            r = r.max((kui - bi).abs());
        }
        r / norm_inf(&b).max(f64::MIN_POSITIVE)
    }

    /// Nodal stress C(e(u) - c e0).
    pub fn stress_field(&self, grid: &Grid, c: &[f64], u: &[f64]) -> Vec<SymTensor2> {
        let strain = crate::physics::nodal_strain(grid, u);
        (0..self.n)
            .map(|i| {
                let misfit = strain[i].sub_scaled(&self.params.e0, c[i]);
                self.params.stress(&misfit)
            })
            .collect()
    }

    /// Assemble the linear coupling map T with (T c)_i = C(c e0 - e(u(c)))_i : e0,
    /// one factored solve per unit vector. T is the exact derivative of the
    /// minimized elastic energy with respect to c (envelope theorem), divided
    /// by the quadrature weight.
    pub(crate) fn coupling_matrix(&self, grid: &Grid) -> Result<DenseMat> {
        let n = self.n;
        let mut t = DenseMat::zeros(n, n);
        let mut unit = vec![0.0; n];
        for k in 0..n {
            unit[k] = 1.0;
            let u = self.solve(&unit)?;
            let strain = crate::physics::nodal_strain(grid, &u);
            for i in 0..n {
                let mut v = -self.params.stress(&strain[i]).contract(&self.params.e0);
                if i == k {
                    v += self.d0;
                }
                t.set(i, k, v);
            }
            unit[k] = 0.0;
        }
        Ok(t)
    }
}

/// One-shot elasticity solve (see [`ElasticSystem`] for the factored form).
pub fn solve_elasticity(grid: &Grid, c: &[f64], ep: &ElasticParams) -> Result<Vec<f64>> {
    ElasticSystem::new(grid, ep)?.solve(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, centered_gradient, normal_derivative};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diffusion_validation() {
        assert!(Diffusion::scalar(1.0).validate(1).is_ok());
        assert!(Diffusion::scalar(-1.0).validate(1).is_err());
        assert!(Diffusion::diag(2.0, 3.0).validate(2).is_ok());
        assert!(Diffusion::diag(2.0, -3.0).validate(2).is_err());
        assert!(Diffusion { xx: 1.0, xy: 0.5, yy: 1.0 }.validate(2).is_err());
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = build_grid(2, &[1.0, 2.0], &[7, 9]).unwrap();
        let f = g.constant_field(3.7);
        let lap = laplacian(&g, &f, &Diffusion::diag(2.0, 0.5)).unwrap();
        for v in lap {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn laplacian_cosine_eigenfunction() {
        let g = build_grid(1, &[core::f64::consts::PI], &[101]).unwrap();
        let f = g.field_from_fn(|x, _| x.cos());
        let lap = laplacian(&g, &f, &Diffusion::scalar(1.0)).unwrap();
        for (node, v) in lap.iter().enumerate() {
            let (x, _) = g.coords(node);
            assert!((v + x.cos()).abs() < 1e-3, "node {node}: {v} vs {}", -x.cos());
        }
    }

    #[test]
    fn laplacian_quadratic_exact_in_interior() {
        let g = build_grid(2, &[1.0, 1.0], &[9, 9]).unwrap();
        let f = g.field_from_fn(|x, y| x * x + y * y);
        let lap = laplacian(&g, &f, &Diffusion::diag(2.0, 3.0)).unwrap();
        for j in 1..8 {
            for i in 1..8 {
                let v = lap[g.idx(i, j)];
                assert!((v - 10.0).abs() < 1e-10, "interior node ({i},{j}): {v}");
            }
        }
    }

    #[test]
    fn stiffness_matches_ghost_laplacian_at_boundary() {
        // A f = W (-lap f) must hold exactly, including boundary and corner
        // rows (the edge form IS the ghost-reflected stencil).
        let g = build_grid(2, &[1.0, 1.5], &[5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lam = Diffusion::diag(1.3, 0.7);
        let af = stiffness_apply(&g, &lam, &f);
        // Reference: ghost stencil (reflect across each face).
        let (nx, ny) = (g.nx(), g.ny());
        let at = |i: i64, j: i64| -> f64 {
            let i = if i < 0 { 1 } else if i as usize >= nx { nx as i64 - 2 } else { i } as usize;
            let j = if j < 0 { 1 } else if j as usize >= ny { ny as i64 - 2 } else { j } as usize;
            f[g.idx(i, j)]
        };
        for j in 0..ny as i64 {
            for i in 0..nx as i64 {
                let id = g.idx(i as usize, j as usize);
                let lap = lam.xx * (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j)) / (g.hx() * g.hx())
                    + lam.yy * (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / (g.hy() * g.hy());
                let expect = -g.quad_weights()[id] * lap;
                assert!((af[id] - expect).abs() < 1e-12, "node {id}: {} vs {expect}", af[id]);
            }
        }
    }

    #[test]
    fn discrete_divergence_theorem() {
        // The ghost operator conserves mass exactly; for analytically
        // compatible fields the one-sided boundary flux decays at O(h^2).
        for &n in &[33usize, 65] {
            let g = build_grid(1, &[1.0], &[n]).unwrap();
            let f = g.field_from_fn(|x, _| (core::f64::consts::PI * x).cos());
            let lap = laplacian(&g, &f, &Diffusion::scalar(1.0)).unwrap();
            assert!(g.integrate(&lap).abs() < 1e-11);
            let nd = normal_derivative(&g, &f);
            let flux: f64 = g
                .boundary()
                .iter()
                .zip(nd.iter())
                .map(|(e, d)| e.weight * d)
                .sum();
            let h2 = g.hx() * g.hx();
            assert!(flux.abs() < 40.0 * h2, "n={n}: flux {flux}");
        }
        // Single-face decay is ~4 per refinement; x^2 (1-x)^2 is compatible
        // with a nonzero third derivative at the wall, so the O(h^2) term of
        // the one-sided stencil dominates.
        let end_flux = |n: usize| -> f64 {
            let g = build_grid(1, &[1.0], &[n]).unwrap();
            let f = g.field_from_fn(|x, _| x * x * (1.0 - x) * (1.0 - x));
            normal_derivative(&g, &f)[0]
        };
        let r = end_flux(33).abs() / end_flux(65).abs();
        assert!((2.5..6.0).contains(&r), "decay ratio {r}");
    }

    #[test]
    fn poisson_zero_data_and_eigenfunction() {
        let g = build_grid(1, &[core::f64::consts::PI], &[101]).unwrap();
        let zero = g.constant_field(0.0);
        assert!(solve_neumann_poisson(&g, &zero, &Diffusion::scalar(1.0))
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let gcos = g.field_from_fn(|x, _| x.cos());
        let v = solve_neumann_poisson(&g, &gcos, &Diffusion::scalar(1.0)).unwrap();
        for (node, vi) in v.iter().enumerate() {
            let (x, _) = g.coords(node);
            assert!((vi - x.cos()).abs() < 2e-3, "node {node}");
        }
        assert!(g.integrate(&v).abs() < 1e-10);
    }

    #[test]
    fn poisson_rejects_nonzero_mean_and_reapplies_to_data() {
        let g = build_grid(2, &[1.0, 1.0], &[9, 9]).unwrap();
        assert!(solve_neumann_poisson(&g, &g.constant_field(1.0), &Diffusion::scalar(1.0)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut data: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = g.integrate(&data) / g.quad_weights().iter().sum::<f64>();
        for d in data.iter_mut() {
            *d -= mean;
        }
        let lam = Diffusion::diag(1.0, 2.0);
        let v = solve_neumann_poisson(&g, &data, &lam).unwrap();
        let back = laplacian(&g, &v, &lam).unwrap();
        let gmax = data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..data.len() {
            assert!(
                (-back[i] - data[i]).abs() < 1e-8 * gmax,
                "node {i}: {} vs {}",
                -back[i],
                data[i]
            );
        }
    }

    #[test]
    fn dual_norm_examples() {
        let g1 = build_grid(1, &[1.0], &[33]).unwrap();
        assert_eq!(dual_h1_norm(&g1, &g1.constant_field(0.0)).unwrap(), 0.0);
        let ones = g1.constant_field(1.0);
        assert!((dual_h1_norm(&g1, &ones).unwrap() - 1.0).abs() < 1e-12);

        let g = build_grid(1, &[core::f64::consts::PI], &[201]).unwrap();
        let gcos = g.field_from_fn(|x, _| x.cos());
        let (norm, z) = dual_h1_norm_with_rep(&g, &gcos).unwrap();
        let expect = (core::f64::consts::PI / 4.0).sqrt();
        assert!((norm - expect).abs() < 1e-4, "norm {norm} vs {expect}");
        for (node, zi) in z.iter().enumerate() {
            let (x, _) = g.coords(node);
            assert!((zi - 0.5 * x.cos()).abs() < 1e-3);
        }
    }

    #[test]
    fn dual_norm_duality_with_equality_at_representative() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let gf: Vec<f64> = (0..33).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xi: Vec<f64> = (0..33).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (dual, z) = dual_h1_norm_with_rep(&g, &gf).unwrap();
            let mut pairing = 0.0;
            for i in 0..33 {
                pairing += g.quad_weights()[i] * gf[i] * xi[i];
            }
            assert!(pairing.abs() <= dual * h1_norm(&g, &xi) + 1e-12);
            // Equality at xi = z.
            let mut pz = 0.0;
            for i in 0..33 {
                pz += g.quad_weights()[i] * gf[i] * z[i];
            }
            assert!((pz - dual * h1_norm(&g, &z)).abs() < 1e-8 * (1.0 + pz.abs()));
        }
    }

    fn smooth_random_field(g: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        g.field_from_fn(|x, _| {
            a[0] + a[1] * (core::f64::consts::PI * x / 1.0).cos()
                + a[2] * (2.0 * core::f64::consts::PI * x).cos()
                + a[3] * x * x * (1.0 - x) * (1.0 - x)
        })
    }

    #[test]
    fn bbar_trivial_and_linearity() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let rate = ReactionRate::linear(1.5).unwrap();
        let cfg = NewtonConfig::default();
        let c = g.constant_field(0.5);
        let zero = g.constant_field(0.0);
        let mu = bbar(&g, &c, &zero, &rate, &cfg).unwrap();
        assert!(norm_inf(&mu) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = smooth_random_field(&g, &mut rng);
        let mu1 = bbar(&g, &c, &v, &rate, &cfg).unwrap();
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let mu2 = bbar(&g, &c, &v2, &rate, &cfg).unwrap();
        for i in 0..mu1.len() {
            assert!((mu2[i] - 2.0 * mu1[i]).abs() < 1e-8, "node {i}");
        }
    }

    #[test]
    fn bbar_butler_volmer_constant_root() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let rate = ReactionRate::butler_volmer(1.0, 1.0, 1.0, 0.0).unwrap();
        let cfg = NewtonConfig::default();
        let cbar = 0.4f64;
        let c = g.constant_field(cbar);
        let zero = g.constant_field(0.0);
        let mu = bbar(&g, &c, &zero, &rate, &cfg).unwrap();
        let root = -0.5 * cbar.ln();
        for v in &mu {
            assert!((v - root).abs() < 1e-9, "{v} vs {root}");
        }
    }

    #[test]
    fn bbar_inverts_forward_operator() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let cfg = NewtonConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rates = [
            ReactionRate::linear(0.8).unwrap(),
            ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).unwrap(),
        ];
        for rate in rates {
            for _ in 0..10 {
                let muhat = smooth_random_field(&g, &mut rng);
                let c = g.constant_field(0.5);
                let v = robin_forward(&g, &c, &muhat, &rate).unwrap();
                let back = bbar(&g, &c, &v, &rate, &cfg).unwrap();
                let err: f64 =
                    back.iter().zip(muhat.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 10.0 * cfg.abs_tol, "err {err}");
            }
        }
    }

    #[test]
    fn robin_operator_monotonicity_bound() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let rate = ReactionRate::truncated_bv(1.0, 2.0, 1.0, 0.0, 5.0).unwrap();
        let cmon = rate.monotonicity_constant(0.5).unwrap();
        let c = g.constant_field(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let v1 = smooth_random_field(&g, &mut rng);
            let v2 = smooth_random_field(&g, &mut rng);
            let b1 = robin_forward(&g, &c, &v1, &rate).unwrap();
            let b2 = robin_forward(&g, &c, &v2, &rate).unwrap();
            let delta: Vec<f64> = v1.iter().zip(v2.iter()).map(|(a, b)| a - b).collect();
            let mut lhs = 0.0;
            for i in 0..delta.len() {
                lhs += g.quad_weights()[i] * (b1[i] - b2[i]) * delta[i];
            }
            let grad_energy = dot(&delta, &stiffness_apply(&g, &Diffusion::scalar(1.0), &delta));
            let mut bdry = 0.0;
            for (i, bw) in g.boundary_weights().iter().enumerate() {
                bdry += bw * delta[i] * delta[i];
            }
            assert!(
                lhs >= grad_energy + cmon * bdry - 1e-10 * (1.0 + lhs.abs()),
                "lhs {lhs} vs {grad_energy} + {cmon}*{bdry}"
            );
        }
    }

    #[test]
    fn elasticity_zero_concentration_gives_zero_displacement() {
        let g = build_grid(2, &[1.0, 1.0], &[7, 7]).unwrap();
        let ep = ElasticParams::new(1.0, 1.0, [[0.1, 0.0], [0.0, 0.1]]).unwrap();
        let u = solve_elasticity(&g, &g.constant_field(0.0), &ep).unwrap();
        assert!(norm_inf(&u) < 1e-13);
    }

    #[test]
    fn elasticity_uniform_eigenstrain_zero_stress() {
        let g = build_grid(2, &[1.0, 1.0], &[9, 9]).unwrap();
        let eps = 0.15;
        let ep = ElasticParams::new(1.3, 0.8, [[eps, 0.0], [0.0, eps]]).unwrap();
        let sys = ElasticSystem::new(&g, &ep).unwrap();
        let c = g.constant_field(0.6);
        let u = sys.solve(&c).unwrap();
        let stress = sys.stress_field(&g, &c, &u);
        for (i, s) in stress.iter().enumerate() {
            assert!(
                s.xx.abs() < 1e-10 && s.yy.abs() < 1e-10 && s.xy.abs() < 1e-10,
                "node {i}: stress {s:?}"
            );
        }
    }

    #[test]
    fn elasticity_weak_residual_small_for_random_data() {
        let g = build_grid(2, &[1.0, 1.0], &[9, 9]).unwrap();
        let ep = ElasticParams::new(1.0, 1.0, [[0.08, 0.02], [0.02, -0.03]]).unwrap();
        let sys = ElasticSystem::new(&g, &ep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let u = sys.solve(&c).unwrap();
        assert!(sys.weak_residual(&c, &u) < 1e-8);
    }

    #[test]
    fn elasticity_kernel_contains_rigid_motions() {
        let g = build_grid(2, &[1.0, 2.0], &[7, 9]).unwrap();
        let ep = ElasticParams::new(1.0, 1.0, [[0.1, 0.0], [0.0, 0.1]]).unwrap();
        let sys = ElasticSystem::new(&g, &ep).unwrap();
        let n = g.node_count();
        let mut u = vec![0.0; 2 * n];
        for node in 0..n {
            let (x, y) = g.coords(node);
            u[node] = 0.3 - 0.7 * y;
            u[n + node] = -0.1 + 0.7 * x;
        }
        let ku = sys.k.mul_vec(&u);
        assert!(norm_inf(&ku) < 1e-10, "rigid motion energy leak {}", norm_inf(&ku));
    }

    #[test]
    fn gradient_matrices_match_function_form() {
        let g = build_grid(2, &[1.0, 1.5], &[6, 5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (dx, dy) = gradient_matrices(&g);
        let [gx, gy] = centered_gradient(&g, &f);
        let mx = dx.mul_vec(&f);
        let my = dy.mul_vec(&f);
        for i in 0..f.len() {
            assert!((mx[i] - gx[i]).abs() < 1e-13);
            assert!((my[i] - gy[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn coupling_matrix_matches_pointwise_evaluation() {
        let g = build_grid(2, &[1.0, 1.0], &[6, 6]).unwrap();
        let ep = ElasticParams::new(0.9, 1.1, [[0.1, 0.03], [0.03, 0.05]]).unwrap();
        let sys = ElasticSystem::new(&g, &ep).unwrap();
        let t = sys.coupling_matrix(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let c: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let tc = t.mul_vec(&c);
        let u = sys.solve(&c).unwrap();
        let strain = crate::physics::nodal_strain(&g, &u);
        for i in 0..c.len() {
            let direct = sys.d0 * c[i] - ep.stress(&strain[i]).contract(&ep.e0);
            assert!((tc[i] - direct).abs() < 1e-9, "node {i}: {} vs {direct}", tc[i]);
        }
    }
}
