//! Model data: free-energy densities, reaction rates with closed-form
//! antiderivatives, elastic parameters, and the energy/chemical-potential
//! evaluations built from them.

use alloc::format;
use alloc::vec::Vec;

// Routes float math through libm when built without std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::mesh::{centered_gradient, Grid};
use crate::operators;

/// Overflow guard for exponential arguments.
const EXP_GUARD: f64 = 700.0;

/// Free-energy density kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreeEnergyKind {
    /// omega*s*(1-s) + KT*(s ln s + (1-s) ln(1-s)), defined on (0,1).
    RegularSolution {
        /// Enthalpy coefficient.
        omega: f64,
        /// Product of Boltzmann constant and absolute temperature, > 0.
        kt: f64,
    },
    /// (s^2 - 1)^2 on all of R.
    DoubleWell,
    /// s^2 / 2 on all of R.
    Quadratic,
}

/// Free-energy density with optional quadratic continuation outside a
/// configured interval (the clamped extension used by solvers that need
/// globally bounded second and third derivatives).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergy {
    kind: FreeEnergyKind,
    /// Admissible-domain floor for the logarithmic kind: s in [eps, 1-eps].
    eps_dom: f64,
    /// Quadratic continuation outside [lo, hi] when present.
    clamp: Option<(f64, f64)>,
}

impl FreeEnergy {
    /// Regular-solution density. Requires kt > 0.
    pub fn regular_solution(omega: f64, kt: f64) -> Result<Self> {
        if !(kt > 0.0) || !kt.is_finite() || !omega.is_finite() {
            return Err(Error::InvalidInput(format!(
                "regular solution requires finite omega and kt > 0, got omega={omega}, kt={kt}"
            )));
        }
        Ok(FreeEnergy { kind: FreeEnergyKind::RegularSolution { omega, kt }, eps_dom: 1e-9, clamp: None })
    }

    /// Double-well density (s^2 - 1)^2.
    pub fn double_well() -> Self {
        FreeEnergy { kind: FreeEnergyKind::DoubleWell, eps_dom: 1e-9, clamp: None }
    }

    /// Quadratic density s^2/2.
    pub fn quadratic() -> Self {
        FreeEnergy { kind: FreeEnergyKind::Quadratic, eps_dom: 1e-9, clamp: None }
    }

    /// Replace the domain floor of the logarithmic kind (default 1e-9).
    pub fn with_domain_floor(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidInput(format!("domain floor must lie in (0, 0.5), got {eps}")));
        }
        self.eps_dom = eps;
        Ok(self)
    }

    /// Continue the density quadratically outside [lo, hi] (value, first and
    /// second derivative match at the junctions; third derivative is zero
    /// outside). The interval must lie inside the kind's domain.
    pub fn clamped(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!("clamp interval requires lo < hi, got [{lo}, {hi}]")));
        }
        if let FreeEnergyKind::RegularSolution { .. } = self.kind {
            if lo < self.eps_dom || hi > 1.0 - self.eps_dom {
                return Err(Error::InvalidInput(format!(
                    "clamp interval [{lo}, {hi}] must lie inside [{}, {}]",
                    self.eps_dom,
                    1.0 - self.eps_dom
                )));
            }
        }
        self.clamp = Some((lo, hi));
        Ok(self)
    }

    /// Kind accessor.
    pub fn kind(&self) -> FreeEnergyKind {
        self.kind
    }

    /// Domain floor accessor.
    pub fn domain_floor(&self) -> f64 {
        self.eps_dom
    }

    /// Evaluate the density or one of its first three derivatives.
    pub fn eval(&self, s: f64, order: usize) -> Result<f64> {
        if order > 3 {
            return Err(Error::InvalidInput(format!("derivative order {order} exceeds 3")));
        }
        if !s.is_finite() {
            return Err(Error::Domain { value: s, detail: "free energy argument must be finite".into() });
        }
        if let Some((lo, hi)) = self.clamp {
            // Quadratic continuation around the nearest junction.
            let t = if s < lo {
                lo
            } else if s > hi {
                hi
            } else {
                return self.eval_raw(s, order);
            };
            let d = s - t;
            let f0 = self.eval_raw(t, 0)?;
            let f1 = self.eval_raw(t, 1)?;
            let f2 = self.eval_raw(t, 2)?;
            return Ok(match order {
                0 => f0 + f1 * d + 0.5 * f2 * d * d,
                1 => f1 + f2 * d,
                2 => f2,
                _ => 0.0,
            });
        }
        self.eval_raw(s, order)
    }

    fn eval_raw(&self, s: f64, order: usize) -> Result<f64> {
        match self.kind {
            FreeEnergyKind::RegularSolution { omega, kt } => {
                if s < self.eps_dom || s > 1.0 - self.eps_dom {
                    return Err(Error::Domain {
                        value: s,
                        detail: format!(
                            "regular solution defined on [{}, {}]",
                            self.eps_dom,
                            1.0 - self.eps_dom
                        ),
                    });
                }
                Ok(match order {
                    0 => omega * s * (1.0 - s) + kt * (s * s.ln() + (1.0 - s) * (1.0 - s).ln()),
                    1 => omega * (1.0 - 2.0 * s) + kt * (s / (1.0 - s)).ln(),
                    2 => -2.0 * omega + kt / (s * (1.0 - s)),
                    _ => kt * (1.0 / ((1.0 - s) * (1.0 - s)) - 1.0 / (s * s)),
                })
            }
            FreeEnergyKind::DoubleWell => {
                let q = s * s - 1.0;
                Ok(match order {
                    0 => q * q,
                    1 => 4.0 * s * q,
                    2 => 12.0 * s * s - 4.0,
                    _ => 24.0 * s,
                })
            }
            FreeEnergyKind::Quadratic => Ok(match order {
                0 => 0.5 * s * s,
                1 => s,
                2 => 1.0,
                _ => 0.0,
            }),
        }
    }
}

/// Boundary reaction rate R(s, w), strictly decreasing in w.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReactionRate {
    /// k_ins exp(beta (mu_e - w)) - k_ext s exp(beta (w - mu_e)).
    ButlerVolmer {
        /// Insertion coefficient, > 0.
        k_ins: f64,
        /// Extraction coefficient, > 0.
        k_ext: f64,
        /// Inverse-temperature slope, > 0.
        beta: f64,
        /// Reference potential.
        mu_e: f64,
    },
    /// -kappa w.
    Linear {
        /// Slope, > 0.
        kappa: f64,
    },
    /// Butler-Volmer with each exponential continued by its first-order
    /// Taylor expansion once its argument exceeds beta*w_max; C^1, strictly
    /// monotone, and of polynomial (quadratic) growth.
    TruncatedBv {
        /// Insertion coefficient, > 0.
        k_ins: f64,
        /// Extraction coefficient, > 0.
        k_ext: f64,
        /// Inverse-temperature slope, > 0.
        beta: f64,
        /// Reference potential.
        mu_e: f64,
        /// Truncation level: exponentials are linearized for |w - mu_e| > w_max.
        w_max: f64,
    },
}

/// exp continued linearly above the cut: C^1, nondecreasing, at most linear
/// growth beyond the cut.
#[inline]
fn texp(z: f64, cut: f64) -> f64 {
    if z <= cut {
        z.exp()
    } else {
        cut.exp() * (1.0 + (z - cut))
    }
}

/// Derivative of [`texp`].
#[inline]
fn texp_d(z: f64, cut: f64) -> f64 {
    if z <= cut {
        z.exp()
    } else {
        cut.exp()
    }
}

/// Antiderivative of [`texp`] (equals exp below the cut, continuous above).
#[inline]
fn texp_ad(z: f64, cut: f64) -> f64 {
    if z <= cut {
        z.exp()
    } else {
        let d = z - cut;
        cut.exp() * (1.0 + d + 0.5 * d * d)
    }
}

impl ReactionRate {
    /// Butler-Volmer rate. All coefficients must be finite, k_ins, k_ext,
    /// beta positive, and |beta*mu_e| within the overflow guard.
    pub fn butler_volmer(k_ins: f64, k_ext: f64, beta: f64, mu_e: f64) -> Result<Self> {
        Self::check_bv(k_ins, k_ext, beta, mu_e)?;
        Ok(ReactionRate::ButlerVolmer { k_ins, k_ext, beta, mu_e })
    }

    /// Linear rate R = -kappa w; kappa >= 0 (zero disables the boundary
    /// reaction entirely, which the implicit solvers accept but the strictly
    /// monotone inversions reject).
    pub fn linear(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidInput(format!("linear rate requires kappa >= 0, got {kappa}")));
        }
        Ok(ReactionRate::Linear { kappa })
    }

    /// Truncated Butler-Volmer rate; w_max > 0 sets the linearization cut.
    pub fn truncated_bv(k_ins: f64, k_ext: f64, beta: f64, mu_e: f64, w_max: f64) -> Result<Self> {
        Self::check_bv(k_ins, k_ext, beta, mu_e)?;
        if !(w_max > 0.0) || !w_max.is_finite() {
            return Err(Error::InvalidInput(format!("truncation level must be positive, got {w_max}")));
        }
        if beta * w_max > EXP_GUARD {
            return Err(Error::RangeOverflow { argument: beta * w_max });
        }
        Ok(ReactionRate::TruncatedBv { k_ins, k_ext, beta, mu_e, w_max })
    }

    fn check_bv(k_ins: f64, k_ext: f64, beta: f64, mu_e: f64) -> Result<()> {
        for (name, v) in [("k_ins", k_ins), ("k_ext", k_ext), ("beta", beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !mu_e.is_finite() {
            return Err(Error::InvalidInput(format!("mu_e must be finite, got {mu_e}")));
        }
        if (beta * mu_e).abs() > EXP_GUARD {
            return Err(Error::RangeOverflow { argument: beta * mu_e });
        }
        Ok(())
    }

    /// Evaluate R(s, w).
    pub fn rate(&self, s: f64, w: f64) -> Result<f64> {
        match *self {
            ReactionRate::ButlerVolmer { k_ins, k_ext, beta, mu_e } => {
                let z = beta * (w - mu_e);
                if z.abs() > EXP_GUARD {
                    return Err(Error::RangeOverflow { argument: z });
                }
                Ok(k_ins * (-z).exp() - k_ext * s * z.exp())
            }
            ReactionRate::Linear { kappa } => Ok(-kappa * w),
            ReactionRate::TruncatedBv { k_ins, k_ext, beta, mu_e, w_max } => {
                let z = beta * (w - mu_e);
                let cut = beta * w_max;
                Ok(k_ins * texp(-z, cut) - k_ext * s * texp(z, cut))
            }
        }
    }

    /// Partial derivative of R in w (strictly negative for s >= 0).
    pub fn rate_dw(&self, s: f64, w: f64) -> Result<f64> {
        match *self {
            ReactionRate::ButlerVolmer { k_ins, k_ext, beta, mu_e } => {
                let z = beta * (w - mu_e);
                if z.abs() > EXP_GUARD {
                    return Err(Error::RangeOverflow { argument: z });
                }
                Ok(-beta * (k_ins * (-z).exp() + k_ext * s * z.exp()))
            }
            ReactionRate::Linear { kappa } => Ok(-kappa),
            ReactionRate::TruncatedBv { k_ins, k_ext, beta, mu_e, w_max } => {
                let z = beta * (w - mu_e);
                let cut = beta * w_max;
                Ok(-beta * (k_ins * texp_d(-z, cut) + k_ext * s * texp_d(z, cut)))
            }
        }
    }

    /// Antiderivative G(s, w) with dG/dw = R and G(s, 0) = 0, in closed form.
    pub fn antiderivative(&self, s: f64, w: f64) -> Result<f64> {
        match *self {
            ReactionRate::ButlerVolmer { k_ins, k_ext, beta, mu_e } => {
                let zw = beta * (w - mu_e);
                let z0 = -beta * mu_e;
                if zw.abs() > EXP_GUARD {
                    return Err(Error::RangeOverflow { argument: zw });
                }
                Ok((k_ins / beta) * ((-z0).exp() - (-zw).exp())
                    - (k_ext * s / beta) * (zw.exp() - z0.exp()))
            }
            ReactionRate::Linear { kappa } => Ok(-0.5 * kappa * w * w),
            ReactionRate::TruncatedBv { k_ins, k_ext, beta, mu_e, w_max } => {
                let zw = beta * (w - mu_e);
                let z0 = -beta * mu_e;
                let cut = beta * w_max;
                Ok((k_ins / beta) * (texp_ad(-z0, cut) - texp_ad(-zw, cut))
                    - (k_ext * s / beta) * (texp_ad(zw, cut) - texp_ad(z0, cut)))
            }
        }
    }

    /// Declared lower bound on -dR/dw, valid for every w and every
    /// s >= s_min; used by the monotonicity property checks. Only the linear
    /// and truncated kinds admit a global constant.
    pub fn monotonicity_constant(&self, s_min: f64) -> Option<f64> {
        match *self {
            ReactionRate::Linear { kappa } => Some(kappa),
            ReactionRate::TruncatedBv { k_ins, k_ext, beta, .. } => {
                // For z >= 0 the extraction term has texp' >= 1; for z <= 0 the
                // insertion term does. Hence -dR/dw >= beta*min(k_ins, k_ext*s_min).
                Some(beta * k_ins.min(k_ext * s_min.max(0.0)))
            }
            ReactionRate::ButlerVolmer { .. } => None,
        }
    }

    /// Declared constant C for the sign condition -w R(s,w) >= |w|^2/C - C,
    /// valid for all w and s in [s_min, s_max] with s_min > 0; linear and
    /// truncated kinds only.
    pub fn sign_condition_constant(&self, s_min: f64, s_max: f64) -> Option<f64> {
        match *self {
            ReactionRate::Linear { kappa } => Some(1.0 / kappa),
            ReactionRate::TruncatedBv { k_ins, k_ext, beta, mu_e, w_max } => {
                if !(s_min > 0.0) || s_max < s_min {
                    return None;
                }
                let c1 = beta * k_ins.min(k_ext * s_min);
                let cut = beta * w_max;
                let b0 = k_ins * texp(beta * mu_e, cut) + k_ext * s_max * texp(-beta * mu_e, cut);
                // -wR >= c1 w^2 - b0 |w| >= (c1/2) w^2 - b0^2/(2 c1).
                Some((2.0 / c1).max(b0 * b0 / (2.0 * c1)))
            }
            ReactionRate::ButlerVolmer { .. } => None,
        }
    }
}

/// Symmetric 2x2 tensor (plane strain components).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor2 {
    /// xx component.
    pub xx: f64,
    /// yy component.
    pub yy: f64,
    /// xy = yx component.
    pub xy: f64,
}

impl SymTensor2 {
    /// Double contraction a : b (counts the off-diagonal twice).
    #[inline]
    pub fn contract(&self, other: &SymTensor2) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    /// Componentwise a - t*b.
    #[inline]
    pub fn sub_scaled(&self, other: &SymTensor2, t: f64) -> SymTensor2 {
        SymTensor2 { xx: self.xx - t * other.xx, yy: self.yy - t * other.yy, xy: self.xy - t * other.xy }
    }
}

/// Isotropic plane-strain elasticity: stiffness C xi = 2 mu sym(xi) + lambda tr(xi) I,
/// plus the lattice misfit tensor e0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    /// First Lame parameter.
    pub lambda: f64,
    /// Shear modulus, > 0.
    pub mu_shear: f64,
    /// Misfit (eigenstrain per unit concentration).
    pub e0: SymTensor2,
}

impl ElasticParams {
    /// Validated constructor; requires mu_shear > 0 and lambda + mu_shear > 0
    /// (positive definiteness on symmetric tensors) and symmetric e0 input.
    pub fn new(lambda: f64, mu_shear: f64, e0: [[f64; 2]; 2]) -> Result<Self> {
        if !(mu_shear > 0.0) || !(lambda + mu_shear > 0.0) {
            return Err(Error::InvalidInput(format!(
                "elastic stiffness requires mu > 0 and lambda + mu > 0, got lambda={lambda}, mu={mu_shear}"
            )));
        }
        if (e0[0][1] - e0[1][0]).abs() > 1e-14 * (1.0 + e0[0][1].abs()) {
            return Err(Error::InvalidInput("misfit tensor e0 must be symmetric".into()));
        }
        Ok(ElasticParams {
            lambda,
            mu_shear,
            e0: SymTensor2 { xx: e0[0][0], yy: e0[1][1], xy: e0[0][1] },
        })
    }

    /// Apply the stiffness tensor to a symmetric strain.
    #[inline]
    pub fn stress(&self, e: &SymTensor2) -> SymTensor2 {
        let tr = e.xx + e.yy;
        SymTensor2 {
            xx: 2.0 * self.mu_shear * e.xx + self.lambda * tr,
            yy: 2.0 * self.mu_shear * e.yy + self.lambda * tr,
            xy: 2.0 * self.mu_shear * e.xy,
        }
    }
}

/// Complete model parameter set.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Free-energy density.
    pub free_energy: FreeEnergy,
    /// Boundary reaction rate.
    pub rate: ReactionRate,
    /// Interface coefficient rho > 0.
    pub rho: f64,
    /// Optional elastic coupling.
    pub elasticity: Option<ElasticParams>,
    /// Optional truncation level for the strong pathway, > 0 when present.
    pub alpha: Option<f64>,
}

impl ModelParams {
    /// Validate scalar constraints.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidInput(format!("rho must be positive, got {}", self.rho)));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::InvalidInput(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// Nodal strain field of a stacked displacement [u1..., u2...] by the
/// second-order nodal gradient.
pub(crate) fn nodal_strain(grid: &Grid, u: &[f64]) -> Vec<SymTensor2> {
    let n = grid.node_count();
    assert_eq!(u.len(), 2 * n, "displacement must hold two stacked components");
    let [u1x, u1y] = centered_gradient(grid, &u[..n]);
    let [u2x, u2y] = centered_gradient(grid, &u[n..]);
    (0..n)
        .map(|i| SymTensor2 { xx: u1x[i], yy: u2y[i], xy: 0.5 * (u1y[i] + u2x[i]) })
        .collect()
}

/// Total free energy: quadrature of f(c) + (rho/2)|grad c|^2 plus, when
/// elasticity is configured, (1/2) C(e(u) - c e0):(e(u) - c e0). Gradients are
/// centered in the interior and one-sided at the boundary. `u` must be present
/// exactly when `p.elasticity` is.
pub fn total_energy(grid: &Grid, c: &[f64], u: Option<&[f64]>, p: &ModelParams) -> Result<f64> {
    p.validate()?;
    if u.is_some() != p.elasticity.is_some() {
        return Err(Error::InvalidInput(
            "displacement must be supplied exactly when elasticity is configured".into(),
        ));
    }
    let w = grid.quad_weights();
    let mut acc = 0.0;
    for (i, &ci) in c.iter().enumerate() {
        acc += w[i] * p.free_energy.eval(ci, 0)?;
    }
    let [gx, gy] = centered_gradient(grid, c);
    for i in 0..c.len() {
        acc += 0.5 * p.rho * w[i] * (gx[i] * gx[i] + gy[i] * gy[i]);
    }
    if let (Some(u), Some(ep)) = (u, &p.elasticity) {
        let strain = nodal_strain(grid, u);
        for i in 0..c.len() {
            let misfit = strain[i].sub_scaled(&ep.e0, c[i]);
            acc += 0.5 * w[i] * ep.stress(&misfit).contract(&misfit);
        }
    }
    Ok(acc)
}

/// Chemical potential mu = -rho lap(c) + f'(c) + C(c e0 - e(u)):e0 nodewise.
/// The discrete Laplacian uses ghost reflection, so callers are expected to
/// provide fields with vanishing discrete normal derivative.
pub fn chemical_potential(grid: &Grid, c: &[f64], u: Option<&[f64]>, p: &ModelParams) -> Result<Vec<f64>> {
    p.validate()?;
    if u.is_some() != p.elasticity.is_some() {
        return Err(Error::InvalidInput(
            "displacement must be supplied exactly when elasticity is configured".into(),
        ));
    }
    let lap = operators::laplacian(grid, c, &operators::Diffusion::scalar(1.0))?;
    let mut mu = Vec::with_capacity(c.len());
    for i in 0..c.len() {
        mu.push(-p.rho * lap[i] + p.free_energy.eval(c[i], 1)?);
    }
    if let (Some(u), Some(ep)) = (u, &p.elasticity) {
        let strain = nodal_strain(grid, u);
        for i in 0..c.len() {
            // C(c e0 - e(u)) : e0 = -C(e(u) - c e0) : e0.
            let misfit = strain[i].sub_scaled(&ep.e0, c[i]);
            mu[i] -= ep.stress(&misfit).contract(&ep.e0);
        }
    }
    Ok(mu)
}
