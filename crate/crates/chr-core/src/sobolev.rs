//! Fractional and anisotropic Sobolev norms on sampled data.
//!
//! The Gagliardo seminorm |u|_{H^s(0,T)}^2 = int int |u(x)-u(y)|^2 /
//! |x-y|^(1+2s) dx dy is evaluated by a double trapezoid rule over all sample
//! pairs at least one spacing apart; the singular diagonal band |x-y| <
//! spacing is replaced by its local closed form |u'(x)|^2 * int_band
//! r^(1-2s) dr. The discrete form is exactly compatible with the stretching
//! identity |u|_{H^s(0,T)} = T^((1-2s)/2) |u_T|_{H^s(0,1)} at equal sample
//! counts, which pins the quadrature's normalization.
//!
//! The anisotropic norm combines an L2-in-time integral of a discrete H^r
//! norm in space with the nodal Gagliardo content in time. For s = 0 the
//! time term degenerates to the plain space-time L2 norm.

use alloc::vec::Vec;

// Routes float math through libm when built without std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::mesh::Grid;

/// Uniformly sampled function of time on [0, horizon]: scalar samples for the
/// fractional machinery, field samples for the anisotropic norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T = f64> {
    samples: Vec<T>,
    horizon: f64,
}

impl<T> TimeSeries<T> {
    /// Validated constructor: at least 3 samples on a positive horizon.
    pub fn new(samples: Vec<T>, horizon: f64) -> Result<Self> {
        if samples.len() < 3 {
            return Err(Error::InvalidInput(alloc::format!(
                "a time series needs at least 3 samples, got {}",
                samples.len()
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidInput(alloc::format!(
                "time series horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(TimeSeries { samples, horizon })
    }

    /// Sample count.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Never empty by construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Uniform sample spacing.
    pub fn dt(&self) -> f64 {
        self.horizon / (self.samples.len() - 1) as f64
    }

    /// Final sample time.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Samples in time order.
    pub fn samples(&self) -> &[T] {
        &self.samples
    }
}

impl TimeSeries<f64> {
    /// Sample a scalar function at `count` uniform times on [0, horizon].
    pub fn from_fn<F: Fn(f64) -> f64>(horizon: f64, count: usize, f: F) -> Result<Self> {
        let samples = (0..count)
            .map(|j| f(horizon * j as f64 / (count.max(2) - 1) as f64))
            .collect();
        TimeSeries::new(samples, horizon)
    }

    /// Trapezoid L2 norm over [0, horizon].
    pub fn l2_norm(&self) -> f64 {
        trapezoid_sq(&self.samples, self.dt()).sqrt()
    }

    /// Trapezoid L2 norm of the finite-difference time derivative.
    pub fn derivative_l2_norm(&self) -> f64 {
        let du = fd_derivative(&self.samples, self.dt());
        trapezoid_sq(&du, self.dt()).sqrt()
    }
}

/// Trapezoid quadrature of the squared samples.
fn trapezoid_sq(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        acc += w * v * v;
    }
    acc * dt
}

/// Second-order finite-difference derivative: centered inside, one-sided at
/// the ends (difference form, exactly zero on constants).
fn fd_derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    debug_assert!(n >= 3);
    let sided = |a: f64, b: f64, c: f64| (4.0 * (b - a) - (c - a)) / (2.0 * dt);
    let mut out = Vec::with_capacity(n);
    out.push(sided(values[0], values[1], values[2]));
    for i in 1..n - 1 {
        out.push((values[i + 1] - values[i - 1]) / (2.0 * dt));
    }
    out.push(-sided(values[n - 1], values[n - 2], values[n - 3]));
    out
}

fn check_fraction_order(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidInput(alloc::format!(
            "fractional order must lie in (0, 1), got {s}"
        )));
    }
    Ok(())
}

/// Pair kernel (dt*k)^(-(1+2s)) for distances k = 1..n-1.
fn pair_kernel(n: usize, dt: f64, s: f64) -> Vec<f64> {
    (1..n).map(|k| (dt * k as f64).powf(-(1.0 + 2.0 * s))).collect()
}

/// Coefficient of the diagonal-band surrogate: 2 dt^(2-2s) / (2-2s).
fn band_coefficient(dt: f64, s: f64) -> f64 {
    2.0 * dt.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s)
}

/// Squared Gagliardo seminorm of one sample vector with precomputed kernel.
fn gagliardo_sq_with(values: &[f64], dt: f64, kernel: &[f64], band_coef: f64) -> f64 {
    let n = values.len();
    let mut offdiag = 0.0;
    for k in 1..n {
        let mut sum = 0.0;
        for i in 0..n - k {
            let wi = if i == 0 { 0.5 } else { 1.0 };
            let wj = if i + k == n - 1 { 0.5 } else { 1.0 };
            let d = values[i] - values[i + k];
            sum += wi * wj * d * d;
        }
        // Ordered pairs (x, y) and (y, x) contribute equally.
        offdiag += 2.0 * kernel[k - 1] * sum;
    }
    offdiag *= dt * dt;
    let du = fd_derivative(values, dt);
    offdiag + band_coef * trapezoid_sq(&du, dt)
}

/// Gagliardo fractional seminorm |u|_{H^s(0,T)} for s in (0, 1).
pub fn gagliardo_seminorm(u: &TimeSeries, s: f64) -> Result<f64> {
    check_fraction_order(s)?;
    for (j, v) in u.samples.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(alloc::format!(
                "non-finite sample at index {j}"
            )));
        }
    }
    let dt = u.dt();
    let kernel = pair_kernel(u.len(), dt, s);
    Ok(gagliardo_sq_with(&u.samples, dt, &kernel, band_coefficient(dt, s)).sqrt())
}

/// Fractional norm ||u||_{H^s} = ||u||_{L2} + |u|_{H^s}.
pub fn fractional_norm(u: &TimeSeries, s: f64) -> Result<f64> {
    Ok(u.l2_norm() + gagliardo_seminorm(u, s)?)
}

/// Squared discrete H^r content of one spatial field: L2 plus the pure
/// derivative L2 terms per axis up to order r (repeated centered stencils).
pub fn spatial_sobolev_sq(grid: &Grid, f: &[f64], r: usize) -> Result<f64> {
    if r > 3 {
        return Err(Error::InvalidInput(alloc::format!(
            "spatial derivative order must be at most 3, got {r}"
        )));
    }
    if f.len() != grid.node_count() {
        return Err(Error::InvalidInput("field length mismatch".into()));
    }
    let (dx, dy) = crate::operators::gradient_matrices(grid);
    let w = grid.quad_weights();
    let l2sq = |g: &[f64]| -> f64 { g.iter().zip(w.iter()).map(|(v, wi)| wi * v * v).sum() };
    let mut acc = l2sq(f);
    let mut fx = f.to_vec();
    let mut fy = f.to_vec();
    for _ in 0..r {
        fx = dx.mul_vec(&fx);
        acc += l2sq(&fx);
        if grid.dim() == 2 {
            fy = dy.mul_vec(&fy);
            acc += l2sq(&fy);
        }
    }
    Ok(acc)
}

/// Anisotropic space-time norm: sqrt of the time integral of the discrete
/// H^r space norm squared plus the spatial integral of the nodal time
/// content. The time content is the Gagliardo seminorm squared for s > 0 and
/// the plain L2 norm squared for s = 0.
pub fn aniso_norm(grid: &Grid, u: &TimeSeries<Vec<f64>>, r: usize, s: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::InvalidInput(alloc::format!(
            "temporal order must lie in [0, 1), got {s}"
        )));
    }
    for (j, field) in u.samples.iter().enumerate() {
        if field.len() != grid.node_count() {
            return Err(Error::InvalidInput(alloc::format!(
                "sample {j} has {} nodes, grid has {}",
                field.len(),
                grid.node_count()
            )));
        }
    }
    let nt = u.len();
    let dt = u.dt();
    let mut space = 0.0;
    for (j, field) in u.samples.iter().enumerate() {
        let tw = if j == 0 || j + 1 == nt { 0.5 * dt } else { dt };
        space += tw * spatial_sobolev_sq(grid, field, r)?;
    }
    let w = grid.quad_weights();
    let mut time = 0.0;
    if s == 0.0 {
        for (j, field) in u.samples.iter().enumerate() {
            let tw = if j == 0 || j + 1 == nt { 0.5 * dt } else { dt };
            for (i, v) in field.iter().enumerate() {
                time += tw * w[i] * v * v;
            }
        }
    } else {
        let kernel = pair_kernel(nt, dt, s);
        let band = band_coefficient(dt, s);
        let mut series = alloc::vec![0.0; nt];
        for (i, wi) in w.iter().enumerate() {
            for (j, field) in u.samples.iter().enumerate() {
                series[j] = field[i];
            }
            time += wi * gagliardo_sq_with(&series, dt, &kernel, band);
        }
    }
    Ok((space + time).sqrt())
}

/// Extend a scalar series from [0, T] to at least `t_target` by repeated even
/// reflection about the endpoints, keeping the sample spacing. The returned
/// horizon is the smallest sample time at or beyond `t_target`.
pub fn reflect_extend(u: &TimeSeries, t_target: f64) -> Result<TimeSeries> {
    if !(t_target >= u.horizon) || !t_target.is_finite() {
        return Err(Error::InvalidInput(alloc::format!(
            "extension target {t_target} must reach at least the horizon {}",
            u.horizon
        )));
    }
    let n = u.len();
    let dt = u.dt();
    let mut m = n;
    while ((m - 1) as f64) * dt < t_target - 1e-12 * t_target.max(1.0) {
        m += 1;
    }
    let period = 2 * (n - 1);
    let samples = (0..m)
        .map(|j| {
            let idx = j % period;
            u.samples[if idx < n { idx } else { period - idx }]
        })
        .collect();
    TimeSeries::new(samples, ((m - 1) as f64) * dt)
}

/// Both sides of the extension bound for a single reflection: the fractional
/// norm of the extension to `t_target` (at most one horizon doubling) against
/// 2 * ((1 + T^-s) ||u||_{L2} + |u|_{H^s}). The reflection construction
/// realizes the bound with constant 2 on that range.
pub fn extension_bound(u: &TimeSeries, s: f64, t_target: f64) -> Result<(f64, f64)> {
    check_fraction_order(s)?;
    if t_target > 2.0 * u.horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(alloc::format!(
            "certified extension bound covers targets up to one doubling, got {t_target} from {}",
            u.horizon
        )));
    }
    let ext = reflect_extend(u, t_target)?;
    let lhs = fractional_norm(&ext, s)?;
    let rhs = 2.0
        * ((1.0 + u.horizon.powf(-s)) * u.l2_norm() + gagliardo_seminorm(u, s)?);
    Ok((lhs, rhs))
}
