//! Tensor-product grids on an interval [0, Lx] or rectangle [0, Lx] x [0, Ly],
//! nodal fields, trapezoidal quadrature, and boundary indexing.
//!
//! Nodes are stored row-major, `id = j*nx + i`, with spacing `hx = Lx/(nx-1)`.
//! Boundary integration walks face-wise entries: each face carries its own 1D
//! trapezoid weights, so a 2D corner node appears in two entries (one per
//! adjacent face) with half-weights. Normal derivatives at corners are never
//! required; all Neumann data is imposed face-wise.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

// Routes float math through libm when built without std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Which face of the domain a boundary entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    /// x = 0.
    XLow,
    /// x = Lx.
    XHigh,
    /// y = 0 (2D only).
    YLow,
    /// y = Ly (2D only).
    YHigh,
}

/// One face contribution to the boundary quadrature.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEntry {
    /// Flat node id.
    pub node: usize,
    /// Outward unit normal of the face.
    pub normal: [f64; 2],
    /// Trapezoid weight of this node within its face.
    pub weight: f64,
    /// Face this entry belongs to.
    pub face: Face,
}

/// Tensor-product grid with quadrature and boundary indexing.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    hx: f64,
    hy: f64,
    weights: Vec<f64>,
    boundary: Vec<BoundaryEntry>,
    bweights: Vec<f64>,
}

/// Build a grid. `extents` and `counts` must both have length `dim` (1 or 2);
/// counts must be at least 5 per axis so second-order one-sided boundary
/// stencils exist, and extents must be positive.
pub fn build_grid(dim: usize, extents: &[f64], counts: &[usize]) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(Error::InvalidInput(format!("dim must be 1 or 2, got {dim}")));
    }
    if extents.len() != dim || counts.len() != dim {
        return Err(Error::InvalidInput(format!(
            "expected {dim} extents and counts, got {} and {}",
            extents.len(),
            counts.len()
        )));
    }
    for (axis, &n) in counts.iter().enumerate() {
        if n < 5 {
            return Err(Error::InvalidInput(format!(
                "counts[{axis}] = {n} is below the minimum of 5 nodes per axis"
            )));
        }
    }
    for (axis, &l) in extents.iter().enumerate() {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidInput(format!(
                "extents[{axis}] = {l} must be positive and finite"
            )));
        }
    }

    let nx = counts[0];
    let lx = extents[0];
    let hx = lx / (nx - 1) as f64;
    let (ny, ly, hy) = if dim == 2 {
        let ny = counts[1];
        let ly = extents[1];
        (ny, ly, ly / (ny - 1) as f64)
    } else {
        (1, 0.0, 0.0)
    };

    // Tensor-product trapezoid weights.
    let axis_w = |n: usize, h: f64, k: usize| -> f64 {
        if k == 0 || k == n - 1 {
            0.5 * h
        } else {
            h
        }
    };
    let n_nodes = nx * ny;
    let mut weights = vec![0.0; n_nodes];
    for j in 0..ny {
        let wy = if dim == 2 { axis_w(ny, hy, j) } else { 1.0 };
        for i in 0..nx {
            weights[j * nx + i] = axis_w(nx, hx, i) * wy;
        }
    }

    // Face-wise boundary entries. 1D boundaries are points with unit weight.
    let mut boundary = Vec::new();
    if dim == 1 {
        boundary.push(BoundaryEntry { node: 0, normal: [-1.0, 0.0], weight: 1.0, face: Face::XLow });
        boundary.push(BoundaryEntry {
            node: nx - 1,
            normal: [1.0, 0.0],
            weight: 1.0,
            face: Face::XHigh,
        });
    } else {
        for j in 0..ny {
            let w = axis_w(ny, hy, j);
            boundary.push(BoundaryEntry {
                node: j * nx,
                normal: [-1.0, 0.0],
                weight: w,
                face: Face::XLow,
            });
        }
        for j in 0..ny {
            let w = axis_w(ny, hy, j);
            boundary.push(BoundaryEntry {
                node: j * nx + nx - 1,
                normal: [1.0, 0.0],
                weight: w,
                face: Face::XHigh,
            });
        }
        for i in 0..nx {
            let w = axis_w(nx, hx, i);
            boundary.push(BoundaryEntry { node: i, normal: [0.0, -1.0], weight: w, face: Face::YLow });
        }
        for i in 0..nx {
            let w = axis_w(nx, hx, i);
            boundary.push(BoundaryEntry {
                node: (ny - 1) * nx + i,
                normal: [0.0, 1.0],
                weight: w,
                face: Face::YHigh,
            });
        }
    }
    let mut bweights = vec![0.0; n_nodes];
    for e in &boundary {
        bweights[e.node] += e.weight;
    }

    Ok(Grid { dim, nx, ny, lx, ly, hx, hy, weights, boundary, bweights })
}

impl Grid {
    /// Spatial dimension (1 or 2).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes along x.
    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Nodes along y (1 in 1D).
    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Extent along x.
    pub fn lx(&self) -> f64 {
        self.lx
    }

    /// Extent along y (0 in 1D).
    pub fn ly(&self) -> f64 {
        self.ly
    }

    /// Spacing along x.
    pub fn hx(&self) -> f64 {
        self.hx
    }

    /// Spacing along y (0 in 1D).
    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Total node count.
    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat id of node (i, j).
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Coordinates of a node (y = 0 in 1D).
    #[inline]
    pub fn coords(&self, node: usize) -> (f64, f64) {
        debug_assert!(node < self.node_count());
        let i = node % self.nx;
        let j = node / self.nx;
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    /// Whether a node lies on the boundary.
    #[inline]
    pub fn is_boundary(&self, node: usize) -> bool {
        let i = node % self.nx;
        let j = node / self.nx;
        i == 0 || i == self.nx - 1 || (self.dim == 2 && (j == 0 || j == self.ny - 1))
    }

    /// Bulk trapezoid weights, one per node.
    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Face-wise boundary quadrature entries.
    pub fn boundary(&self) -> &[BoundaryEntry] {
        &self.boundary
    }

    /// Accumulated boundary quadrature weight per node (0 in the interior;
    /// corners carry contributions from both adjacent faces).
    pub fn boundary_weights(&self) -> &[f64] {
        &self.bweights
    }

    /// Trapezoidal quadrature of a nodal field over the domain.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.node_count(), "field length mismatch");
        let mut acc = 0.0;
        for (w, v) in self.weights.iter().zip(f.iter()) {
            acc += w * v;
        }
        acc
    }

    /// Trapezoidal quadrature of a nodal field over the boundary.
    /// In 1D this is f(0) + f(Lx).
    pub fn boundary_integrate(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.node_count(), "field length mismatch");
        let mut acc = 0.0;
        for e in &self.boundary {
            acc += e.weight * f[e.node];
        }
        acc
    }

    /// Constant field.
    pub fn constant_field(&self, v: f64) -> Vec<f64> {
        vec![v; self.node_count()]
    }

    /// Field sampled from a coordinate function (y = 0 in 1D).
    pub fn field_from_fn<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for (node, slot) in out.iter_mut().enumerate() {
            let (x, y) = self.coords(node);
            *slot = f(x, y);
        }
        out
    }

    /// Smooth compactly supported perturbation: `base` everywhere, plus a
    /// polynomial bump of the given amplitude supported on the fractional
    /// window (lo, hi) of each axis. The profile (1 - t^2)^6 vanishes with
    /// five continuous derivatives at the window edge, so the field is exactly
    /// `base` near the boundary (plateau data for compatibility-gated solvers).
    pub fn plateau_bump(&self, base: f64, amplitude: f64, lo: f64, hi: f64) -> Vec<f64> {
        assert!(0.0 < lo && lo < hi && hi < 1.0, "window must satisfy 0 < lo < hi < 1");
        let profile = |t: f64, l: f64| -> f64 {
            let a = lo * l;
            let b = hi * l;
            if t <= a || t >= b {
                return 0.0;
            }
            let u = 2.0 * (t - a) / (b - a) - 1.0;
            let q = 1.0 - u * u;
            q.powi(6)
        };
        self.field_from_fn(|x, y| {
            let bx = profile(x, self.lx);
            let by = if self.dim == 2 { profile(y, self.ly) } else { 1.0 };
            base + amplitude * bx * by
        })
    }

    /// Error if any value is non-finite, naming the first offending node.
    pub fn check_finite(&self, f: &[f64]) -> Result<()> {
        for (node, v) in f.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::DomainExit {
                    node,
                    value: *v,
                    detail: "non-finite field value".into(),
                });
            }
        }
        Ok(())
    }

    /// CSV snapshot: header line `# grid dim=.. nx=.. [ny=..] Lx=.. [Ly=..]`,
    /// then one row `i[,j],x[,y],value` per node.
    pub fn snapshot_csv(&self, f: &[f64]) -> String {
        assert_eq!(f.len(), self.node_count(), "field length mismatch");
        let mut out = String::new();
        if self.dim == 1 {
            let _ = writeln!(out, "# grid dim=1 nx={} Lx={}", self.nx, self.lx);
            for i in 0..self.nx {
                let _ = writeln!(out, "{},{},{}", i, i as f64 * self.hx, f[i]);
            }
        } else {
            let _ = writeln!(
                out,
                "# grid dim=2 nx={} ny={} Lx={} Ly={}",
                self.nx, self.ny, self.lx, self.ly
            );
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        i,
                        j,
                        i as f64 * self.hx,
                        j as f64 * self.hy,
                        f[self.idx(i, j)]
                    );
                }
            }
        }
        out
    }
}

/// Second-order nodal gradient: centered differences in the interior,
/// one-sided three-point stencils at the boundary. Returns one component
/// per axis; the y component of a 1D grid is identically zero.
pub fn centered_gradient(grid: &Grid, f: &[f64]) -> [Vec<f64>; 2] {
    assert_eq!(f.len(), grid.node_count(), "field length mismatch");
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut gx = vec![0.0; f.len()];
    let mut gy = vec![0.0; f.len()];
    let dx = |a: f64, b: f64, c: f64, h: f64, sided: bool| -> f64 {
        if sided {
            // (-3a + 4b - c) / (2h) in difference form: exact on quadratics
            // and exactly zero on constants.
            (4.0 * (b - a) - (c - a)) / (2.0 * h)
        } else {
            (c - a) / (2.0 * h)
        }
    };
    for j in 0..ny {
        for i in 0..nx {
            let id = grid.idx(i, j);
            gx[id] = if i == 0 {
                dx(f[grid.idx(0, j)], f[grid.idx(1, j)], f[grid.idx(2, j)], grid.hx(), true)
            } else if i == nx - 1 {
                -dx(
                    f[grid.idx(nx - 1, j)],
                    f[grid.idx(nx - 2, j)],
                    f[grid.idx(nx - 3, j)],
                    grid.hx(),
                    true,
                )
            } else {
                dx(f[grid.idx(i - 1, j)], 0.0, f[grid.idx(i + 1, j)], grid.hx(), false)
            };
            if grid.dim() == 2 {
                gy[id] = if j == 0 {
                    dx(f[grid.idx(i, 0)], f[grid.idx(i, 1)], f[grid.idx(i, 2)], grid.hy(), true)
                } else if j == ny - 1 {
                    -dx(
                        f[grid.idx(i, ny - 1)],
                        f[grid.idx(i, ny - 2)],
                        f[grid.idx(i, ny - 3)],
                        grid.hy(),
                        true,
                    )
                } else {
                    dx(f[grid.idx(i, j - 1)], 0.0, f[grid.idx(i, j + 1)], grid.hy(), false)
                };
            }
        }
    }
    [gx, gy]
}

/// Outward normal derivative at every boundary entry (aligned with
/// [`Grid::boundary`]), by second-order one-sided stencils along the
/// face normal. Corners get one value per adjacent face.
pub fn normal_derivative(grid: &Grid, f: &[f64]) -> Vec<f64> {
    assert_eq!(f.len(), grid.node_count(), "field length mismatch");
    let (nx, ny) = (grid.nx(), grid.ny());
    let sided = |a: f64, b: f64, c: f64, h: f64| (4.0 * (b - a) - (c - a)) / (2.0 * h);
    grid.boundary()
        .iter()
        .map(|e| {
            let i = e.node % nx;
            let j = e.node / nx;
            match e.face {
                Face::XLow => {
                    -sided(f[grid.idx(0, j)], f[grid.idx(1, j)], f[grid.idx(2, j)], grid.hx())
                }
                Face::XHigh => -sided(
                    f[grid.idx(nx - 1, j)],
                    f[grid.idx(nx - 2, j)],
                    f[grid.idx(nx - 3, j)],
                    grid.hx(),
                ),
                Face::YLow => {
                    -sided(f[grid.idx(i, 0)], f[grid.idx(i, 1)], f[grid.idx(i, 2)], grid.hy())
                }
                Face::YHigh => -sided(
                    f[grid.idx(i, ny - 1)],
                    f[grid.idx(i, ny - 2)],
                    f[grid.idx(i, ny - 3)],
                    grid.hy(),
                ),
            }
        })
        .collect()
}

/// Restrict a field on a nested fine grid (each axis refined by exactly
/// doubling the cell count) onto the coarse grid by injection at shared nodes.
pub fn restrict_nested(fine: &Grid, coarse: &Grid, f: &[f64]) -> Result<Vec<f64>> {
    if fine.dim != coarse.dim {
        return Err(Error::InvalidInput("dimension mismatch in restriction".into()));
    }
    let nests = |nf: usize, nc: usize| nf == 2 * (nc - 1) + 1;
    if !nests(fine.nx, coarse.nx)
        || (fine.dim == 2 && !nests(fine.ny, coarse.ny))
        || (fine.lx - coarse.lx).abs() > 1e-14 * coarse.lx.abs()
        || (fine.dim == 2 && (fine.ly - coarse.ly).abs() > 1e-14 * coarse.ly.abs())
    {
        return Err(Error::InvalidInput("grids are not nested with ratio 2".into()));
    }
    assert_eq!(f.len(), fine.node_count(), "field length mismatch");
    let mut out = vec![0.0; coarse.node_count()];
    for j in 0..coarse.ny {
        for i in 0..coarse.nx {
            out[coarse.idx(i, j)] = f[fine.idx(2 * i, if fine.dim == 2 { 2 * j } else { j })];
        }
    }
    Ok(out)
}
