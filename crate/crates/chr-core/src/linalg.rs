//! Minimal dense linear algebra: row-major matrices and LU with partial
//! pivoting. Every grid in scope is desk-scale, so direct solves keep the
//! discrete identities exact to roundoff instead of an iterative tolerance.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone)]
pub(crate) struct DenseMat {
    pub nrows: usize,
    pub ncols: usize,
    pub a: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMat { nrows, ncols, a: vec![0.0; nrows * ncols] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.a[i * self.ncols + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.a[i * self.ncols + j] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.a[i * self.ncols + j] = v;
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let row = &self.a[i * self.ncols..(i + 1) * self.ncols];
            let mut acc = 0.0;
            for (aij, xj) in row.iter().zip(x.iter()) {
                acc += aij * xj;
            }
            y[i] = acc;
        }
        y
    }

    /// Consume into an LU factorization.
    pub fn lu(self) -> Result<DenseLu> {
        DenseLu::factor(self)
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub(crate) struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(m: DenseMat) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::InvalidInput(alloc::format!(
                "LU requires a square matrix, got {}x{}",
                m.nrows, m.ncols
            )));
        }
        let n = m.nrows;
        let mut lu = m.a;
        let mut piv = vec![0usize; n];
        // Scale reference for the singularity test.
        let mut scale = 0.0f64;
        for v in &lu {
            let av = if *v < 0.0 { -*v } else { *v };
            if av > scale {
                scale = av;
            }
        }
        if scale == 0.0 {
            return Err(Error::Singular("zero matrix".into()));
        }
        for k in 0..n {
            // Partial pivot: largest magnitude in column k at/below the diagonal.
            let mut p = k;
            let mut best = {
                let v = lu[k * n + k];
                if v < 0.0 { -v } else { v }
            };
            for i in (k + 1)..n {
                let v = lu[i * n + k];
                let av = if v < 0.0 { -v } else { v };
                if av > best {
                    best = av;
                    p = i;
                }
            }
            if best <= f64::EPSILON * scale * (n as f64) {
                return Err(Error::Singular(alloc::format!(
                    "pivot {best:e} at column {k} below tolerance"
                )));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
            }
            piv[k] = p;
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(DenseLu { n, lu, piv })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let n = self.n;
        // The factors store fully swapped rows, so the permutation must be
        // applied to the right-hand side before the triangular solves.
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for k in 0..n {
            let bk = b[k];
            if bk != 0.0 {
                for i in (k + 1)..n {
                    b[i] -= self.lu[i * n + k] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in (k + 1)..n {
                acc -= self.lu[k * n + j] * b[j];
            }
            b[k] = acc / self.lu[k * n + k];
        }
    }

    #[cfg(test)]
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for x in v {
        let ax = if *x < 0.0 { -*x } else { *x };
        if ax > m {
            m = ax;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_hand_computed_3x3() {
        // [2 1 0; 1 3 1; 0 1 2] x = [3; 10; 9] has solution x = [0.2, 2.6, 3.2]:
        // checked by substitution: 2*0.2+2.6 = 3, 0.2+7.8+3.2 = 11.2 .. recompute.
        // Use b = A*[1,2,3] = [4, 10, 8] instead so the expectation is exact.
        let mut m = DenseMat::zeros(3, 3);
        let entries = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                m.set(i, j, entries[i][j]);
            }
        }
        let lu = m.lu().unwrap();
        let x = lu.solve(&[4.0, 10.0, 8.0]);
        for (xi, ei) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((xi - ei).abs() < 1e-13, "got {xi}, want {ei}");
        }
    }

    #[test]
    fn lu_recovers_seeded_random_solution() {
        // Deterministic congruential fill; diagonally dominated so well conditioned.
        let n = 40;
        let mut state = 0x1234_5678_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let mut m = DenseMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, next());
            }
            m.add(i, i, 10.0);
        }
        let xtrue: Vec<f64> = (0..n).map(|i| (i as f64) / (n as f64) - 0.3).collect();
        let b = m.mul_vec(&xtrue);
        let x = m.clone().lu().unwrap().solve(&b);
        let mut err = 0.0f64;
        for (a, b) in x.iter().zip(xtrue.iter()) {
            err = err.max((a - b).abs());
        }
        assert!(err < 1e-11, "max error {err}");
    }

    #[test]
    fn lu_solves_bordered_neumann_system() {
        // 1D Neumann stiffness (k = 4/pi) bordered by trapezoid weights on a
        // grid of width pi/4.
        let k = 4.0 / core::f64::consts::PI;
        let half = core::f64::consts::FRAC_PI_8;
        let w = [half, 2.0 * half, 2.0 * half, 2.0 * half, half];
        let mut m = DenseMat::zeros(6, 6);
        for i in 0..5 {
            m.set(i, 5, w[i]);
            m.set(5, i, w[i]);
        }
        m.set(0, 0, k);
        m.set(4, 4, k);
        for i in 1..4 {
            m.set(i, i, 2.0 * k);
        }
        for i in 0..4 {
            m.set(i, i + 1, -k);
            m.set(i + 1, i, -k);
        }
        let xtrue: Vec<f64> = (0..6).map(|i| (i as f64) * 0.25 - 0.4).collect();
        let b = m.mul_vec(&xtrue);
        let x = m.lu().unwrap().solve(&b);
        let mut err = 0.0f64;
        for (a, b) in x.iter().zip(xtrue.iter()) {
            err = err.max((a - b).abs());
        }
        assert!(err < 1e-12, "max error {err}, x = {x:?}");
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let mut m = DenseMat::zeros(2, 2);
        m.set(0, 0, 1.0);
        m.set(0, 1, 2.0);
        m.set(1, 0, 2.0);
        m.set(1, 1, 4.0);
        assert!(matches!(m.lu(), Err(Error::Singular(_))));
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let mut m = DenseMat::zeros(2, 2);
        m.set(0, 0, 0.0);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        m.set(1, 1, 0.0);
        let x = m.lu().unwrap().solve(&[2.0, 3.0]);
        assert!((x[0] - 3.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }
}
