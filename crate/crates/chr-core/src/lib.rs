//! Numerical core for a Cahn-Hilliard model with reactive (Butler-Volmer type)
//! boundary conditions.
//!
//! The crate provides two solution pathways for the bulk/boundary system
//!
//! ```text
//! dc/dt = lap(mu),   mu = -rho*lap(c) + f'(c) [+ elastic coupling]   in Omega,
//! dc/dnu = 0,        dmu/dnu = R(c, mu)                              on Gamma,
//! ```
//!
//! * a variational pathway ([`gradientflow`]) that advances the field by
//!   minimizing movements against the dual dissipation functional, and
//! * a strong pathway ([`strongsolver`]) that rewrites the system as a
//!   truncated fourth-order equation and solves it by whole-trajectory
//!   fixed-point iteration over factored biharmonic steps.
//!
//! Supporting modules: tensor-product grids and quadrature ([`mesh`]), model
//! data ([`physics`]), elliptic building blocks ([`operators`]), and
//! fractional/anisotropic norms ([`sobolev`]).
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only adds conveniences for downstream error handling.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]
#![warn(missing_docs)]
// Validation guards are written as !(x > 0.0) on purpose: the negation also
// rejects NaN, which x <= 0.0 would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over multiple same-length nodal arrays stay as indices; the
// iterator-zip forms obscure the stencil arithmetic.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod gradientflow;
pub mod mesh;
pub mod operators;
pub mod physics;
pub mod sobolev;
pub mod strongsolver;

mod linalg;

pub use error::{Error, Result};
