//! Operator-splitting solver for the fractional kinetic Fokker-Planck equation
//!
//! ```text
//! d_t f + v . grad_x f = div_v(grad psi(v) f) - (-Lap_v)^s f
//! ```
//!
//! Each time step alternates an exact fractional-diffusion phase (convolution
//! in velocity with the truncated, renormalised fractional heat kernel) and a
//! kinetic-transport phase posed as a minimisation of the potential energy
//! penalised by the minimal-acceleration transport cost.
//!
//! The crate also carries the independent oracles used to check the scheme:
//! a method-of-lines PDE solver, a stable-driven Langevin particle simulator,
//! an exact characteristics solver for the transport-only problem and the
//! closed-form stationary laws.

// `!(x > 0.0)` also rejects NaN, which is what parameter checks want
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accel_cost;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod frac_kernel;
pub mod grid;
pub mod io;
pub mod kinetic;
pub mod ot;
pub mod particles;
pub mod potential;
pub mod reference;
pub mod splitting;
pub mod stable;
pub mod testfn;
pub mod lp;
pub mod validate;

pub use config::{Mode, RemapKind, SchemeConfig, Truncation};
pub use error::{FkfpeError, Result};
pub use grid::{DensityGrid, Geometry};
pub use potential::{Potential, PotentialKind};

/// Version string embedded in every output file header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
