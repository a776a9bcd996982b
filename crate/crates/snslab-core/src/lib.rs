//! Numerical laboratory for the stochastic Navier-Stokes equations on the
//! 3-torus, built around a divergence-free Fourier (spectral Galerkin)
//! representation.
//!
//! The crate provides four layers:
//!
//! * [`spectral`] / [`bilinear`] — the Stokes eigenbasis, diagonal operator
//!   calculus and the Leray-projected advection term, including its smooth
//!   truncation and Gateaux derivative;
//! * [`covariance`] / [`rng`] — diagonal trace-class noise with reproducible,
//!   splittable Monte Carlo streams;
//! * [`integrator`] — exponential-Euler time stepping for the Galerkin,
//!   truncated and endpoint-splitting dynamics, with ensemble execution that
//!   is bitwise deterministic regardless of the worker count;
//! * [`girsanov`], [`malliavin`], [`besov`] — measure-change accumulators
//!   against the exact Ornstein-Uhlenbeck reference, linearized-flow
//!   sensitivity matrices, and finite-difference regularity estimators for
//!   projected laws.
//!
//! Everything is desk scale: bases stay below ~100 modes and ensembles below
//! ~1e5 trajectories, so all statistical suites finish in minutes.

// Negated comparisons like `!(x > 0.0)` are used deliberately: they reject
// NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod besov;
pub mod bilinear;
pub mod covariance;
pub mod error;
pub mod exec;
pub mod girsanov;
pub mod integrator;
pub mod malliavin;
pub mod rng;
pub mod snapshot;
pub mod spectral;
pub mod stats;

pub use error::CoreError;
pub use spectral::{FourierState, Parity, SpectralBasis};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
