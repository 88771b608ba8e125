//! Transmit pattern design for continuous-aperture MIMO.
//!
//! A planar radiating aperture serves `K` point receivers. Each user's
//! current pattern is expanded on a truncated Fourier basis over the
//! aperture, the free-space dyadic Green function of every receiver is
//! projected onto the same basis, and the expansion coefficients are
//! optimized for downlink sum-rate with a weighted-MMSE alternating scheme.
//!
//! Module map:
//!
//! - [`em`]: constants, geometry, dyadic Green function, aperture quadrature
//! - [`fourier`]: basis, channel projections, pattern synthesis
//! - [`rate`]: received fields, interference, sum-rate, MSE, surrogate
//! - [`optimizer`]: alternating (ρ, ψ, w) optimizer with multiplier search
//! - [`baselines`]: wavenumber-division baseline, interference-free bound
//! - [`verify`]: independent numerical oracles
//! - [`scenario`]: configuration, experiments, CSV export

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod em;
mod error;
pub mod fourier;
pub mod optimizer;
pub mod rate;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};

pub use num_complex::Complex64;
