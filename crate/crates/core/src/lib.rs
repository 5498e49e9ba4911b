//! Partially observed diffusions with periodic coefficients.
//!
//! The hidden signal `X` lives on `R^q` with 1-periodic drift and diffusion
//! coefficients, so it is effectively a diffusion on the flat torus
//! `[0,1)^q`. It is observed through `dY = h(X) dt + dW`. This crate provides
//!
//! * model families and runtime checks of periodicity, ellipticity and
//!   smoothness ([`model`]),
//! * grid densities and the two deterministic PDE engines ([`numerics`]),
//! * signal/observation simulation, stationary densities and the reflection
//!   coupling ([`sde`]),
//! * the nonlinear filter in its splitting and robust (gauge-transformed)
//!   forms, the random window kernel and the pathwise likelihood ([`filter`]),
//! * Hilbert projective distance, total variation and path oscillation
//!   ([`metrics`]),
//! * likelihood surfaces, the maximum likelihood estimator and the contrast
//!   function ([`mle`]),
//! * reproducible experiment drivers and the command-line front end
//!   ([`experiments`], [`cli`]).

pub mod cli;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod mle;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
