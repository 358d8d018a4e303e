//! Simulation toolkit for an optical cavity with a movable end mirror driven
//! by periodically amplitude-modulated laser light.
//!
//! The library is organized as a pipeline. [`params`] turns laboratory
//! numbers (cavity length, finesse, laser power, ...) into the rates and
//! couplings that enter the equations of motion. [`orbit`] computes the
//! classical quasi-periodic attractor of the mirror + field system, both by
//! direct integration and by a double Fourier/coupling expansion. [`floquet`]
//! analyzes the stability of the linearized dynamics around that attractor.
//! [`covariance`] and [`spectral`] propagate the second moments of the
//! quantum fluctuations in the time and frequency domains, and [`metrics`]
//! extracts mechanical squeezing and light-mirror entanglement from the
//! resulting covariance matrices. [`rwa`] provides closed-form weak-coupling
//! expressions used as independent cross-checks, and [`pipeline`] ties
//! everything together behind the run configurations of [`config`].
//!
//! Conventions used throughout: quadratures are ordered as
//! `(mirror position, mirror momentum, field amplitude, field phase)`,
//! vacuum variance is 1/2, and all rates are angular frequencies in rad/s.

pub mod config;
pub mod consts;
pub mod covariance;
pub mod drift;
pub mod error;
pub mod floquet;
pub mod linalg;
pub mod metrics;
pub mod ode;
pub mod orbit;
pub mod output;
pub mod params;
pub mod pipeline;
pub mod rwa;
pub mod spectral;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
