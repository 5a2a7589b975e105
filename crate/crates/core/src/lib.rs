//! Mechanistic step-selection models for animal telemetry.
//!
//! Successive telemetry fixes are modelled as a spatio-temporal point
//! process whose step density is the fundamental solution of a homogenized
//! ecological diffusion equation: a Gaussian availability kernel with
//! variance `2 delta_bar dt` weighted by a selection function `1 / psi(s)`,
//! where `logit(psi(s)) = w(s)'theta`. Coefficients are fit through the
//! conditional (use-availability) likelihood with Hamiltonian Monte Carlo,
//! and posterior draws are turned into residence-time and movement
//! probability maps.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod availability;
pub mod check;
pub mod cli;
pub mod config;
pub mod derived;
pub mod diagnostics;
pub mod error;
pub mod hmc;
pub mod likelihood;
pub mod raster;
pub mod selection;
pub mod simulate;
pub mod telemetry;

pub use error::{Error, Result};
