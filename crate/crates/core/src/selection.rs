//! Selection-function families and the movement maps derived from them.
//!
//! Every family is a function of the linear predictor `eta = w'theta`. For the
//! ecological-diffusion family the selection function is `1 / psi(s)`, with
//! the constant factors of `1 / (delta(s) dt)` dropped because they cancel
//! within a step; raw `g` values are therefore not comparable to motility.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionFamily {
    /// `g = 1 / logit^-1(eta) = 1 + exp(-eta)`.
    EdeInverseLogit,
    /// `g = exp(eta)`, the usual step-selection function.
    Exponential,
    /// `g = eta`; only defined where `eta > 0`.
    Linear,
    /// `g = 1 / eta`; only defined where `eta > 0`.
    InverseLinear,
}

pub const ALL_FAMILIES: [SelectionFamily; 4] = [
    SelectionFamily::EdeInverseLogit,
    SelectionFamily::Exponential,
    SelectionFamily::Linear,
    SelectionFamily::InverseLinear,
];

pub fn dot(w: &[f64], theta: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), theta.len());
    w.iter().zip(theta).map(|(a, b)| a * b).sum()
}

/// `log(1 + exp(-eta))` without overflow.
fn log1p_exp_neg(eta: f64) -> f64 {
    if eta > 0.0 {
        (-eta).exp().ln_1p()
    } else {
        -eta + eta.exp().ln_1p()
    }
}

/// Numerically stable inverse logit.
pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl SelectionFamily {
    fn check_positive(self, eta: f64) -> Result<()> {
        match self {
            SelectionFamily::Linear | SelectionFamily::InverseLinear if !(eta > 0.0) => {
                Err(Error::NonPositiveSelection {
                    linear_predictor: eta,
                    step: None,
                    slot: None,
                })
            }
            _ => Ok(()),
        }
    }

    /// `log g` as a function of the linear predictor.
    pub fn log_g_eta(self, eta: f64) -> Result<f64> {
        self.check_positive(eta)?;
        Ok(match self {
            SelectionFamily::EdeInverseLogit => log1p_exp_neg(eta),
            SelectionFamily::Exponential => eta,
            SelectionFamily::Linear => eta.ln(),
            SelectionFamily::InverseLinear => -eta.ln(),
        })
    }

    /// `d log g / d eta`.
    pub fn dlog_g_eta(self, eta: f64) -> Result<f64> {
        self.check_positive(eta)?;
        Ok(match self {
            SelectionFamily::EdeInverseLogit => -inv_logit(-eta),
            SelectionFamily::Exponential => 1.0,
            SelectionFamily::Linear => 1.0 / eta,
            SelectionFamily::InverseLinear => -1.0 / eta,
        })
    }

    pub fn g(self, w: &[f64], theta: &[f64]) -> Result<f64> {
        let eta = dot(w, theta);
        self.check_positive(eta)?;
        Ok(match self {
            SelectionFamily::EdeInverseLogit => 1.0 + (-eta).exp(),
            SelectionFamily::Exponential => eta.exp(),
            SelectionFamily::Linear => eta,
            SelectionFamily::InverseLinear => 1.0 / eta,
        })
    }

    pub fn log_g(self, w: &[f64], theta: &[f64]) -> Result<f64> {
        self.log_g_eta(dot(w, theta))
    }

    /// Gradient of `log g` with respect to `theta`.
    pub fn log_g_grad(self, w: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.dlog_g_eta(dot(w, theta))?;
        Ok(w.iter().map(|wk| d * wk).collect())
    }

    /// Linear and inverse-linear families only identify `theta` up to scale.
    pub fn scale_identifiable(self) -> bool {
        matches!(self, SelectionFamily::EdeInverseLogit | SelectionFamily::Exponential)
    }

    pub fn config_name(self) -> &'static str {
        match self {
            SelectionFamily::EdeInverseLogit => "ede",
            SelectionFamily::Exponential => "exp",
            SelectionFamily::Linear => "linear",
            SelectionFamily::InverseLinear => "invlinear",
        }
    }
}

impl fmt::Display for SelectionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.config_name())
    }
}

impl FromStr for SelectionFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ede" => Ok(SelectionFamily::EdeInverseLogit),
            "exp" => Ok(SelectionFamily::Exponential),
            "linear" => Ok(SelectionFamily::Linear),
            "invlinear" => Ok(SelectionFamily::InverseLinear),
            other => Err(format!("unknown selection family '{other}' (expected ede|exp|linear|invlinear)")),
        }
    }
}

/// Spatial grain (cell side, meters) and time step (hours).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotilityContext {
    pub cellsize: f64,
    pub dt: f64,
}

impl MotilityContext {
    pub fn new(cellsize: f64, dt: f64) -> Result<Self> {
        if !(cellsize > 0.0 && dt > 0.0 && cellsize.is_finite() && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cellsize and dt must be positive, got {cellsize} and {dt}"
            )));
        }
        Ok(MotilityContext { cellsize, dt })
    }
}

/// Per-step movement probability `logit^-1(w'theta)`.
pub fn psi(w: &[f64], theta: &[f64]) -> f64 {
    inv_logit(dot(w, theta))
}

/// Motility `cellsize^2 psi / (4 dt)` in m^2/h.
pub fn motility(w: &[f64], theta: &[f64], ctx: MotilityContext) -> f64 {
    ctx.cellsize * ctx.cellsize * psi(w, theta) / (4.0 * ctx.dt)
}

/// Residence time `4 dt / psi` in hours per cell.
pub fn residence_time(w: &[f64], theta: &[f64], dt: f64) -> f64 {
    4.0 * dt / psi(w, theta)
}
