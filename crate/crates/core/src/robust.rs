//! Robust reprojection loss.
//!
//! The kernel is quadratic near zero, flattens smoothly, and charges a
//! constant `tau^2 / 4` beyond `tau`:
//!
//! ```text
//! R(x) = x^2 / 2 * (1 - x^2 / (2 tau^2))   if x^2 <= tau^2
//!      = tau^2 / 4                         otherwise
//! ```
//!
//! `R` and `R'` are continuous at `x = tau`, where `R'(tau) = 0`. An infinite
//! `tau` disables the kernel and leaves plain `x^2 / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{lift_all, AffineCamera, CorrespondenceSet, DepthField};

/// What the kernel is applied to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArgument {
    /// `R(|P X - x|)`.
    #[default]
    Distance,
    /// `R(|P X - x|^2)`.
    SquaredDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustParams {
    /// `inf` disables the kernel; JSON stores it as `null`.
    #[serde(deserialize_with = "tau_or_infinity")]
    pub tau: f64,
    pub argument: KernelArgument,
}

impl Default for RobustParams {
    fn default() -> Self {
        Self {
            tau: 5.0,
            argument: KernelArgument::Distance,
        }
    }
}

impl RobustParams {
    pub fn new(tau: f64) -> Result<Self> {
        let p = Self { tau, ..Self::default() };
        p.validate()?;
        Ok(p)
    }

    /// Plain squared loss, `tau = inf`.
    pub fn disabled() -> Self {
        Self {
            tau: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)))
        }
    }

    /// Loss contribution of a residual with Euclidean length `dist`.
    #[inline]
    pub fn residual_cost(&self, dist: f64) -> f64 {
        match self.argument {
            KernelArgument::Distance => robust_weight(dist, self),
            KernelArgument::SquaredDistance => robust_weight(dist * dist, self),
        }
    }

    /// Factor `w` such that the gradient of [`Self::residual_cost`] with
    /// respect to the residual vector `r` is `w * r`.
    #[inline]
    pub fn residual_gain(&self, dist: f64) -> f64 {
        match self.argument {
            KernelArgument::Distance => robust_weight_grad(dist, self) / dist.max(NORM_GUARD),
            KernelArgument::SquaredDistance => 2.0 * robust_weight_grad(dist * dist, self),
        }
    }
}

fn tau_or_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Floor on the residual length when differentiating the Euclidean norm.
pub const NORM_GUARD: f64 = 1e-12;

pub fn robust_weight(x: f64, params: &RobustParams) -> f64 {
    let tau2 = params.tau * params.tau;
    let x2 = x * x;
    if x2 <= tau2 {
        0.5 * x2 * (1.0 - x2 / (2.0 * tau2))
    } else {
        tau2 / 4.0
    }
}

pub fn robust_weight_grad(x: f64, params: &RobustParams) -> f64 {
    let tau2 = params.tau * params.tau;
    if x * x <= tau2 {
        x - x * x * x / tau2
    } else {
        0.0
    }
}

/// Mean robust reprojection cost of every correspondence under `cam`.
pub fn corr_loss(
    cam: &AffineCamera,
    corr: &CorrespondenceSet,
    depth: &DepthField,
    params: &RobustParams,
) -> Result<f64> {
    params.validate()?;
    let (points, _) = lift_all(corr, depth)?;
    let total: f64 = points
        .iter()
        .zip(corr.target())
        .map(|(p, t)| params.residual_cost(cam.project(p).distance(t)))
        .sum();
    Ok(total / corr.len() as f64)
}
