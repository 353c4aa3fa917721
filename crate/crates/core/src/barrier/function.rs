use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{Error, Result};

/// An invertible barrier `B` on `(0, ∞)` together with `B⁻¹` and `B'`.
pub trait BarrierFunction {
    fn value(&self, h: f64) -> Result<f64>;
    fn inverse(&self, w: f64) -> Result<f64>;
    fn derivative(&self, h: f64) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    /// `B(h) = 1/h`
    #[default]
    Inverse,
}

fn outside(value: f64) -> Error {
    Error::BoundaryViolation {
        step: None,
        constraint: 0,
        value,
    }
}

impl BarrierFunction for BarrierKind {
    fn value(&self, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(outside(h));
        }
        match self {
            BarrierKind::Inverse => Ok(1.0 / h),
        }
    }

    fn inverse(&self, w: f64) -> Result<f64> {
        if !(w > 0.0) {
            return Err(outside(w));
        }
        match self {
            BarrierKind::Inverse => Ok(1.0 / w),
        }
    }

    fn derivative(&self, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(outside(h));
        }
        match self {
            BarrierKind::Inverse => Ok(-1.0 / (h * h)),
        }
    }
}

/// `φ_ρ = √2 erf⁻¹(2ρ - 1)`, the one-sided standard normal quantile.
pub fn quantile_phi(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    let y = 2.0 * rho - 1.0;
    let mut x = erf_inv(y);
    // Newton polish on erf(x) = y.
    for _ in 0..3 {
        let slope = 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
        if slope < 1e-300 {
            break;
        }
        x -= (erf(x) - y) / slope;
    }
    Ok(std::f64::consts::SQRT_2 * x)
}
