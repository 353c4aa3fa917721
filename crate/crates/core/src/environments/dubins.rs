use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ContinuousDynamics;
use crate::error::{Error, Result};

/// Differential-drive vehicle with state `(x, y, θ)` and wheel speeds
/// `(u₁, u₂)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DubinsCar {
    /// Wheel radius.
    pub r: f64,
    /// Half the axle length.
    pub d: f64,
}

impl Default for DubinsCar {
    fn default() -> Self {
        Self { r: 0.2, d: 0.2 }
    }
}

impl ContinuousDynamics for DubinsCar {
    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let v = self.r * (u[0] + u[1]) / 2.0;
        let (s, c) = x[2].sin_cos();
        DVector::from_vec(vec![v * c, v * s, self.r / (2.0 * self.d) * (u[0] - u[1])])
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let v = self.r * (u[0] + u[1]) / 2.0;
        let (s, c) = x[2].sin_cos();
        let w = self.r / (2.0 * self.d);
        let fx = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, -v * s, 0.0, 0.0, v * c, 0.0, 0.0, 0.0]);
        let h = self.r / 2.0;
        let fu = DMatrix::from_row_slice(3, 2, &[h * c, h * c, h * s, h * s, w, -w]);
        (fx, fu)
    }
}

/// Bundled obstacle layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DubinsCourse {
    Single,
    Multi,
}

impl FromStr for DubinsCourse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "multi" => Ok(Self::Multi),
            other => Err(Error::invalid(format!("unknown course `{other}`; valid names: single, multi"))),
        }
    }
}
