use nalgebra::{DMatrix, DVector};

use super::ContinuousDynamics;

/// `ẋ = A x + B u`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    /// The open-loop unstable benchmark `A = [[1, -5], [0, -1]]`, `B = [0, 1]ᵀ`.
    pub fn benchmark() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[1.0, -5.0, 0.0, -1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        }
    }
}

impl ContinuousDynamics for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
}
