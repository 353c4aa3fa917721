//! The learned (or known) transition model that the barrier and control
//! layers consume.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{GpModel, Posterior, TargetMode};

/// Gaussian model of `f(x, u)`: posterior mean and per-dimension variance,
/// plus the Jacobians of the mean.
///
/// In [`TargetMode::ContinuousDerivative`] the prediction is `ẋ`; in
/// [`TargetMode::DiscreteDelta`] it is `x_{k+1} - x_k`.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn mode(&self) -> TargetMode;
    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Posterior>;

    fn mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.predict(x, u)?.mean)
    }

    /// `(∂μ/∂x, ∂μ/∂u)`
    fn mean_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

pub(crate) fn check_dims(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<()> {
    if x.len() != model.state_dim() || u.len() != model.control_dim() {
        return Err(Error::invalid(format!(
            "expected state/control of dimension {}/{}, got {}/{}",
            model.state_dim(),
            model.control_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(())
}

/// A GP over the concatenated input `(x, u)` predicting all `n` state rows.
#[derive(Clone, Debug)]
pub struct GpDynamics {
    gp: GpModel,
    state_dim: usize,
}

impl GpDynamics {
    pub fn new(gp: GpModel, state_dim: usize) -> Result<Self> {
        if gp.output_dim() != state_dim || gp.input_dim() <= state_dim {
            return Err(Error::invalid(format!(
                "GP with {} inputs and {} outputs cannot model a {state_dim}-state system",
                gp.input_dim(),
                gp.output_dim()
            )));
        }
        Ok(Self { gp, state_dim })
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    fn query(x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
        x.iter().chain(u.iter()).copied().collect()
    }
}

impl DynamicsModel for GpDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.gp.input_dim() - self.state_dim
    }

    fn mode(&self) -> TargetMode {
        self.gp.mode()
    }

    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Posterior> {
        check_dims(self, x, u)?;
        self.gp.posterior(&Self::query(x, u))
    }

    fn mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims(self, x, u)?;
        self.gp.mean(&Self::query(x, u))
    }

    fn mean_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dims(self, x, u)?;
        let g = self.gp.mean_gradient(&Self::query(x, u))?;
        let n = self.state_dim;
        Ok((
            g.columns(0, n).into_owned(),
            g.columns(n, g.ncols() - n).into_owned(),
        ))
    }
}
