use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{BarrierConfig, BarrierSystem, SafetyFunction};
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::gp::TargetMode;

/// `x̄ = [x; z]`
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
}

impl EmbeddedState {
    pub fn new(x: DVector<f64>, z: DVector<f64>) -> Self {
        Self { x, z }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x.len() + self.z.len());
        v.rows_mut(0, self.x.len()).copy_from(&self.x);
        v.rows_mut(self.x.len(), self.z.len()).copy_from(&self.z);
        v
    }

    pub fn from_vector(v: &DVector<f64>, state_dim: usize) -> Self {
        Self {
            x: v.rows(0, state_dim).into_owned(),
            z: v.rows(state_dim, v.len() - state_dim).into_owned(),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.z.len()
    }
}

/// Discrete transition Jacobians of the embedded step.
#[derive(Clone, Debug)]
pub struct StepJacobians {
    /// `∂x̄_{k+1}/∂x̄_k`, `(n+q) × (n+q)`
    pub a: DMatrix<f64>,
    /// `∂x̄_{k+1}/∂u_k`, `(n+q) × m`
    pub b: DMatrix<f64>,
}

/// Safety-embedded Gaussian dynamical model: learned dynamics for `x`
/// plus barrier states `z` driven by them.
#[derive(Clone)]
pub struct EmbeddedModel {
    dynamics: Arc<dyn DynamicsModel>,
    barrier: BarrierSystem,
    dt: f64,
}

impl std::fmt::Debug for EmbeddedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddedModel")
            .field("n", &self.state_dim())
            .field("m", &self.control_dim())
            .field("barrier", &self.barrier)
            .field("dt", &self.dt)
            .finish()
    }
}

impl EmbeddedModel {
    pub fn new(
        dynamics: Arc<dyn DynamicsModel>,
        safety: Arc<dyn SafetyFunction>,
        config: BarrierConfig,
        dt: f64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if safety.state_dim() != dynamics.state_dim() {
            return Err(Error::invalid(format!(
                "safety functions act on {} states but the dynamics have {}",
                safety.state_dim(),
                dynamics.state_dim()
            )));
        }
        Ok(Self {
            dynamics,
            barrier: BarrierSystem::new(safety, config)?,
            dt,
        })
    }

    /// Same model with a different barrier configuration.
    pub fn with_config(&self, config: BarrierConfig) -> Result<Self> {
        Self::new(self.dynamics.clone(), self.barrier.safety().clone(), config, self.dt)
    }

    pub fn dynamics(&self) -> &Arc<dyn DynamicsModel> {
        &self.dynamics
    }

    pub fn barrier(&self) -> &BarrierSystem {
        &self.barrier
    }

    pub fn safety(&self) -> &Arc<dyn SafetyFunction> {
        self.barrier.safety()
    }

    pub fn config(&self) -> &BarrierConfig {
        self.barrier.config()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn barrier_dim(&self) -> usize {
        self.barrier.dim()
    }

    pub fn embedded_dim(&self) -> usize {
        self.state_dim() + self.barrier_dim()
    }

    /// Embedded state with `z` consistent with `x`.
    pub fn initial_state(&self, x: &DVector<f64>) -> Result<EmbeddedState> {
        Ok(EmbeddedState::new(x.clone(), self.barrier.consistent_z(x)?))
    }

    /// Scale applied to the model's prediction to get the state increment.
    fn increment_scale(&self) -> f64 {
        match self.dynamics.mode() {
            TargetMode::ContinuousDerivative => self.dt,
            TargetMode::DiscreteDelta => 1.0,
        }
    }

    /// Mean next state: `x + dt E[f]` or `x + E[Δ]`.
    pub fn mean_next(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(x + self.dynamics.mean(x, u)? * self.increment_scale())
    }

    /// Jacobians of [`Self::mean_next`].
    pub fn state_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (fx, fu) = self.dynamics.mean_jacobians(x, u)?;
        let s = self.increment_scale();
        let n = self.state_dim();
        Ok((DMatrix::identity(n, n) + fx * s, fu * s))
    }

    /// Mean next state together with the per-dimension variance of the
    /// state increment.
    pub fn predict_next(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = self.dynamics.predict(x, u)?;
        let s = self.increment_scale();
        Ok((x + p.mean * s, p.variance * (s * s)))
    }

    /// Standard deviation of `w_{k+1}` from pushing the increment variance
    /// through `∂β/∂x` at the mean next state.
    fn barrier_sigma(&self, x_next: &DVector<f64>, step_var: &DVector<f64>) -> Result<DVector<f64>> {
        let bx = self.barrier.barrier_jacobian(x_next)?;
        Ok(DVector::from_iterator(
            bx.nrows(),
            bx.row_iter().map(|r| {
                r.iter()
                    .zip(step_var.iter())
                    .map(|(b, v)| b * b * v)
                    .sum::<f64>()
                    .sqrt()
            }),
        ))
    }

    fn check_state(&self, s: &EmbeddedState) -> Result<()> {
        if s.x.len() != self.state_dim() || s.z.len() != self.barrier_dim() {
            return Err(Error::invalid("embedded state has the wrong dimension"));
        }
        Ok(())
    }

    /// One step of the safety-embedded model. `x` follows the GP mean; `z`
    /// follows the DBaS recursion, plus `φ σ[w_{k+1}]` when `use_bound`.
    pub fn embedded_step(&self, s: &EmbeddedState, u: &DVector<f64>, use_bound: bool) -> Result<EmbeddedState> {
        self.check_state(s)?;
        let bounded = use_bound && self.config().phi > 0.0;
        let (x_next, var) = if bounded {
            self.predict_next(&s.x, u)?
        } else {
            (self.mean_next(&s.x, u)?, DVector::zeros(0))
        };
        let z_next = self.barrier_update(&s.x, &s.z, &x_next, bounded.then_some(&var))?;
        Ok(EmbeddedState::new(x_next, z_next))
    }

    /// `z` update given the next state (predicted or measured). With a
    /// variance the φ-bound is added.
    pub fn barrier_update(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        x_next: &DVector<f64>,
        step_var: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let beta0 = self.barrier.beta0();
        let w_next = self.barrier.dbas_step(x, &(z + beta0), x_next)?;
        let mut z_next = w_next - beta0;
        if let Some(var) = step_var {
            z_next += self.barrier_sigma(x_next, var)? * self.config().phi;
        }
        Ok(z_next)
    }

    /// [`Self::embedded_step`] together with the Jacobians of its mean part
    /// (the φ-bound is not differentiated).
    pub fn step_with_jacobians(
        &self,
        s: &EmbeddedState,
        u: &DVector<f64>,
        use_bound: bool,
    ) -> Result<(EmbeddedState, StepJacobians)> {
        let next = self.embedded_step(s, u, use_bound)?;
        let (fx, fu) = self.state_jacobians(&s.x, u)?;
        let (dwdx, dwdw, dwdu) = self.barrier.dbas_gradients(&s.x, &next.x, &fx, &fu)?;
        let (n, q, m) = (self.state_dim(), self.barrier_dim(), self.control_dim());
        let mut a = DMatrix::zeros(n + q, n + q);
        a.view_mut((0, 0), (n, n)).copy_from(&fx);
        a.view_mut((n, 0), (q, n)).copy_from(&dwdx);
        a.view_mut((n, n), (q, q)).copy_from(&dwdw);
        let mut b = DMatrix::zeros(n + q, m);
        b.view_mut((0, 0), (n, m)).copy_from(&fu);
        b.view_mut((n, 0), (q, m)).copy_from(&dwdu);
        Ok((next, StepJacobians { a, b }))
    }

    /// GP-BaS moments of the continuous barrier dynamics at `(x, z, u)`:
    /// `μ_z = 𝓑 E[f] - γ (z + β₀ - β(x))`, `Σ_z = 𝓑 V[f] 𝓑ᵀ`.
    pub fn gp_bas_moments(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let p = self.dynamics.predict(x, u)?;
        let bm = self.barrier.bas_matrix(x, z)?;
        let mu = self.barrier.bas_rhs(x, z, &p.mean)?;
        let sigma = &bm * DMatrix::from_diagonal(&p.variance) * bm.transpose();
        Ok((mu, (&sigma + sigma.transpose()) * 0.5))
    }

    /// Continuous-time embedded Jacobians `(Ā, B̄)` at `(x_eq, z(x_eq), u_eq)`.
    ///
    /// The barrier rows are `𝓑 f_x + γ β_x`, `-γ I` and `𝓑 f_u`; the term
    /// `(∂𝓑/∂x) f` vanishes at an equilibrium and is omitted.
    pub fn embedded_jacobians_lqr(
        &self,
        x_eq: &DVector<f64>,
        u_eq: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if self.dynamics.mode() != TargetMode::ContinuousDerivative {
            return Err(Error::invalid(
                "continuous embedded Jacobians need a continuous-derivative model",
            ));
        }
        let (fx, fu) = self.dynamics.mean_jacobians(x_eq, u_eq)?;
        let z_eq = self.barrier.consistent_z(x_eq)?;
        let bm = self.barrier.bas_matrix(x_eq, &z_eq)?;
        let beta_x = self.barrier.barrier_jacobian(x_eq)?;
        let gamma = self.config().gamma;
        let (n, q, m) = (self.state_dim(), self.barrier_dim(), self.control_dim());
        let mut a = DMatrix::zeros(n + q, n + q);
        a.view_mut((0, 0), (n, n)).copy_from(&fx);
        a.view_mut((n, 0), (q, n)).copy_from(&(&bm * &fx + beta_x * gamma));
        a.view_mut((n, n), (q, q))
            .copy_from(&(DMatrix::<f64>::identity(q, q) * (-gamma)));
        let mut b = DMatrix::zeros(n + q, m);
        b.view_mut((0, 0), (n, m)).copy_from(&fu);
        b.view_mut((n, 0), (q, m)).copy_from(&(bm * fu));
        Ok((a, b))
    }

    /// Continuous embedded vector field `[E[f]; μ_z]`, used for checking
    /// [`Self::embedded_jacobians_lqr`].
    pub fn embedded_rhs(&self, s: &EmbeddedState, u: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.dynamics.mean(&s.x, u)?;
        let zdot = self.barrier.bas_rhs(&s.x, &s.z, &f)?;
        Ok(EmbeddedState::new(f, zdot).to_vector())
    }
}
