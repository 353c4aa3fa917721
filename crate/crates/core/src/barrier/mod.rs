//! Barrier states: the continuous BaS dynamics, discrete barrier states
//! (DBaS), their Gaussian-process moments and the safety-embedded model.
//!
//! The barrier state tracks `z = β(x) - β₀` where `β` is the combined
//! barrier of all constraints and `β₀ = β(shift_point)`. In the
//! [`Combine::Sum`] mode a single state carries `β(x) = Σ_i B(h_i(x))`;
//! this equals `B(H(x))` for the composite safety function
//! `H = B⁻¹(Σ_i B(h_i))`, which is what the continuous dynamics use.

mod embedded;
mod function;
mod safety;

pub use embedded::{EmbeddedModel, EmbeddedState, StepJacobians};
pub use function::{quantile_phi, BarrierFunction, BarrierKind};
pub use safety::{Constraint, ConstraintSet, SafetyFunction, BUILTIN_EXPRESSIONS};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// One barrier state for all constraints.
    #[default]
    Sum,
    /// One barrier state per constraint.
    PerConstraint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    pub kind: BarrierKind,
    /// γ of the continuous BaS dynamics (LQR linearization, GP-BaS moments).
    pub gamma: f64,
    /// γ of the discrete recursion; must lie in `[0, 1)`.
    pub discrete_gamma: f64,
    /// `None` disables the shift (`β₀ = 0`).
    pub shift_point: Option<Vec<f64>>,
    pub combine: Combine,
    /// φ_ρ; zero disables the probabilistic bound.
    pub phi: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            kind: BarrierKind::Inverse,
            gamma: 1.0,
            discrete_gamma: 0.0,
            shift_point: None,
            combine: Combine::Sum,
            phi: 0.0,
        }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid("gamma must be nonnegative"));
        }
        if !(self.discrete_gamma >= 0.0 && self.discrete_gamma < 1.0) {
            return Err(Error::invalid("discrete gamma must lie in [0, 1)"));
        }
        if !(self.phi.is_finite() && self.phi >= 0.0) {
            return Err(Error::invalid("phi must be nonnegative"));
        }
        Ok(())
    }
}

/// `μ + φ √diag(Σ)`, elementwise.
pub fn bas_upper_bound(mu: &DVector<f64>, sigma2: &DMatrix<f64>, phi: f64) -> Result<DVector<f64>> {
    if sigma2.nrows() != mu.len() || sigma2.ncols() != mu.len() {
        return Err(Error::invalid("covariance shape does not match the mean"));
    }
    if phi < 0.0 {
        return Err(Error::invalid("phi must be nonnegative"));
    }
    let mut out = mu.clone();
    for i in 0..mu.len() {
        let v = sigma2[(i, i)];
        if !(v >= 0.0) {
            return Err(Error::Invariant(format!("negative variance {v} on the diagonal")));
        }
        out[i] += phi * v.sqrt();
    }
    Ok(out)
}

/// Barrier construction shared by every embedded model: the safety
/// functions, the configuration and the precomputed `β₀`.
#[derive(Clone)]
pub struct BarrierSystem {
    safety: Arc<dyn SafetyFunction>,
    config: BarrierConfig,
    beta0: DVector<f64>,
}

impl std::fmt::Debug for BarrierSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BarrierSystem")
            .field("constraints", &self.safety.labels())
            .field("config", &self.config)
            .field("beta0", &self.beta0)
            .finish()
    }
}

impl BarrierSystem {
    pub fn new(safety: Arc<dyn SafetyFunction>, config: BarrierConfig) -> Result<Self> {
        config.validate()?;
        let q = match (config.combine, safety.num_constraints()) {
            (_, 0) => 0,
            (Combine::Sum, _) => 1,
            (Combine::PerConstraint, c) => c,
        };
        let mut sys = Self {
            safety,
            config,
            beta0: DVector::zeros(q),
        };
        if let Some(p) = &sys.config.shift_point {
            if p.len() != sys.safety.state_dim() {
                return Err(Error::invalid("shift point has the wrong dimension"));
            }
            let p = DVector::from_column_slice(p);
            if !sys.safety.is_safe(&p) {
                return Err(Error::invalid("shift point must be strictly safe"));
            }
            sys.beta0 = sys.barrier(&p)?;
        }
        Ok(sys)
    }

    pub fn safety(&self) -> &Arc<dyn SafetyFunction> {
        &self.safety
    }

    pub fn config(&self) -> &BarrierConfig {
        &self.config
    }

    pub fn beta0(&self) -> &DVector<f64> {
        &self.beta0
    }

    /// Number of barrier states `q`.
    pub fn dim(&self) -> usize {
        self.beta0.len()
    }

    pub fn state_dim(&self) -> usize {
        self.safety.state_dim()
    }

    fn checked_h(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.safety.eval(x);
        if let Some((i, &v)) = h.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::BoundaryViolation {
                step: None,
                constraint: i,
                value: v,
            });
        }
        Ok(h)
    }

    /// `β(x)`, the unshifted barrier vector (length `q`).
    pub fn barrier(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.checked_h(x)?;
        let b = &self.config.kind;
        let per: Vec<f64> = h.iter().map(|&hi| b.value(hi)).collect::<Result<_>>()?;
        Ok(match self.config.combine {
            _ if self.dim() == 0 => DVector::zeros(0),
            Combine::Sum => DVector::from_element(1, per.iter().sum()),
            Combine::PerConstraint => DVector::from_vec(per),
        })
    }

    /// `∂β/∂x`, `q × n`.
    pub fn barrier_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = self.checked_h(x)?;
        let hx = self.safety.grad(x);
        let b = &self.config.kind;
        let mut rows = hx.clone();
        for i in 0..h.len() {
            let d = b.derivative(h[i])?;
            rows.row_mut(i).scale_mut(d);
        }
        Ok(match self.config.combine {
            _ if self.dim() == 0 => DMatrix::zeros(0, self.state_dim()),
            Combine::Sum => DMatrix::from_fn(1, self.state_dim(), |_, j| rows.column(j).sum()),
            Combine::PerConstraint => rows,
        })
    }

    /// Barrier state consistent with `x`: `β(x) - β₀`.
    pub fn consistent_z(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.barrier(x)? - &self.beta0)
    }

    /// `𝓑(x, z) = B'(B⁻¹(z + β₀)) H_x(x)`, `q × n`. For a consistent `z`
    /// this equals `∂β/∂x`.
    pub fn bas_matrix(&self, x: &DVector<f64>, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_z(z)?;
        let b = &self.config.kind;
        let beta_x = self.barrier_jacobian(x)?;
        let beta = self.barrier(x)?;
        let mut out = beta_x;
        for i in 0..self.dim() {
            // H_x = β_x / B'(H) with H = B⁻¹(β)
            let at_z = b.derivative(b.inverse(z[i] + self.beta0[i])?)?;
            let at_x = b.derivative(b.inverse(beta[i])?)?;
            out.row_mut(i).scale_mut(at_z / at_x);
        }
        Ok(out)
    }

    fn check_z(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::invalid(format!(
                "barrier state has dimension {}, expected {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Continuous BaS dynamics `ż = 𝓑(x,z) ẋ - γ (z + β₀ - β(x))`.
    pub fn bas_rhs(&self, x: &DVector<f64>, z: &DVector<f64>, xdot: &DVector<f64>) -> Result<DVector<f64>> {
        let bm = self.bas_matrix(x, z)?;
        let correction = z + &self.beta0 - self.barrier(x)?;
        Ok(bm * xdot - correction * self.config.gamma)
    }

    /// DBaS recursion on unshifted barriers:
    /// `w_{k+1} = β(x_{k+1}) - γ_d (w_k - β(x_k))`.
    pub fn dbas_step(&self, x: &DVector<f64>, w: &DVector<f64>, x_next: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_z(w)?;
        let now = self.barrier(x)?;
        let next = self.barrier(x_next)?;
        Ok(next - (w - now) * self.config.discrete_gamma)
    }

    /// Gradients of [`Self::dbas_step`] given the discrete transition
    /// Jacobians `fx = ∂x_{k+1}/∂x_k`, `fu = ∂x_{k+1}/∂u_k`.
    pub fn dbas_gradients(
        &self,
        x: &DVector<f64>,
        x_next: &DVector<f64>,
        fx: &DMatrix<f64>,
        fu: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let g = self.config.discrete_gamma;
        let bx_next = self.barrier_jacobian(x_next)?;
        let bx_now = self.barrier_jacobian(x)?;
        let dwdx = &bx_next * fx + bx_now * g;
        let dwdw = DMatrix::identity(self.dim(), self.dim()) * (-g);
        let dwdu = bx_next * fu;
        Ok((dwdx, dwdw, dwdu))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system(gamma: f64, discrete_gamma: f64, shift: Option<f64>) -> BarrierSystem {
        // h(x) = x, as a half-space through the origin.
        let set = ConstraintSet::new(
            1,
            &[Constraint::HalfSpace {
                normal: vec![1.0],
                offset: 0.0,
                indices: vec![0],
            }],
        )
        .unwrap();
        BarrierSystem::new(
            Arc::new(set),
            BarrierConfig {
                gamma,
                discrete_gamma,
                shift_point: shift.map(|s| vec![s]),
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn bas_rhs_hand_evaluated() {
        let sys = scalar_system(1.0, 0.0, Some(1.0));
        let x = v(&[2.0]);
        let z = sys.consistent_z(&x).unwrap();
        assert_eq!(z[0], -0.5);
        assert_eq!(sys.bas_rhs(&x, &z, &v(&[1.0])).unwrap()[0], -0.25);
        assert_eq!(sys.bas_rhs(&x, &z, &v(&[0.0])).unwrap()[0], 0.0);
    }

    #[test]
    fn bas_rhs_without_correction() {
        let sys = scalar_system(0.0, 0.0, Some(1.0));
        let x = v(&[2.0]);
        let z = v(&[0.3]);
        let bm = sys.bas_matrix(&x, &z).unwrap();
        let xdot = v(&[1.7]);
        assert_eq!(sys.bas_rhs(&x, &z, &xdot).unwrap()[0], bm[(0, 0)] * 1.7);
    }

    #[test]
    fn dbas_hand_evaluated() {
        let sys = scalar_system(1.0, 0.5, None);
        let w = sys.dbas_step(&v(&[2.0]), &v(&[0.5]), &v(&[1.0])).unwrap();
        assert_eq!(w[0], 1.0);
        // fixed point
        let x = v(&[3.0]);
        let w = sys.barrier(&x).unwrap();
        assert_eq!(sys.dbas_step(&x, &w, &x).unwrap(), w);
        // γ = 0: pure recomputation
        let sys0 = scalar_system(1.0, 0.0, None);
        let w = sys0.dbas_step(&v(&[2.0]), &v(&[7.0]), &v(&[0.25])).unwrap();
        assert_eq!(w[0], 4.0);
    }

    #[test]
    fn dbas_gradient_structure() {
        for g in [0.0, 0.3, 0.9] {
            let sys = scalar_system(1.0, g, None);
            let (_, dwdw, _) = sys
                .dbas_gradients(&v(&[2.0]), &v(&[1.5]), &DMatrix::identity(1, 1), &DMatrix::zeros(1, 1))
                .unwrap();
            assert_eq!(dwdw[(0, 0)], -g);
        }
    }

    #[test]
    fn violations_surface_as_errors() {
        let sys = scalar_system(1.0, 0.0, None);
        assert!(matches!(
            sys.dbas_step(&v(&[1.0]), &v(&[1.0]), &v(&[-0.1])),
            Err(Error::BoundaryViolation { .. })
        ));
        let bad_shift = BarrierSystem::new(
            sys.safety().clone(),
            BarrierConfig {
                shift_point: Some(vec![-1.0]),
                ..Default::default()
            },
        );
        assert!(bad_shift.is_err());
    }

    #[test]
    fn upper_bound() {
        let mu = v(&[1.0]);
        let s = DMatrix::from_element(1, 1, 4.0);
        assert_eq!(bas_upper_bound(&mu, &s, 0.0).unwrap(), mu);
        assert_eq!(bas_upper_bound(&mu, &s, 2.0).unwrap()[0], 5.0);
        let neg = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(bas_upper_bound(&mu, &neg, 1.0), Err(Error::Invariant(_))));
    }

    #[test]
    fn sum_mode_reduces_to_single_constraint_form() {
        // With one constraint, 𝓑 = B'(B⁻¹(z+β₀)) h_x exactly.
        let sys = scalar_system(1.0, 0.0, Some(1.0));
        let x = v(&[2.0]);
        let z = v(&[0.1]);
        let bm = sys.bas_matrix(&x, &z).unwrap();
        let expected = -1.0 / (1.0 / (0.1 + 1.0f64)).powi(2);
        assert!((bm[(0, 0)] - expected).abs() < 1e-14);
    }
}
