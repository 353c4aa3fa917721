use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::QuadraticCost;
use crate::barrier::EmbeddedModel;
use crate::error::{Error, Result};

const MAX_DOUBLINGS: usize = 64;
const DIVERGENCE_TRACE: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct LqrGains {
    /// `m × (n+q)` feedback matrix, `u = -K (x̄ - x̄*)`.
    pub k: DMatrix<f64>,
    /// Riccati solution.
    pub p: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Exact for piecewise-constant inputs.
    #[default]
    ZeroOrderHold,
    Euler,
}

/// Discrete Riccati map residual `‖P - (Q + AᵀPA - AᵀPB(R+BᵀPB)⁻¹BᵀPA)‖_F`.
pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Some(next) => (next - p).norm(),
        None => f64::INFINITY,
    }
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let bp = b.transpose() * p;
    let s = r + &bp * b;
    let gain = s.cholesky()?.solve(&(&bp * a));
    let atp = a.transpose() * p;
    let next = q + &atp * a - (&atp * b) * gain;
    Some((&next + next.transpose()) * 0.5)
}

fn feedback_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bp = b.transpose() * p;
    let s = r + &bp * b;
    s.cholesky()
        .map(|c| c.solve(&(bp * a)))
        .ok_or_else(|| Error::Numerical("R + BᵀPB is not positive definite".into()))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Solve the discrete algebraic Riccati equation.
///
/// The value iteration `P ← Q + AᵀPA - AᵀPB(R+BᵀPB)⁻¹BᵀPA` from `P = Q` is
/// run in doubling form (each sweep squares the horizon), then polished
/// with plain fixed-point sweeps.
pub fn dare_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<LqrGains> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::invalid("inconsistent DARE dimensions"));
    }
    let r_chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("R must be positive definite"))?;
    let mut ak = a.clone();
    let mut gk = b * r_chol.solve(&b.transpose());
    let mut hk = q.clone();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for _ in 0..MAX_DOUBLINGS {
        let w = (&eye + &gk * &hk)
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular doubling step".into()))?;
        let winv_a = &w * &ak;
        let h_next = &hk + ak.transpose() * &hk * &winv_a;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let a_next = &ak * &winv_a;
        let h_next = (&h_next + h_next.transpose()) * 0.5;
        let trace = h_next.trace();
        if !trace.is_finite() || trace.abs() > DIVERGENCE_TRACE {
            return Err(Error::NotStabilizable { trace });
        }
        let delta = (&h_next - &hk).norm();
        hk = h_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        ak = a_next;
        if delta < 1e-10 * (1.0 + hk.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable { trace: hk.trace() });
    }
    let mut p = hk;
    for _ in 0..10 {
        let next = riccati_map(a, b, q, r, &p)
            .ok_or_else(|| Error::Numerical("R + BᵀPB is not positive definite".into()))?;
        let delta = (&next - &p).norm();
        p = next;
        if delta < 1e-10 {
            break;
        }
    }
    let k = feedback_gain(a, b, r, &p)?;
    let rho = spectral_radius(&(a - b * &k));
    if !(rho < 1.0) {
        return Err(Error::NotStabilizable { trace: p.trace() });
    }
    Ok(LqrGains { k, p })
}

/// Discretize `ẋ = A x + B u` with step `dt`.
pub fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64, method: Discretization) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    match method {
        Discretization::Euler => (DMatrix::identity(n, n) + a * dt, b * dt),
        Discretization::ZeroOrderHold => {
            let mut aug = DMatrix::zeros(n + m, n + m);
            aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
            aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
            let e = aug.exp();
            (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
        }
    }
}

/// GP-BaS LQR design at the model's equilibrium `(x_eq, u_eq)`.
///
/// `cost` carries continuous-time weights over the embedded state; they are
/// scaled by `dt` for the discrete problem.
pub fn gpbas_lqr(
    model: &EmbeddedModel,
    cost: &QuadraticCost,
    x_eq: &DVector<f64>,
    u_eq: &DVector<f64>,
    method: Discretization,
) -> Result<LqrGains> {
    if cost.state_dim() != model.embedded_dim() || cost.control_dim() != model.control_dim() {
        return Err(Error::invalid("cost dimensions do not match the embedded model"));
    }
    let (ac, bc) = model.embedded_jacobians_lqr(x_eq, u_eq)?;
    let dt = model.dt();
    let (ad, bd) = discretize(&ac, &bc, dt, method);
    dare_solve(&ad, &bd, &(&cost.q * dt), &(&cost.r * dt))
}
