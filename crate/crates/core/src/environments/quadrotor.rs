//! 12-state quadrotor: position, ZYX Euler angles `(φ, θ, ψ)`, world-frame
//! velocity and body rates `(p, q, r)`. Controls are collective thrust and
//! body torques `(T, τx, τy, τz)`.

use nalgebra::{DMatrix, DVector};

use super::ContinuousDynamics;
use crate::dynamics::{check_dims, DynamicsModel};
use crate::error::{Error, Result};
use crate::gp::{GpModel, Posterior, TargetMode};

pub(super) const FEATURE_NAMES: &[&str] = &["phi", "theta", "psi", "thrust", "tau_x", "tau_y", "tau_z"];
pub(super) const TARGET_NAMES: &[&str] = &["ax", "ay", "az", "dp", "dq", "dr"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub gravity: f64,
    /// Diagonal of the inertia matrix.
    pub inertia: [f64; 3],
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.5,
            gravity: 9.81,
            inertia: [0.01; 3],
        }
    }
}

impl QuadrotorParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Thrust direction `R e₃` and its derivatives with respect to `(φ, θ, ψ)`.
fn thrust_axis(phi: f64, theta: f64, psi: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let n = [cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * ct];
    // d[i][j] = ∂n_i / ∂angle_j
    let d = [
        [-sf * st * cp + cf * sp, cf * ct * cp, -cf * st * sp + sf * cp],
        [-sf * st * sp - cf * cp, cf * ct * sp, cf * st * cp + sf * sp],
        [-sf * ct, -cf * st, 0.0],
    ];
    (n, d)
}

/// Euler-angle rates from body rates, with Jacobians w.r.t. `(φ, θ)` and
/// `(p, q, r)`.
fn euler_rates(phi: f64, theta: f64, w: [f64; 3]) -> ([f64; 3], [[f64; 2]; 3], [[f64; 3]; 3]) {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let tt = st / ct;
    let [p, q, r] = w;
    let a = q * sf + r * cf;
    let b = q * cf - r * sf;
    let rates = [p + a * tt, b, a / ct];
    let d_angles = [[b * tt, a / (ct * ct)], [-a, 0.0], [b / ct, a * st / (ct * ct)]];
    let d_rates = [[1.0, sf * tt, cf * tt], [0.0, cf, -sf], [0.0, sf / ct, cf / ct]];
    (rates, d_angles, d_rates)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quadrotor {
    pub params: QuadrotorParams,
}

impl Quadrotor {
    fn angular_accel(&self, w: [f64; 3], tau: [f64; 3]) -> [f64; 3] {
        let [ix, iy, iz] = self.params.inertia;
        let [p, q, r] = w;
        [
            (tau[0] + (iy - iz) * q * r) / ix,
            (tau[1] + (iz - ix) * p * r) / iy,
            (tau[2] + (ix - iy) * p * q) / iz,
        ]
    }
}

impl ContinuousDynamics for Quadrotor {
    fn state_dim(&self) -> usize {
        12
    }

    fn control_dim(&self) -> usize {
        4
    }

    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let QuadrotorParams { mass, gravity, .. } = self.params;
        let w = [x[9], x[10], x[11]];
        let (n, _) = thrust_axis(x[3], x[4], x[5]);
        let (rates, _, _) = euler_rates(x[3], x[4], w);
        let alpha = self.angular_accel(w, [u[1], u[2], u[3]]);
        let mut out = DVector::zeros(12);
        for i in 0..3 {
            out[i] = x[6 + i];
            out[3 + i] = rates[i];
            out[6 + i] = u[0] / mass * n[i];
            out[9 + i] = alpha[i];
        }
        out[8] -= gravity;
        out
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let QuadrotorParams { mass, inertia, .. } = self.params;
        let [ix, iy, iz] = inertia;
        let [p, q, r] = [x[9], x[10], x[11]];
        let (n, dn) = thrust_axis(x[3], x[4], x[5]);
        let (_, de_a, de_w) = euler_rates(x[3], x[4], [p, q, r]);
        let mut fx = DMatrix::zeros(12, 12);
        let mut fu = DMatrix::zeros(12, 4);
        for i in 0..3 {
            fx[(i, 6 + i)] = 1.0;
            fx[(3 + i, 3)] = de_a[i][0];
            fx[(3 + i, 4)] = de_a[i][1];
            for j in 0..3 {
                fx[(3 + i, 9 + j)] = de_w[i][j];
                fx[(6 + i, 3 + j)] = u[0] / mass * dn[i][j];
            }
            fu[(6 + i, 0)] = n[i] / mass;
        }
        fx[(9, 10)] = (iy - iz) * r / ix;
        fx[(9, 11)] = (iy - iz) * q / ix;
        fx[(10, 9)] = (iz - ix) * r / iy;
        fx[(10, 11)] = (iz - ix) * p / iy;
        fx[(11, 9)] = (ix - iy) * q / iz;
        fx[(11, 10)] = (ix - iy) * p / iz;
        fu[(9, 1)] = 1.0 / ix;
        fu[(10, 2)] = 1.0 / iy;
        fu[(11, 3)] = 1.0 / iz;
        (fx, fu)
    }
}

/// GP input for the acceleration model: attitude and controls. Body rates
/// are left out because the gyroscopic terms vanish for equal principal
/// inertias.
pub(super) fn features(x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
    vec![x[3], x[4], x[5], u[0], u[1], u[2], u[3]]
}

/// PD attitude and vertical-speed hold used while collecting data.
pub(super) fn attitude_hold(params: &QuadrotorParams, x: &DVector<f64>) -> DVector<f64> {
    const KP: f64 = 0.1;
    const KD: f64 = 0.02;
    const KV: f64 = 2.0;
    let tilt = (x[3].cos() * x[4].cos()).max(0.5);
    let thrust = params.mass * (params.gravity - KV * x[8]) / tilt;
    DVector::from_vec(vec![
        thrust,
        -KP * x[3] - KD * x[9],
        -KP * x[4] - KD * x[10],
        -KP * x[5] - KD * x[11],
    ])
}

/// Grey-box quadrotor: the kinematic rows are exact, the six acceleration
/// rows come from a GP over [`FEATURE_NAMES`].
#[derive(Clone, Debug)]
pub struct QuadrotorGreyBox {
    gp: GpModel,
}

impl QuadrotorGreyBox {
    pub fn new(gp: GpModel) -> Result<Self> {
        if gp.input_dim() != FEATURE_NAMES.len() || gp.output_dim() != TARGET_NAMES.len() {
            return Err(Error::invalid(format!(
                "quadrotor acceleration GP needs {} inputs and {} outputs",
                FEATURE_NAMES.len(),
                TARGET_NAMES.len()
            )));
        }
        Ok(Self { gp })
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    fn kinematics(x: &DVector<f64>) -> DVector<f64> {
        let (rates, _, _) = euler_rates(x[3], x[4], [x[9], x[10], x[11]]);
        DVector::from_iterator(6, (6..9).map(|i| x[i]).chain(rates))
    }
}

impl DynamicsModel for QuadrotorGreyBox {
    fn state_dim(&self) -> usize {
        12
    }

    fn control_dim(&self) -> usize {
        4
    }

    fn mode(&self) -> TargetMode {
        TargetMode::ContinuousDerivative
    }

    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Posterior> {
        check_dims(self, x, u)?;
        let acc = self.gp.posterior(&features(x, u))?;
        let mut mean = DVector::zeros(12);
        let mut variance = DVector::zeros(12);
        mean.rows_mut(0, 6).copy_from(&Self::kinematics(x));
        mean.rows_mut(6, 6).copy_from(&acc.mean);
        variance.rows_mut(6, 6).copy_from(&acc.variance);
        Ok(Posterior { mean, variance })
    }

    fn mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims(self, x, u)?;
        let mut mean = DVector::zeros(12);
        mean.rows_mut(0, 6).copy_from(&Self::kinematics(x));
        mean.rows_mut(6, 6).copy_from(&self.gp.mean(&features(x, u))?);
        Ok(mean)
    }

    fn mean_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dims(self, x, u)?;
        let (_, de_a, de_w) = euler_rates(x[3], x[4], [x[9], x[10], x[11]]);
        let g = self.gp.mean_gradient(&features(x, u))?;
        let mut fx = DMatrix::zeros(12, 12);
        let mut fu = DMatrix::zeros(12, 4);
        for i in 0..3 {
            fx[(i, 6 + i)] = 1.0;
            fx[(3 + i, 3)] = de_a[i][0];
            fx[(3 + i, 4)] = de_a[i][1];
            for j in 0..3 {
                fx[(3 + i, 9 + j)] = de_w[i][j];
            }
        }
        for r in 0..6 {
            for j in 0..3 {
                fx[(6 + r, 3 + j)] = g[(r, j)];
            }
            for j in 0..4 {
                fu[(6 + r, j)] = g[(r, 3 + j)];
            }
        }
        Ok((fx, fu))
    }
}
