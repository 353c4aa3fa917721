//! First-order DDP (iLQR) on the safety-embedded model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AffinePolicy, QuadraticCost};
use crate::barrier::{EmbeddedModel, EmbeddedState, StepJacobians};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpOptions {
    pub max_iters: usize,
    /// Converged once the expected improvement drops below this.
    pub epsilon: f64,
    pub reg_init: f64,
    /// Smallest nonzero regularization; below it λ snaps to zero.
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_factor: f64,
    pub reg_decay: f64,
    /// Smallest line-search step, tried after 1, ½, ¼, ...
    pub alpha_min: f64,
    /// Propagate the barrier states with the φ-bound.
    pub use_bound: bool,
}

impl Default for DdpOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            epsilon: 1e-4,
            reg_init: 0.0,
            reg_min: 1e-6,
            reg_max: 1e6,
            reg_factor: 10.0,
            reg_decay: 0.5,
            alpha_min: 1.0 / 1024.0,
            use_bound: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpSolution {
    /// `N + 1` embedded states `[x; z]`.
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Feedforward of the last backward pass.
    pub feedforward: Vec<DVector<f64>>,
    /// Cost after every accepted iteration, starting with the initial rollout.
    pub cost_history: Vec<f64>,
    pub converged: bool,
    /// Expected improvement of the last backward pass.
    pub delta_v: f64,
    pub iterations: usize,
    /// `max_k ‖Q_u‖` from the last backward pass.
    pub q_u_norm: f64,
}

impl DdpSolution {
    pub fn cost(&self) -> f64 {
        self.cost_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Replay law `u_k = ũ_k + K_k (x̄_k - x̃̄_k)`; the accepted feedforward
    /// is already folded into `ũ`.
    pub fn policy(&self) -> AffinePolicy {
        AffinePolicy {
            nominal_states: self.states[..self.controls.len()].to_vec(),
            nominal_controls: self.controls.clone(),
            gains: self.gains.clone(),
            feedforward: Vec::new(),
        }
    }

    pub fn embedded_states(&self, state_dim: usize) -> Vec<EmbeddedState> {
        self.states
            .iter()
            .map(|v| EmbeddedState::from_vector(v, state_dim))
            .collect()
    }
}

struct Nominal {
    states: Vec<EmbeddedState>,
    controls: Vec<DVector<f64>>,
    cost: f64,
}

struct BackwardPass {
    k: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
    /// Linear and quadratic terms of the expected cost change.
    dv: (f64, f64),
    q_u_norm: f64,
}

fn total_cost(cost: &QuadraticCost, states: &[EmbeddedState], controls: &[DVector<f64>]) -> f64 {
    let mut j = 0.0;
    for (s, u) in states.iter().zip(controls) {
        j += cost.running(&s.to_vector(), u);
    }
    j + cost.terminal(&states[states.len() - 1].to_vector())
}

fn forward(
    model: &EmbeddedModel,
    cost: &QuadraticCost,
    nominal: Option<(&Nominal, &BackwardPass)>,
    x0: &EmbeddedState,
    controls: &[DVector<f64>],
    alpha: f64,
    use_bound: bool,
) -> Result<Nominal> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut us = Vec::with_capacity(controls.len());
    states.push(x0.clone());
    for (k, u_nom) in controls.iter().enumerate() {
        let s = &states[k];
        let u = match nominal {
            Some((nom, bp)) => {
                let dx = s.to_vector() - nom.states[k].to_vector();
                u_nom + &bp.k[k] * alpha + &bp.gains[k] * dx
            }
            None => u_nom.clone(),
        };
        let next = model.embedded_step(s, &u, use_bound).map_err(|e| e.at_step(k + 1))?;
        if next.z.iter().chain(next.x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state at step {}", k + 1)));
        }
        us.push(u);
        states.push(next);
    }
    let c = total_cost(cost, &states, &us);
    Ok(Nominal {
        states,
        controls: us,
        cost: c,
    })
}

fn linearize(model: &EmbeddedModel, nom: &Nominal) -> Result<Vec<StepJacobians>> {
    use rayon::prelude::*;
    (0..nom.controls.len())
        .into_par_iter()
        .map(|k| {
            model
                .step_with_jacobians(&nom.states[k], &nom.controls[k], false)
                .map(|(_, j)| j)
        })
        .collect()
}

fn backward(cost: &QuadraticCost, nom: &Nominal, jac: &[StepJacobians], reg: f64) -> Option<BackwardPass> {
    let horizon = nom.controls.len();
    let m = cost.control_dim();
    let terminal = nom.states[horizon].to_vector() - &cost.goal;
    let mut vx = &cost.qf * terminal;
    let mut vxx = cost.qf.clone();
    let mut ks = vec![DVector::zeros(m); horizon];
    let mut gains = vec![DMatrix::zeros(m, cost.state_dim()); horizon];
    let mut dv = (0.0, 0.0);
    let mut q_u_norm: f64 = 0.0;
    for k in (0..horizon).rev() {
        let (a, b) = (&jac[k].a, &jac[k].b);
        let u = &nom.controls[k];
        let dx = nom.states[k].to_vector() - &cost.goal;
        let qx = &cost.q * dx + a.transpose() * &vx;
        let qu = &cost.r * (u - &cost.u_goal) + b.transpose() * &vx;
        let vxx_a = &vxx * a;
        let vxx_b = &vxx * b;
        let qxx = &cost.q + a.transpose() * &vxx_a;
        let quu = &cost.r + b.transpose() * &vxx_b;
        let qux = b.transpose() * &vxx_a;
        let quu_reg = &quu + DMatrix::<f64>::identity(m, m) * reg;
        let chol = quu_reg.cholesky()?;
        let kff = -chol.solve(&qu);
        let kfb = -chol.solve(&qux);
        q_u_norm = q_u_norm.max(qu.norm());
        dv.0 += kff.dot(&qu);
        dv.1 += 0.5 * kff.dot(&(&quu * &kff));
        vx = qx + kfb.transpose() * (&quu * &kff) + kfb.transpose() * &qu + qux.transpose() * &kff;
        let v = qxx + kfb.transpose() * &quu * &kfb + kfb.transpose() * &qux + qux.transpose() * &kfb;
        vxx = (&v + v.transpose()) * 0.5;
        ks[k] = kff;
        gains[k] = kfb;
    }
    Some(BackwardPass {
        k: ks,
        gains,
        dv,
        q_u_norm,
    })
}

fn solution(nom: &Nominal, bp: Option<&BackwardPass>, history: Vec<f64>, converged: bool, delta_v: f64, iterations: usize) -> DdpSolution {
    let (m, nbar) = (
        nom.controls.first().map_or(0, DVector::len),
        nom.states[0].dim(),
    );
    let horizon = nom.controls.len();
    DdpSolution {
        states: nom.states.iter().map(EmbeddedState::to_vector).collect(),
        controls: nom.controls.clone(),
        gains: bp.map_or_else(|| vec![DMatrix::zeros(m, nbar); horizon], |b| b.gains.clone()),
        feedforward: bp.map_or_else(|| vec![DVector::zeros(m); horizon], |b| b.k.clone()),
        cost_history: history,
        converged,
        delta_v,
        iterations,
        q_u_norm: bp.map_or(f64::NAN, |b| b.q_u_norm),
    }
}

/// Optimize `u_init` from the embedded initial state `x0`.
///
/// Every accepted iterate is a full rollout of the embedded model in which
/// all knots are strictly safe; candidate rollouts that leave the safe set
/// are rejected by the line search like a cost increase.
pub fn ddp_optimize(
    model: &EmbeddedModel,
    cost: &QuadraticCost,
    x0: &EmbeddedState,
    u_init: &[DVector<f64>],
    opts: &DdpOptions,
) -> Result<DdpSolution> {
    if u_init.len() < 2 {
        return Err(Error::invalid("DDP horizon must be at least 2"));
    }
    if opts.max_iters == 0 {
        return Err(Error::invalid("DDP needs at least one iteration"));
    }
    if cost.state_dim() != model.embedded_dim() || cost.control_dim() != model.control_dim() {
        return Err(Error::invalid("cost dimensions do not match the embedded model"));
    }
    if u_init.iter().any(|u| u.len() != model.control_dim()) {
        return Err(Error::invalid("initial controls have the wrong dimension"));
    }
    if x0.x.len() != model.state_dim() || x0.z.len() != model.barrier_dim() {
        return Err(Error::invalid("initial state has the wrong dimension"));
    }
    if !model.safety().is_safe(&x0.x) {
        return Err(Error::invalid("initial state is not strictly safe"));
    }
    let mut nom = forward(model, cost, None, x0, u_init, 1.0, opts.use_bound)
        .map_err(|e| match e {
            Error::BoundaryViolation { .. } => {
                Error::invalid(format!("initial control sequence is unsafe: {e}"))
            }
            other => other,
        })?;
    let mut history = vec![nom.cost];
    let mut jac = linearize(model, &nom)?;
    let mut reg = opts.reg_init;
    let mut last_bp: Option<BackwardPass> = None;
    let mut delta_v = f64::INFINITY;

    for iter in 1..=opts.max_iters {
        let bp = loop {
            match backward(cost, &nom, &jac, reg) {
                Some(bp) => break Some(bp),
                None => {
                    reg = (reg * opts.reg_factor).max(opts.reg_min);
                    if reg > opts.reg_max {
                        break None;
                    }
                }
            }
        };
        let Some(bp) = bp else {
            return Err(Error::Stalled(Box::new(solution(&nom, last_bp.as_ref(), history, false, delta_v, iter))));
        };
        delta_v = -(bp.dv.0 + bp.dv.1);
        if delta_v < opts.epsilon {
            log::debug!("ddp converged at iteration {iter}: ΔV = {delta_v:e}");
            return Ok(solution(&nom, Some(&bp), history, true, delta_v, iter));
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= opts.alpha_min {
            match forward(model, cost, Some((&nom, &bp)), x0, &nom.controls, alpha, opts.use_bound) {
                Ok(cand) if cand.cost < nom.cost => {
                    accepted = Some(cand);
                    break;
                }
                Ok(_) | Err(Error::BoundaryViolation { .. }) | Err(Error::Numerical(_)) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(cand) => {
                log::debug!(
                    "ddp iter {iter}: cost {:.6e} -> {:.6e} (alpha {alpha}, reg {reg:e})",
                    nom.cost,
                    cand.cost
                );
                nom = cand;
                history.push(nom.cost);
                jac = linearize(model, &nom)?;
                reg *= opts.reg_decay;
                if reg < opts.reg_min {
                    reg = 0.0;
                }
                last_bp = Some(bp);
            }
            None => {
                reg = (reg * opts.reg_factor).max(opts.reg_min);
                if reg > opts.reg_max {
                    return Err(Error::Stalled(Box::new(solution(&nom, Some(&bp), history, false, delta_v, iter))));
                }
                last_bp = Some(bp);
            }
        }
    }
    // Out of iterations: one more backward pass gives gains for the final nominal.
    let bp = backward(cost, &nom, &jac, reg.max(opts.reg_min));
    let dv = bp.as_ref().map_or(delta_v, |b| -(b.dv.0 + b.dv.1));
    Ok(solution(&nom, bp.as_ref().or(last_bp.as_ref()), history, false, dv, opts.max_iters))
}
