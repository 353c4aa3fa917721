use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::QuadraticCost;
use crate::barrier::{EmbeddedModel, EmbeddedState};
use crate::error::{Error, Result};

/// Feedback law over the embedded state.
pub trait Policy: Send + Sync {
    fn control(&self, k: usize, state: &EmbeddedState) -> DVector<f64>;
}

/// `u = u* - K (x̄ - x̄*)`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFeedback {
    pub gain: DMatrix<f64>,
    pub target: DVector<f64>,
    pub u_eq: DVector<f64>,
}

impl Policy for LinearFeedback {
    fn control(&self, _k: usize, s: &EmbeddedState) -> DVector<f64> {
        &self.u_eq - &self.gain * (s.to_vector() - &self.target)
    }
}

/// Time-varying affine law `u_k = ũ_k + k_k + K_k (x̄_k - x̃̄_k)`; past the
/// last knot it holds the final nominal control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinePolicy {
    pub nominal_states: Vec<DVector<f64>>,
    pub nominal_controls: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Extra feedforward; empty means none.
    #[serde(default)]
    pub feedforward: Vec<DVector<f64>>,
}

impl AffinePolicy {
    pub fn horizon(&self) -> usize {
        self.nominal_controls.len()
    }
}

impl Policy for AffinePolicy {
    fn control(&self, k: usize, s: &EmbeddedState) -> DVector<f64> {
        let Some(last) = self.nominal_controls.len().checked_sub(1) else {
            return DVector::zeros(0);
        };
        let k = k.min(last);
        let mut u = self.nominal_controls[k].clone();
        if let Some(ff) = self.feedforward.get(k) {
            u += ff;
        }
        u + &self.gains[k] * (s.to_vector() - &self.nominal_states[k])
    }
}

/// Ground-truth plant used for replay.
pub trait TrueSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Advance the true state by one control interval of length `dt`.
    fn advance(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64>;
}

/// Where a rollout's state transitions come from.
#[derive(Clone, Copy)]
pub enum Plant<'a> {
    /// The embedded model's mean dynamics.
    Model,
    /// True dynamics; the barrier state is reconstructed from measured
    /// states through the DBaS recursion.
    True(&'a dyn TrueSystem),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub min_h: f64,
    /// Smallest signed distance to a circular obstacle boundary.
    pub min_clearance: f64,
    /// First knot index with `h ≤ 0`, if any.
    pub violation_step: Option<usize>,
    pub cost: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub states: Vec<EmbeddedState>,
    pub controls: Vec<DVector<f64>>,
    /// `min_i h_i(x_k)` per knot.
    pub h_min: Vec<f64>,
    pub report: RolloutReport,
}

impl Rollout {
    pub fn final_state(&self) -> &EmbeddedState {
        self.states.last().expect("rollout has at least the initial state")
    }
}

/// Run `policy` for `horizon` steps from `x0`, with `z` consistent at start.
///
/// Boundary violations end the rollout early and are reported, not raised.
pub fn rollout_policy(
    model: &EmbeddedModel,
    plant: Plant<'_>,
    policy: &dyn Policy,
    x0: &DVector<f64>,
    horizon: usize,
    use_bound: bool,
    cost: Option<&QuadraticCost>,
) -> Result<Rollout> {
    let safety = model.safety();
    if let Plant::True(sys) = plant {
        if sys.state_dim() != model.state_dim() || sys.control_dim() != model.control_dim() {
            return Err(Error::invalid("true system and model dimensions differ"));
        }
    }
    let start = model.initial_state(x0)?;
    let mut states = vec![start];
    let mut controls = Vec::with_capacity(horizon);
    let mut h_min = vec![safety.min_h(x0)];
    let mut min_clearance = clearance(model, x0);
    let mut violation_step = None;
    let bounded = use_bound && model.config().phi > 0.0;
    for k in 0..horizon {
        let s = &states[k];
        let u = policy.control(k, s);
        let next = match plant {
            Plant::Model => model.embedded_step(s, &u, use_bound),
            Plant::True(sys) => {
                let x_next = sys.advance(&s.x, &u, model.dt());
                let var = if bounded {
                    Some(model.predict_next(&s.x, &u)?.1)
                } else {
                    None
                };
                model
                    .barrier_update(&s.x, &s.z, &x_next, var.as_ref())
                    .map(|z| EmbeddedState::new(x_next.clone(), z))
                    .or_else(|e| match e {
                        // Keep the offending state so the report sees it.
                        Error::BoundaryViolation { .. } => {
                            Ok(EmbeddedState::new(x_next, DVector::from_element(s.z.len(), f64::INFINITY)))
                        }
                        other => Err(other),
                    })
            }
        };
        let next = match next {
            Ok(n) => n,
            Err(Error::BoundaryViolation { .. }) => {
                controls.push(u);
                violation_step = Some(k + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        controls.push(u);
        let h = safety.min_h(&next.x);
        min_clearance = min_clearance.min(clearance(model, &next.x));
        h_min.push(h);
        let unsafe_now = !(h > 0.0);
        states.push(next);
        if unsafe_now {
            violation_step = Some(k + 1);
            break;
        }
    }
    let cost = match (cost, violation_step) {
        (Some(c), None) => {
            let xs: Vec<DVector<f64>> = states.iter().map(EmbeddedState::to_vector).collect();
            Some(c.total(&xs, &controls))
        }
        _ => None,
    };
    let min_h = if violation_step.is_some() {
        h_min.iter().copied().fold(f64::INFINITY, f64::min).min(0.0)
    } else {
        h_min.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok(Rollout {
        states,
        controls,
        h_min,
        report: RolloutReport {
            min_h,
            min_clearance,
            violation_step,
            cost,
        },
    })
}

fn clearance(model: &EmbeddedModel, x: &DVector<f64>) -> f64 {
    model.safety().clearance(x)
}
