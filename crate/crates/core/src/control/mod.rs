//! LQR stabilization and DDP trajectory optimization on the embedded model.

mod cost;
mod ddp;
mod lqr;
mod rollout;

pub use cost::QuadraticCost;
pub use ddp::{ddp_optimize, DdpOptions, DdpSolution};
pub use lqr::{dare_solve, discretize, gpbas_lqr, riccati_residual, spectral_radius, Discretization, LqrGains};
pub use rollout::{rollout_policy, AffinePolicy, LinearFeedback, Plant, Policy, Rollout, RolloutReport, TrueSystem};
