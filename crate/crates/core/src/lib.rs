//! Safe control on learned dynamics with Gaussian process barrier states.
//!
//! Dynamics are learned with exact GP regression ([`gp`]), safety
//! constraints are embedded as barrier states ([`barrier`]), and the
//! resulting model is stabilized with LQR or optimized with DDP
//! ([`control`]). [`uncertainty`] propagates beliefs and runs Monte Carlo
//! safety checks; [`environments`] holds the benchmark systems.

pub mod barrier;
pub mod control;
pub mod dynamics;
pub mod environments;
mod error;
pub mod gp;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};
