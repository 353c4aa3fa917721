use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Quadratic tracking cost over the embedded state:
/// `½ Σ_k (δx̄_kᵀ Q δx̄_k + δu_kᵀ R δu_k) + ½ δx̄_Nᵀ Q_f δx̄_N` with
/// `δx̄ = x̄ - goal` and `δu = u - u_goal`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub goal: DVector<f64>,
    /// Control reference, zero unless set (e.g. hover thrust).
    pub u_goal: DVector<f64>,
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!("{name} must be square")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::invalid(format!("{name} must be symmetric")));
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    if m.nrows() == 0 {
        return Ok(());
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 * m.amax().max(1.0) {
        return Err(Error::invalid(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>, goal: DVector<f64>) -> Result<Self> {
        check_psd(&q, "Q")?;
        check_psd(&qf, "Qf")?;
        check_symmetric(&r, "R")?;
        if r.clone().cholesky().is_none() {
            return Err(Error::invalid("R must be positive definite"));
        }
        if q.nrows() != goal.len() || qf.nrows() != goal.len() {
            return Err(Error::invalid("Q, Qf and goal dimensions differ"));
        }
        let m = r.nrows();
        Ok(Self {
            q,
            r,
            qf,
            goal,
            u_goal: DVector::zeros(m),
        })
    }

    pub fn with_control_goal(mut self, u_goal: DVector<f64>) -> Result<Self> {
        if u_goal.len() != self.control_dim() {
            return Err(Error::invalid("control goal has the wrong dimension"));
        }
        self.u_goal = u_goal;
        Ok(self)
    }

    /// Block-diagonal weights `diag(state_weights, barrier_weight·I_q)`.
    pub fn diagonal(
        state_weights: &[f64],
        barrier_weight: f64,
        barrier_dim: usize,
        control_weights: &[f64],
        terminal_state_weights: &[f64],
        terminal_barrier_weight: f64,
        goal: DVector<f64>,
    ) -> Result<Self> {
        let diag = |s: &[f64], b: f64| {
            DMatrix::from_diagonal(&DVector::from_iterator(
                s.len() + barrier_dim,
                s.iter().copied().chain(std::iter::repeat_n(b, barrier_dim)),
            ))
        };
        Self::new(
            diag(state_weights, barrier_weight),
            DMatrix::from_diagonal(&DVector::from_column_slice(control_weights)),
            diag(terminal_state_weights, terminal_barrier_weight),
            goal,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.goal.len()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn running(&self, xbar: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let d = xbar - &self.goal;
        let du = u - &self.u_goal;
        0.5 * (d.dot(&(&self.q * &d)) + du.dot(&(&self.r * &du)))
    }

    pub fn terminal(&self, xbar: &DVector<f64>) -> f64 {
        let d = xbar - &self.goal;
        0.5 * d.dot(&(&self.qf * &d))
    }

    /// Total cost of a trajectory with `controls.len() + 1` states.
    pub fn total(&self, states: &[DVector<f64>], controls: &[DVector<f64>]) -> f64 {
        let running: f64 = states.iter().zip(controls).map(|(x, u)| self.running(x, u)).sum();
        running + states.last().map_or(0.0, |x| self.terminal(x))
    }
}
