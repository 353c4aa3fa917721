//! Belief propagation through the embedded model and Monte Carlo rollouts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::barrier::{EmbeddedModel, EmbeddedState};
use crate::control::Policy;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

const SYMMETRY_TOL: f64 = 1e-10;

/// Gaussian over the embedded state `[x; z]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::invalid("belief covariance does not match the mean"));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("belief has non-finite entries"));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::invalid("belief covariance is not symmetric"));
        }
        Ok(Self {
            mean,
            cov: psd_repair(&cov),
        })
    }

    /// Point mass at `mean`.
    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetrize and clamp negative eigenvalues to zero.
pub fn psd_repair(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    if sym.nrows() == 0 {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// One first-order Taylor step of the belief over `[x; z]`.
///
/// The mean follows the embedded mean step (no φ-bound). The covariance is
/// `J Σ Jᵀ + G diag(v) Gᵀ` where `J` is the step Jacobian (closed loop
/// `A + B K` when `feedback = ∂u/∂x̄` is given), `v` the predictive
/// variance of the state increment and `G = [I; ∂β/∂x(x_{k+1})]`.
pub fn propagate_belief(
    belief: &GaussianBelief,
    u: &DVector<f64>,
    model: &EmbeddedModel,
    feedback: Option<&DMatrix<f64>>,
) -> Result<GaussianBelief> {
    let (n, q) = (model.state_dim(), model.barrier_dim());
    if belief.dim() != n + q {
        return Err(Error::invalid("belief dimension does not match the embedded model"));
    }
    let s = EmbeddedState::from_vector(&belief.mean, n);
    let (next, jac) = model.step_with_jacobians(&s, u, false)?;
    let (_, step_var) = model.predict_next(&s.x, u)?;
    let j = match feedback {
        Some(k) => {
            if k.shape() != (model.control_dim(), n + q) {
                return Err(Error::invalid("feedback gain has the wrong shape"));
            }
            &jac.a + &jac.b * k
        }
        None => jac.a,
    };
    let beta_x = model.barrier().barrier_jacobian(&next.x)?;
    let mut g = DMatrix::zeros(n + q, n);
    g.view_mut((0, 0), (n, n)).fill_with_identity();
    g.view_mut((n, 0), (q, n)).copy_from(&beta_x);
    let cov = &j * &belief.cov * j.transpose() + &g * DMatrix::from_diagonal(&step_var) * g.transpose();
    Ok(GaussianBelief {
        mean: next.to_vector(),
        cov: psd_repair(&cov),
    })
}

/// Outcome of a batch of sampled closed-loop rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyReport {
    pub fraction_safe: f64,
    pub samples: usize,
    pub horizon: usize,
    /// 5th, 50th and 95th percentile of the per-rollout minimum `h`.
    pub min_h_quantiles: [f64; 3],
    /// Entry `k` counts rollouts whose first violation is at knot `k`.
    pub first_violation_histogram: Vec<usize>,
}

impl SafetyReport {
    /// Binomial standard error of `fraction_safe`.
    pub fn standard_error(&self) -> f64 {
        let p = self.fraction_safe;
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }

    /// Normal-approximation 95% confidence interval, clipped to `[0, 1]`.
    pub fn confidence_interval(&self) -> (f64, f64) {
        let half = 1.959_963_984_540_054 * self.standard_error();
        ((self.fraction_safe - half).max(0.0), (self.fraction_safe + half).min(1.0))
    }
}

struct SampleOutcome {
    min_h: f64,
    first_violation: Option<usize>,
}

fn sample_rollout(
    model: &EmbeddedModel,
    policy: &dyn Policy,
    start: &EmbeddedState,
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<SampleOutcome> {
    let mut rng = substream(seed, Stream::MonteCarlo, index);
    let safety = model.safety();
    let mut s = start.clone();
    let mut min_h = safety.min_h(&s.x);
    for k in 0..horizon {
        let u = policy.control(k, &s);
        let (mean, var) = model.predict_next(&s.x, &u)?;
        let x_next = DVector::from_iterator(
            mean.len(),
            mean.iter().zip(var.iter()).map(|(m, v)| {
                let e: f64 = rng.sample(StandardNormal);
                m + v.max(0.0).sqrt() * e
            }),
        );
        let h = safety.min_h(&x_next);
        min_h = min_h.min(h);
        if !(h > 0.0) {
            return Ok(SampleOutcome {
                min_h,
                first_violation: Some(k + 1),
            });
        }
        // The controller's barrier state sees the measured state, plus the
        // φ-bound when the model uses one.
        let bound = (model.config().phi > 0.0).then_some(&var);
        let z = model.barrier_update(&s.x, &s.z, &x_next, bound)?;
        s = EmbeddedState::new(x_next, z);
    }
    Ok(SampleOutcome {
        min_h,
        first_violation: None,
    })
}

/// Roll the closed loop out `samples` times, drawing every transition
/// from the model's predictive distribution. A sample counts as safe when
/// every knot has `h > 0`.
///
/// Sample `i` uses its own RNG stream derived from `(seed, i)`, so the
/// result does not depend on how the work is split across threads.
pub fn mc_rollout(
    model: &EmbeddedModel,
    policy: &dyn Policy,
    x0: &DVector<f64>,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<SafetyReport> {
    if samples == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one sample"));
    }
    let start = model.initial_state(x0)?;
    let outcomes = (0..samples as u64)
        .into_par_iter()
        .map(|i| sample_rollout(model, policy, &start, horizon, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut histogram = vec![0; horizon + 1];
    let mut safe = 0usize;
    for o in &outcomes {
        match o.first_violation {
            Some(k) => histogram[k] += 1,
            None => safe += 1,
        }
    }
    let mut data = Data::new(outcomes.iter().map(|o| o.min_h).collect::<Vec<_>>());
    Ok(SafetyReport {
        fraction_safe: safe as f64 / samples as f64,
        samples,
        horizon,
        min_h_quantiles: [data.quantile(0.05), data.quantile(0.5), data.quantile(0.95)],
        first_violation_histogram: histogram,
    })
}
