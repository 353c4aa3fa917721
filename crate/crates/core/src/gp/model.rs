use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, KernelHyperparameters, TargetMode};
use crate::error::{Error, Result};

/// Relative jitter levels (times `trace(K)/N`) tried before giving up.
pub(crate) const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Prior mean handling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFunction {
    /// Zero-mean prior on the raw targets.
    #[default]
    Zero,
    /// Targets are centered by their empirical mean before fitting and the
    /// offset is added back at prediction (a constant prior mean).
    EmpiricalConstant,
}

/// Fitted state for one output dimension.
#[derive(Clone, Debug)]
pub(crate) struct OutputGp {
    pub(crate) hyper: KernelHyperparameters,
    pub(crate) offset: f64,
    /// Lower Cholesky factor of `K + (σ_n² + jitter) I`.
    pub(crate) chol: Cholesky<f64, Dyn>,
    /// `(K + σ_n² I)⁻¹ y`
    pub(crate) alpha: DVector<f64>,
    /// Centered targets.
    pub(crate) y: DVector<f64>,
    pub(crate) jitter: f64,
}

/// Posterior at one query point, per output dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

/// Independent exact GPs, one per output dimension, over a shared dataset.
#[derive(Clone, Debug)]
pub struct GpModel {
    dataset: Dataset,
    mean_function: MeanFunction,
    /// Training inputs as columns (D × N) so each point is contiguous.
    points: DMatrix<f64>,
    outputs: Vec<OutputGp>,
}

fn gram(points: &DMatrix<f64>, hyper: &KernelHyperparameters) -> DMatrix<f64> {
    let n = points.ncols();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        let pj = points.column(j);
        let pj = pj.as_slice();
        k[(j, j)] = hyper.signal_variance;
        for i in (j + 1)..n {
            let v = hyper.k(points.column(i).as_slice(), pj);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn fit_output(
    points: &DMatrix<f64>,
    targets: DVector<f64>,
    hyper: &KernelHyperparameters,
    mean_function: MeanFunction,
) -> Result<OutputGp> {
    let n = points.ncols();
    let offset = match mean_function {
        MeanFunction::Zero => 0.0,
        MeanFunction::EmpiricalConstant => targets.mean(),
    };
    let y = targets.add_scalar(-offset);
    let kf = gram(points, hyper);
    let scale = kf.trace() / n as f64;
    let mut tried = Vec::with_capacity(JITTER_LADDER.len());
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        tried.push(jitter);
        let mut k = kf.clone();
        for i in 0..n {
            k[(i, i)] += hyper.noise_variance + jitter;
        }
        let Some(chol) = Cholesky::new(k) else {
            continue;
        };
        if chol.l_dirty().diagonal().iter().any(|d| !d.is_finite() || *d <= 0.0) {
            continue;
        }
        let alpha = chol.solve(&y);
        if alpha.iter().any(|a| !a.is_finite()) {
            continue;
        }
        if jitter > 0.0 {
            log::debug!("gp fit needed jitter {jitter:e}");
        }
        return Ok(OutputGp {
            hyper: hyper.clone(),
            offset,
            chol,
            alpha,
            y,
            jitter,
        });
    }
    Err(Error::NotPositiveDefinite { jitter_tried: tried })
}

impl GpModel {
    /// Fit with a zero prior mean.
    pub fn fit(data: &Dataset, hyper: &[KernelHyperparameters]) -> Result<Self> {
        Self::fit_with(data, hyper, MeanFunction::Zero)
    }

    pub fn fit_with(
        data: &Dataset,
        hyper: &[KernelHyperparameters],
        mean_function: MeanFunction,
    ) -> Result<Self> {
        if hyper.len() != data.output_dim() {
            return Err(Error::invalid(format!(
                "need {} hyperparameter sets, got {}",
                data.output_dim(),
                hyper.len()
            )));
        }
        for h in hyper {
            h.validate(data.input_dim())?;
        }
        let points = data.inputs().transpose();
        let outputs = hyper
            .par_iter()
            .enumerate()
            .map(|(d, h)| {
                fit_output(&points, data.targets().column(d).into_owned(), h, mean_function)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset: data.clone(),
            mean_function,
            points,
            outputs,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn mode(&self) -> TargetMode {
        self.dataset.mode()
    }

    pub fn mean_function(&self) -> MeanFunction {
        self.mean_function
    }

    pub fn input_dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hyperparameters(&self) -> Vec<KernelHyperparameters> {
        self.outputs.iter().map(|o| o.hyper.clone()).collect()
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.offset).collect()
    }

    /// Lower Cholesky factor for output `d`.
    pub fn cholesky_factor(&self, d: usize) -> DMatrix<f64> {
        self.outputs[d].chol.l()
    }

    /// Weight vector `(K + σ_n² I)⁻¹ (F_d - offset_d)` for output `d`.
    pub fn alpha(&self, d: usize) -> &DVector<f64> {
        &self.outputs[d].alpha
    }

    /// Jitter actually added to the diagonal of output `d`.
    pub fn jitter(&self, d: usize) -> f64 {
        self.outputs[d].jitter
    }

    /// The regularized Gram matrix `K + σ_n² I` for output `d` (without jitter).
    pub fn gram_matrix(&self, d: usize) -> DMatrix<f64> {
        let h = &self.outputs[d].hyper;
        let mut k = gram(&self.points, h);
        for i in 0..self.len() {
            k[(i, i)] += h.noise_variance;
        }
        k
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, model expects {}",
                query.len(),
                self.input_dim()
            )));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query must be finite"));
        }
        Ok(())
    }

    fn cross_kernel(&self, out: &OutputGp, query: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.points
                .column_iter()
                .map(|p| out.hyper.k(query, p.as_slice())),
        )
    }

    /// Posterior mean only.
    pub fn mean(&self, query: &[f64]) -> Result<DVector<f64>> {
        self.check_query(query)?;
        Ok(DVector::from_iterator(
            self.output_dim(),
            self.outputs
                .iter()
                .map(|o| self.cross_kernel(o, query).dot(&o.alpha) + o.offset),
        ))
    }

    /// Posterior mean and (latent) variance per output dimension.
    pub fn posterior(&self, query: &[f64]) -> Result<Posterior> {
        self.check_query(query)?;
        let mut mean = DVector::zeros(self.output_dim());
        let mut variance = DVector::zeros(self.output_dim());
        for (d, o) in self.outputs.iter().enumerate() {
            let ks = self.cross_kernel(o, query);
            mean[d] = ks.dot(&o.alpha) + o.offset;
            let v = o.chol.l_dirty().solve_lower_triangular(&ks).ok_or_else(|| {
                Error::Numerical("triangular solve failed in posterior variance".into())
            })?;
            let var = o.hyper.signal_variance - v.norm_squared();
            if var < 0.0 {
                if var < -1e-9 * o.hyper.signal_variance {
                    log::warn!("clamping negative posterior variance {var:e} (output {d})");
                } else {
                    log::trace!("clamping round-off variance {var:e} (output {d})");
                }
            }
            variance[d] = var.max(0.0);
        }
        Ok(Posterior { mean, variance })
    }

    /// Jacobian of the posterior mean with respect to the query,
    /// `output_dim × input_dim`.
    pub fn mean_gradient(&self, query: &[f64]) -> Result<DMatrix<f64>> {
        self.check_query(query)?;
        let dim = self.input_dim();
        let mut grad = DMatrix::zeros(self.output_dim(), dim);
        for (d, o) in self.outputs.iter().enumerate() {
            let inv_l2: Vec<f64> = o.hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
            for (i, p) in self.points.column_iter().enumerate() {
                let w = o.alpha[i] * o.hyper.k(query, p.as_slice());
                for j in 0..dim {
                    grad[(d, j)] -= w * (query[j] - p[j]) * inv_l2[j];
                }
            }
        }
        Ok(grad)
    }

    /// Log marginal likelihood of the (centered) targets summed over output
    /// dimensions, with its gradient over the concatenated per-output log
    /// parameters `[log σ_f², log ℓ, log σ_n²]`.
    pub fn log_marginal_likelihood(&self) -> (f64, DVector<f64>) {
        let p = self.input_dim() + 2;
        let mut value = 0.0;
        let mut grad = DVector::zeros(p * self.output_dim());
        for d in 0..self.output_dim() {
            let (v, g) = self.output_log_marginal_likelihood(d);
            value += v;
            grad.rows_mut(d * p, p).copy_from(&g);
        }
        (value, grad)
    }

    pub(crate) fn output_log_marginal_likelihood(&self, d: usize) -> (f64, DVector<f64>) {
        let o = &self.outputs[d];
        let n = self.len();
        let dim = self.input_dim();
        let log_det_half: f64 = o.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let value = -0.5 * o.y.dot(&o.alpha) - log_det_half - 0.5 * n as f64 * (2.0 * PI).ln();

        // dL/dθ = ½ tr((ααᵀ - K⁻¹) ∂K/∂θ)
        let mut w = o.chol.inverse();
        w.ger(-1.0, &o.alpha, &o.alpha, 1.0);
        // w now holds K⁻¹ - ααᵀ; the gradient uses its negation.
        let mut grad = DVector::zeros(dim + 2);
        let inv_l2: Vec<f64> = o.hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        for j in 0..n {
            let pj = self.points.column(j);
            for i in 0..n {
                let pi = self.points.column(i);
                let kf = if i == j {
                    o.hyper.signal_variance
                } else {
                    o.hyper.k(pi.as_slice(), pj.as_slice())
                };
                let a = -w[(i, j)];
                grad[0] += a * kf;
                if i != j {
                    for k in 0..dim {
                        let diff = pi[k] - pj[k];
                        grad[1 + k] += a * kf * diff * diff * inv_l2[k];
                    }
                }
            }
            grad[dim + 1] += -w[(j, j)] * o.hyper.noise_variance;
        }
        grad *= 0.5;
        (value, grad)
    }
}
