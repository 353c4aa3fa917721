use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{Dataset, GpModel, KernelHyperparameters, MeanFunction};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct HyperoptOptions {
    pub max_iters: usize,
    /// Stop once an accepted step improves the objective by less than this.
    pub tolerance: f64,
    pub mean_function: MeanFunction,
    /// Lower bound on σ_n², keeps the Gram matrix away from singularity.
    pub min_noise_variance: f64,
    pub lengthscale_bounds: (f64, f64),
}

impl Default for HyperoptOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tolerance: 1e-6,
            mean_function: MeanFunction::Zero,
            min_noise_variance: 1e-10,
            lengthscale_bounds: (1e-3, 1e4),
        }
    }
}

/// Accepted objective values, one trace per output dimension.
#[derive(Clone, Debug, Default)]
pub struct HyperoptTrace {
    pub objective: Vec<Vec<f64>>,
}

fn clamp_log_params(p: &mut DVector<f64>, opts: &HyperoptOptions) {
    let d = p.len() - 2;
    let (lo, hi) = (opts.lengthscale_bounds.0.ln(), opts.lengthscale_bounds.1.ln());
    for i in 0..d {
        p[1 + i] = p[1 + i].clamp(lo, hi);
    }
    p[0] = p[0].clamp(-30.0, 30.0);
    p[d + 1] = p[d + 1].clamp(opts.min_noise_variance.ln(), 30.0);
}

fn objective(
    data: &Dataset,
    p: &DVector<f64>,
    mean_function: MeanFunction,
) -> Result<(f64, DVector<f64>)> {
    let h = KernelHyperparameters::from_log_params(p);
    let gp = GpModel::fit_with(data, std::slice::from_ref(&h), mean_function)?;
    let (v, g) = gp.output_log_marginal_likelihood(0);
    if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite marginal likelihood".into()));
    }
    Ok((v, g))
}

/// Gradient ascent in log space with an adaptive step measured as the
/// largest allowed change of any log-parameter.
fn optimize_output(
    data: &Dataset,
    init: &KernelHyperparameters,
    opts: &HyperoptOptions,
) -> Result<(KernelHyperparameters, Vec<f64>)> {
    let mut p = init.to_log_params();
    clamp_log_params(&mut p, opts);
    let (mut value, mut grad) = objective(data, &p, opts.mean_function)?;
    let mut trace = vec![value];
    let mut step = 0.5;
    for _ in 0..opts.max_iters {
        let gmax = grad.amax();
        if gmax == 0.0 {
            break;
        }
        let mut accepted = None;
        while step > 1e-10 {
            let mut cand = &p + &grad * (step / gmax);
            clamp_log_params(&mut cand, opts);
            match objective(data, &cand, opts.mean_function) {
                Ok((v, g)) if v > value => {
                    accepted = Some((cand, v, g));
                    break;
                }
                // A failed fit is treated like a worse objective.
                _ => step *= 0.5,
            }
        }
        let Some((cand, v, g)) = accepted else {
            break;
        };
        let improvement = v - value;
        p = cand;
        value = v;
        grad = g;
        trace.push(value);
        step = (step * 2.0).min(2.0);
        if improvement < opts.tolerance {
            break;
        }
    }
    Ok((KernelHyperparameters::from_log_params(&p), trace))
}

/// Maximize the log marginal likelihood independently for each output.
pub fn optimize_hyperparameters(
    data: &Dataset,
    init: &[KernelHyperparameters],
    opts: &HyperoptOptions,
) -> Result<(Vec<KernelHyperparameters>, HyperoptTrace)> {
    if opts.max_iters == 0 {
        return Err(Error::invalid("hyperparameter optimization needs at least one iteration"));
    }
    if init.len() != data.output_dim() {
        return Err(Error::invalid(format!(
            "need {} initial hyperparameter sets, got {}",
            data.output_dim(),
            init.len()
        )));
    }
    for h in init {
        h.validate(data.input_dim())?;
    }
    let results = (0..data.output_dim())
        .into_par_iter()
        .map(|d| {
            let single = Dataset::new(
                data.inputs().clone(),
                DMatrix::from_column_slice(data.len(), 1, data.targets().column(d).as_slice()),
                data.mode(),
            )?;
            optimize_output(&single, &init[d], opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let (hyper, objective) = results.into_iter().unzip();
    Ok((hyper, HyperoptTrace { objective }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::TargetMode;

    #[test]
    fn zero_iterations_rejected() {
        let d = Dataset::from_rows(&[vec![0.0]], &[vec![1.0]], TargetMode::ContinuousDerivative)
            .unwrap();
        let opts = HyperoptOptions {
            max_iters: 0,
            ..Default::default()
        };
        let h = KernelHyperparameters::isotropic(1.0, 1.0, 1, 0.1);
        assert!(optimize_hyperparameters(&d, &[h], &opts).is_err());
    }

    #[test]
    fn trace_is_monotone_and_final_not_worse() {
        let xs: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64 * 0.4]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(x[0]).sin()]).collect();
        let d = Dataset::from_rows(&xs, &ys, TargetMode::ContinuousDerivative).unwrap();
        let init = KernelHyperparameters::isotropic(0.2, 5.0, 1, 0.05);
        let (h, trace) =
            optimize_hyperparameters(&d, std::slice::from_ref(&init), &HyperoptOptions::default()).unwrap();
        let t = &trace.objective[0];
        assert!(t.windows(2).all(|w| w[1] >= w[0]));
        let before = GpModel::fit(&d, &[init]).unwrap().log_marginal_likelihood().0;
        let after = GpModel::fit(&d, &h).unwrap().log_marginal_likelihood().0;
        assert!(after >= before);
        assert!(h[0].lengthscales[0] > 0.0 && h[0].noise_variance > 0.0);
    }
}
