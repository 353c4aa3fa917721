use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{optimize_hyperparameters, Dataset, GpModel, HyperoptOptions, KernelHyperparameters, MeanFunction};
use crate::error::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub optimizer_iters: usize,
    pub mean_function: MeanFunction,
    /// Run hyperparameter search on at most this many training rows.
    pub hyperopt_subsample: Option<usize>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer_iters: 200,
            mean_function: MeanFunction::EmpiricalConstant,
            hyperopt_subsample: None,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_rows: usize,
    pub validation_rows: usize,
    /// Per-output RMSE of the train-split model on its own training rows.
    pub train_rmse: Vec<f64>,
    /// Per-output RMSE of the train-split model on the held-out rows.
    pub validation_rmse: Option<Vec<f64>>,
    /// Per-output standard deviation of the held-out targets.
    pub validation_target_std: Option<Vec<f64>>,
    pub log_marginal_likelihood: f64,
}

fn column_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Data-driven starting point: σ_f² from the target spread, ℓ from the input
/// spread, σ_n² a small fraction of σ_f².
pub fn default_hyperparameters(data: &Dataset) -> Vec<KernelHyperparameters> {
    let lengthscales: Vec<f64> = (0..data.input_dim())
        .map(|j| column_std(data.inputs().column(j).iter().copied()).max(1e-3))
        .collect();
    (0..data.output_dim())
        .map(|d| {
            let sf = column_std(data.targets().column(d).iter().copied()).powi(2).max(1e-6);
            KernelHyperparameters::new(sf, lengthscales.clone(), 1e-4 * sf)
        })
        .collect()
}

fn rmse(gp: &GpModel, data: &Dataset) -> Result<Vec<f64>> {
    let mut sq = DVector::zeros(data.output_dim());
    for i in 0..data.len() {
        let q: Vec<f64> = data.inputs().row(i).iter().copied().collect();
        let m = gp.mean(&q)?;
        for d in 0..data.output_dim() {
            sq[d] += (m[d] - data.targets()[(i, d)]).powi(2);
        }
    }
    Ok(sq.iter().map(|s: &f64| (s / data.len() as f64).sqrt()).collect())
}

/// Split, optimize hyperparameters on the training split, score on the
/// validation split, then refit on every row with the optimized values.
pub fn train_gp(data: &Dataset, opts: &TrainOptions) -> Result<(GpModel, TrainReport)> {
    let (train, val) = data.split(opts.validation_fraction, opts.seed)?;
    let search = match opts.hyperopt_subsample {
        Some(n) => train.subsample(n, opts.seed)?,
        None => train.clone(),
    };
    let init = default_hyperparameters(&search);
    let hyper = if opts.optimizer_iters > 0 {
        let hopts = HyperoptOptions {
            max_iters: opts.optimizer_iters,
            mean_function: opts.mean_function,
            ..Default::default()
        };
        optimize_hyperparameters(&search, &init, &hopts)?.0
    } else {
        init
    };
    let split_model = GpModel::fit_with(&train, &hyper, opts.mean_function)?;
    let train_rmse = rmse(&split_model, &train)?;
    let (validation_rmse, validation_target_std) = match &val {
        Some(v) => (
            Some(rmse(&split_model, v)?),
            Some(
                (0..v.output_dim())
                    .map(|d| column_std(v.targets().column(d).iter().copied()))
                    .collect(),
            ),
        ),
        None => (None, None),
    };
    let model = GpModel::fit_with(data, &hyper, opts.mean_function)?;
    let report = TrainReport {
        train_rows: train.len(),
        validation_rows: val.as_ref().map_or(0, Dataset::len),
        train_rmse,
        validation_rmse,
        validation_target_std,
        log_marginal_likelihood: model.log_marginal_likelihood().0,
    };
    Ok((model, report))
}
