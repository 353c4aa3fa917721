//! Exact Gaussian process regression with a squared-exponential ARD kernel.
//!
//! One independent GP is fitted per output dimension. Each output keeps its
//! own hyperparameters, Cholesky factor and weight vector.

mod hyperopt;
mod kernel;
mod model;
mod persist;
mod train;

pub use hyperopt::{optimize_hyperparameters, HyperoptOptions, HyperoptTrace};
pub use kernel::{kernel_eval, KernelHyperparameters};
pub use model::{GpModel, MeanFunction, Posterior};
pub use persist::{GpModelFile, ModelMetadata};
pub use train::{default_hyperparameters, train_gp, TrainOptions, TrainReport};

use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// What the dataset targets represent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Rows of `targets` are state derivatives `f(x, u)`.
    ContinuousDerivative,
    /// Rows of `targets` are next-state deltas `x_{k+1} - x_k`.
    DiscreteDelta,
}

/// Training pairs `(x̂_i, f_i)` with `x̂ = (x, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    mode: TargetMode,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>, mode: TargetMode) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::invalid("dataset must contain at least one row"));
        }
        if inputs.nrows() != targets.nrows() {
            return Err(Error::invalid(format!(
                "input rows ({}) and target rows ({}) differ",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if inputs.ncols() == 0 || targets.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one input and one target column"));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(Self {
            inputs,
            targets,
            mode,
        })
    }

    /// Build from row slices.
    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>], mode: TargetMode) -> Result<Self> {
        let to_matrix = |rows: &[Vec<f64>], what: &str| -> Result<DMatrix<f64>> {
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::invalid(format!("ragged {what} rows")));
            }
            Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
        };
        Self::new(to_matrix(inputs, "input")?, to_matrix(targets, "target")?, mode)
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn mode(&self) -> TargetMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    /// Keep only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.len()) {
            return Err(Error::invalid("row index out of range"));
        }
        Self::new(
            self.inputs.select_rows(rows),
            self.targets.select_rows(rows),
            self.mode,
        )
    }

    /// Uniform random subset of at most `max_rows` rows, original order kept.
    pub fn subsample(&self, max_rows: usize, seed: u64) -> Result<Self> {
        if max_rows >= self.len() {
            return Ok(self.clone());
        }
        if max_rows == 0 {
            return Err(Error::invalid("subsample size must be positive"));
        }
        let mut rng = rng::stream(seed, Stream::Subsample);
        let mut rows = index::sample(&mut rng, self.len(), max_rows).into_vec();
        rows.sort_unstable();
        self.select_rows(&rows)
    }

    /// Random train/validation split. `validation_fraction` of the rows
    /// (at least one, when there are two or more rows) go to validation.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Self, Option<Self>)> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::invalid("validation fraction must lie in [0, 1)"));
        }
        let n_val = ((self.len() as f64) * validation_fraction).round() as usize;
        if n_val == 0 || self.len() < 2 {
            return Ok((self.clone(), None));
        }
        let n_val = n_val.min(self.len() - 1);
        let mut rng = rng::stream(seed, Stream::Split);
        let perm = index::sample(&mut rng, self.len(), self.len()).into_vec();
        let mut val: Vec<usize> = perm[..n_val].to_vec();
        let mut train: Vec<usize> = perm[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok((self.select_rows(&train)?, Some(self.select_rows(&val)?)))
    }
}
