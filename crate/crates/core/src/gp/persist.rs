use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Dataset, GpModel, KernelHyperparameters, MeanFunction, TargetMode, TrainReport};
use crate::error::{Error, Result};

/// Free-form provenance stored next to a persisted model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub target_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainReport>,
}

/// JSON form of a [`GpModel`]. Cholesky factors are not stored; they are
/// rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpModelFile {
    pub mode: TargetMode,
    pub mean_function: MeanFunction,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub hyperparameters: Vec<KernelHyperparameters>,
    pub offsets: Vec<f64>,
    #[serde(default)]
    pub metadata: ModelMetadata,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Relative Frobenius error of `L Lᵀ` against the jittered Gram matrix.
pub(crate) fn reconstruction_error(gp: &GpModel, d: usize) -> f64 {
    let l = gp.cholesky_factor(d);
    let mut k = gp.gram_matrix(d);
    for i in 0..k.nrows() {
        k[(i, i)] += gp.jitter(d);
    }
    (&l * l.transpose() - &k).norm() / k.norm()
}

impl GpModelFile {
    pub fn from_model(gp: &GpModel, metadata: ModelMetadata) -> Self {
        Self {
            mode: gp.mode(),
            mean_function: gp.mean_function(),
            inputs: rows(gp.dataset().inputs()),
            targets: rows(gp.dataset().targets()),
            hyperparameters: gp.hyperparameters(),
            offsets: gp.offsets(),
            metadata,
        }
    }

    /// Refit from the stored data and verify the factorization.
    pub fn to_model(&self) -> Result<GpModel> {
        let data = Dataset::from_rows(&self.inputs, &self.targets, self.mode)?;
        let gp = GpModel::fit_with(&data, &self.hyperparameters, self.mean_function)?;
        for (d, (stored, refit)) in self.offsets.iter().zip(gp.offsets()).enumerate() {
            if (stored - refit).abs() > 1e-9 * (1.0 + stored.abs()) {
                return Err(Error::Invariant(format!(
                    "stored offset {stored} for output {d} disagrees with refit {refit}"
                )));
            }
        }
        for d in 0..gp.output_dim() {
            let err = reconstruction_error(&gp, d);
            if !(err <= 1e-8) {
                return Err(Error::Invariant(format!(
                    "Cholesky reconstruction error {err:e} for output {d}"
                )));
            }
        }
        Ok(gp)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_rebuilds_identical_model() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0].sin(), x[1] + 2.0]).collect();
        let data = Dataset::from_rows(&xs, &ys, TargetMode::DiscreteDelta).unwrap();
        let h = KernelHyperparameters::new(1.3, vec![1.1, 0.7], 1e-3);
        let gp = GpModel::fit_with(&data, &[h.clone(), h], MeanFunction::EmpiricalConstant).unwrap();
        let file = GpModelFile::from_model(&gp, ModelMetadata::default());
        let back = GpModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(file, back);
        let gp2 = back.to_model().unwrap();
        let q = [0.3, 1.7];
        assert_eq!(gp.posterior(&q).unwrap(), gp2.posterior(&q).unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"mode":"discrete_delta","mean_function":"zero","inputs":[[0.0]],
            "targets":[[1.0]],"hyperparameters":[{"signal_variance":1.0,"lengthscales":[1.0],
            "noise_variance":0.1}],"offsets":[0.0],"extra":1}"#;
        assert!(GpModelFile::from_json(text).is_err());
    }
}
