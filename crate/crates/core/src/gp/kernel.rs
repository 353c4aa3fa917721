use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential ARD kernel parameters for one output dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparameters {
    /// σ_f²
    pub signal_variance: f64,
    /// One lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    /// σ_n²
    pub noise_variance: f64,
}

impl KernelHyperparameters {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Self {
        Self {
            signal_variance,
            lengthscales,
            noise_variance,
        }
    }

    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize, noise_variance: f64) -> Self {
        Self::new(signal_variance, vec![lengthscale; dim], noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Signal variance and lengthscales must be positive. A zero noise
    /// variance is accepted; the fit falls back on jitter in that case.
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.lengthscales.len() != input_dim {
            return Err(Error::invalid(format!(
                "expected {input_dim} lengthscales, got {}",
                self.lengthscales.len()
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_variance) || !self.lengthscales.iter().all(|&l| positive(l)) {
            return Err(Error::invalid("signal variance and lengthscales must be positive"));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::invalid("noise variance must be nonnegative"));
        }
        Ok(())
    }

    /// `[log σ_f², log ℓ_1 .. log ℓ_D, log σ_n²]`
    pub fn to_log_params(&self) -> DVector<f64> {
        let d = self.dim();
        let mut p = DVector::zeros(d + 2);
        p[0] = self.signal_variance.ln();
        for (i, l) in self.lengthscales.iter().enumerate() {
            p[1 + i] = l.ln();
        }
        p[d + 1] = self.noise_variance.ln();
        p
    }

    pub fn from_log_params(p: &DVector<f64>) -> Self {
        let d = p.len() - 2;
        Self {
            signal_variance: p[0].exp(),
            lengthscales: (0..d).map(|i| p[1 + i].exp()).collect(),
            noise_variance: p[d + 1].exp(),
        }
    }

    /// Kernel value without argument checks. `a` and `b` must both have
    /// `self.dim()` entries.
    #[inline]
    pub(crate) fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((ai, bi), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let r = (ai - bi) / l;
            s += r * r;
        }
        self.signal_variance * (-0.5 * s).exp()
    }
}

/// `σ_f² exp(-½ Σ_d (a_d - b_d)² / ℓ_d²)`
pub fn kernel_eval(a: &[f64], b: &[f64], hyper: &KernelHyperparameters) -> Result<f64> {
    hyper.validate(hyper.dim())?;
    if a.len() != hyper.dim() || b.len() != hyper.dim() {
        return Err(Error::invalid(format!(
            "kernel arguments must have dimension {}",
            hyper.dim()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("kernel arguments must be finite"));
    }
    Ok(hyper.k(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_values() {
        let h = KernelHyperparameters::isotropic(1.0, 1.0, 2, 0.0);
        assert_eq!(kernel_eval(&[0.0, 0.0], &[0.0, 0.0], &h).unwrap(), 1.0);
        let v = kernel_eval(&[1.0, 0.0], &[0.0, 0.0], &h).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);

        let h = KernelHyperparameters::new(2.0, vec![1.0, 2.0], 0.0);
        let v = kernel_eval(&[1.0, 2.0], &[0.0, 0.0], &h).unwrap();
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.73576).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_arguments() {
        let h = KernelHyperparameters::isotropic(1.0, 1.0, 2, 0.0);
        assert!(kernel_eval(&[f64::NAN, 0.0], &[0.0, 0.0], &h).is_err());
        assert!(kernel_eval(&[0.0], &[0.0, 0.0], &h).is_err());
        let bad = KernelHyperparameters::isotropic(-1.0, 1.0, 2, 0.0);
        assert!(kernel_eval(&[0.0, 0.0], &[0.0, 0.0], &bad).is_err());
    }

    #[test]
    fn log_params_round_trip() {
        let h = KernelHyperparameters::new(2.5, vec![0.3, 4.0, 1.0], 1e-3);
        let back = KernelHyperparameters::from_log_params(&h.to_log_params());
        assert!((back.signal_variance - 2.5).abs() < 1e-12);
        assert!((back.noise_variance - 1e-3).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in proptest::collection::vec(-5.0..5.0f64, 3),
            b in proptest::collection::vec(-5.0..5.0f64, 3),
            sf in 0.1..10.0f64,
            l in proptest::collection::vec(0.1..5.0f64, 3),
        ) {
            let h = KernelHyperparameters::new(sf, l, 0.0);
            let ab = kernel_eval(&a, &b, &h).unwrap();
            let ba = kernel_eval(&b, &a, &h).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0 && ab <= sf);
            prop_assert_eq!(kernel_eval(&a, &a, &h).unwrap(), sf);
        }
    }
}
