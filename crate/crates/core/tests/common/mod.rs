#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use gpbas::dynamics::GpDynamics;
use gpbas::gp::{Dataset, GpModel, KernelHyperparameters, TargetMode};

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        j.set_column(i, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// Frobenius error of `a` relative to `b`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// A GP over `(x, u)` fitted to a smooth nonlinear map, in continuous mode.
pub fn random_gp_dynamics(rng: &mut ChaCha8Rng, n: usize, m: usize, points: usize) -> Arc<GpDynamics> {
    let d = n + m;
    let inputs: DMatrix<f64> = DMatrix::from_fn(points, d, |_, _| rng.random_range(-2.0..2.0));
    let w: DMatrix<f64> = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let targets = DMatrix::from_fn(points, n, |i, k| (w.row(k) * inputs.row(i).transpose())[(0, 0)].sin());
    let data = Dataset::new(inputs, targets, TargetMode::ContinuousDerivative).unwrap();
    let hyper: Vec<_> = (0..n)
        .map(|_| KernelHyperparameters::isotropic(rng.random_range(0.5..2.0), rng.random_range(0.8..2.0), d, 1e-3))
        .collect();
    let gp = GpModel::fit(&data, &hyper).unwrap();
    Arc::new(GpDynamics::new(gp, n).unwrap())
}
