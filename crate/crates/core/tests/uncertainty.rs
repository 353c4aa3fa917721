use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gpbas::barrier::{BarrierConfig, Constraint, ConstraintSet, EmbeddedModel, SafetyFunction};
use gpbas::control::{LinearFeedback, Policy};
use gpbas::dynamics::DynamicsModel;
use gpbas::environments::Environment;
use gpbas::gp::{Posterior, TargetMode};
use gpbas::uncertainty::{mc_rollout, propagate_belief, psd_repair, GaussianBelief};

/// `ẋ ~ N(A x + B u, diag(v))`, independent of the state.
struct LinearGaussian {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    var: DVector<f64>,
}

impl DynamicsModel for LinearGaussian {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn mode(&self) -> TargetMode {
        TargetMode::ContinuousDerivative
    }
    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> gpbas::Result<Posterior> {
        Ok(Posterior {
            mean: &self.a * x + &self.b * u,
            variance: self.var.clone(),
        })
    }
    fn mean_jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> gpbas::Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.a.clone(), self.b.clone()))
    }
}

fn model(a: DMatrix<f64>, var: DVector<f64>, safety: Arc<dyn SafetyFunction>, dt: f64) -> EmbeddedModel {
    let n = a.nrows();
    let dynamics = LinearGaussian {
        a,
        b: DMatrix::from_element(n, 1, 1.0),
        var,
    };
    EmbeddedModel::new(Arc::new(dynamics), safety, BarrierConfig::default(), dt).unwrap()
}

#[test]
fn linear_gaussian_propagation_is_exact() {
    let a = DMatrix::from_row_slice(2, 2, &[0.1, -0.4, 0.3, -0.2]);
    let var = DVector::from_vec(vec![0.5, 0.2]);
    let dt = 0.1;
    let em = model(a.clone(), var.clone(), Arc::new(ConstraintSet::empty(2)), dt);
    let cov0 = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
    let mut belief = GaussianBelief::new(DVector::from_vec(vec![1.0, -1.0]), cov0.clone()).unwrap();
    let f = DMatrix::identity(2, 2) + &a * dt;
    let q = DMatrix::from_diagonal(&(var * (dt * dt)));
    let u = DVector::from_element(1, 0.3);
    let mut mean = belief.mean.clone();
    let mut cov = cov0;
    for _ in 0..10 {
        belief = propagate_belief(&belief, &u, &em, None).unwrap();
        mean = &f * &mean + DVector::from_element(2, 0.3 * dt);
        cov = &f * &cov * f.transpose() + &q;
    }
    assert!((belief.mean - mean).amax() < 1e-12);
    assert!((belief.cov - cov).amax() < 1e-12);
}

#[test]
fn barrier_block_is_pushed_variance() {
    let safety: Arc<dyn SafetyFunction> = Arc::new(ConstraintSet::new(2, &[Constraint::circle(vec![2.0, 0.0], 0.5)]).unwrap());
    let var = DVector::from_vec(vec![0.4, 0.9]);
    let dt = 0.05;
    let em = model(DMatrix::zeros(2, 2), var.clone(), safety, dt);
    let s = em.initial_state(&DVector::from_vec(vec![0.5, 0.3])).unwrap();
    let u = DVector::from_element(1, 1.0);
    let out = propagate_belief(&GaussianBelief::point(s.to_vector()), &u, &em, None).unwrap();
    let x_next = em.mean_next(&s.x, &u).unwrap();
    let bx = em.barrier().barrier_jacobian(&x_next).unwrap();
    let want = &bx * DMatrix::from_diagonal(&(var * (dt * dt))) * bx.transpose();
    assert!((out.cov.view((2, 2), (1, 1)) - &want).amax() < 1e-12 * want.amax().max(1.0));
}

#[test]
fn scalar_belief_matches_sampling() {
    let (a, v, dt, steps) = (-0.5, 0.8, 0.1, 20);
    let em = model(DMatrix::from_element(1, 1, a), DVector::from_element(1, v), Arc::new(ConstraintSet::empty(1)), dt);
    let u = DVector::from_element(1, 0.2);
    let mut belief = GaussianBelief::point(DVector::from_element(1, 1.0));
    for _ in 0..steps {
        belief = propagate_belief(&belief, &u, &em, None).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = 50_000;
    let finals: Vec<f64> = (0..samples)
        .map(|_| {
            let mut x = 1.0;
            for _ in 0..steps {
                let e: f64 = rng.sample(StandardNormal);
                x += dt * (a * x + 0.2) + dt * v.sqrt() * e;
            }
            x
        })
        .collect();
    let n = samples as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let s2 = belief.cov[(0, 0)];
    assert!((mean - belief.mean[0]).abs() < 4.0 * (s2 / n).sqrt());
    assert!((var - s2).abs() < 4.0 * s2 * (2.0 / n).sqrt());
}

#[test]
fn belief_validation_and_repair() {
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(GaussianBelief::new(DVector::zeros(2), asym).is_err());
    assert!(GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(3, 3)).is_err());
    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let fixed = psd_repair(&indefinite);
    assert!(fixed.clone().symmetric_eigenvalues().min() >= -1e-12);
    // The positive eigenpair (3, [1,1]/√2) survives.
    assert!((fixed[(0, 1)] - 1.5).abs() < 1e-12);
}

fn linear_lqr_policy(env: &Environment, em: &EmbeddedModel) -> LinearFeedback {
    let cost = env.cost(em.barrier_dim(), None).unwrap();
    let goal = env.goal();
    let g = gpbas::control::gpbas_lqr(em, &cost, &goal, &env.u_eq(), env.discretization()).unwrap();
    LinearFeedback {
        gain: g.k,
        target: em.initial_state(&goal).unwrap().to_vector(),
        u_eq: env.u_eq(),
    }
}

#[test]
fn zero_variance_monte_carlo_is_always_safe() {
    let env = Environment::linear();
    let em = EmbeddedModel::new(env.true_model(), env.safety(), env.barrier_config(0.0), env.dt()).unwrap();
    let policy = linear_lqr_policy(&env, &em);
    let r = mc_rollout(&em, &policy, &env.x0(), 200, 50, 3).unwrap();
    assert_eq!(r.fraction_safe, 1.0);
    assert_eq!(r.standard_error(), 0.0);
    assert_eq!(r.confidence_interval(), (1.0, 1.0));
    assert!(r.first_violation_histogram.iter().all(|&c| c == 0));
    assert_eq!(r.min_h_quantiles[0], r.min_h_quantiles[2]);
    assert!(mc_rollout(&em, &policy, &env.x0(), 200, 0, 3).is_err());
}

#[test]
fn monte_carlo_is_seed_deterministic_and_counts_add_up() {
    // A noisy model that drifts through an obstacle sometimes.
    let safety: Arc<dyn SafetyFunction> = Arc::new(ConstraintSet::new(1, &[Constraint::HalfSpace {
        normal: vec![-1.0],
        offset: -1.0,
        indices: vec![0],
    }]).unwrap());
    let em = model(DMatrix::zeros(1, 1), DVector::from_element(1, 4.0), safety, 0.1);
    struct Zero;
    impl Policy for Zero {
        fn control(&self, _k: usize, _s: &gpbas::barrier::EmbeddedState) -> DVector<f64> {
            DVector::zeros(1)
        }
    }
    let x0 = DVector::zeros(1);
    let a = mc_rollout(&em, &Zero, &x0, 40, 500, 11).unwrap();
    let b = mc_rollout(&em, &Zero, &x0, 40, 500, 11).unwrap();
    assert_eq!(a, b);
    let violations: usize = a.first_violation_histogram.iter().sum();
    let safe = (a.fraction_safe * 500.0).round() as usize;
    assert_eq!(violations + safe, 500);
    assert!(a.fraction_safe > 0.0 && a.fraction_safe < 1.0);
    assert_ne!(a, mc_rollout(&em, &Zero, &x0, 40, 500, 12).unwrap());
    let (lo, hi) = a.confidence_interval();
    assert!(lo < a.fraction_safe && a.fraction_safe < hi);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_grows_without_drift(v0 in 0.01f64..2.0, v1 in 0.01f64..2.0, c in 0.0f64..0.5, steps in 1usize..10) {
        let em = model(DMatrix::zeros(2, 2), DVector::from_vec(vec![v0, v1]), Arc::new(ConstraintSet::empty(2)), 0.1);
        let u = DVector::zeros(1);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, c, c, 1.0]);
        let mut b = GaussianBelief::new(DVector::zeros(2), cov).unwrap();
        for _ in 0..steps {
            let next = propagate_belief(&b, &u, &em, None).unwrap();
            let diff = &next.cov - &b.cov;
            prop_assert!(diff.symmetric_eigenvalues().min() >= -1e-12);
            b = next;
        }
    }
}
