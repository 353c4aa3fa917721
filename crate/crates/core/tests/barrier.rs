mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{fd_jacobian, rel_err, uniform};
use gpbas::barrier::{
    bas_upper_bound, quantile_phi, BarrierConfig, BarrierFunction, BarrierKind, BarrierSystem, Combine,
    Constraint, ConstraintSet, EmbeddedModel, EmbeddedState, SafetyFunction,
};
use gpbas::dynamics::{DynamicsModel, GpDynamics};
use gpbas::gp::{Dataset, GpModel, KernelHyperparameters, TargetMode};

fn two_obstacles() -> Arc<ConstraintSet> {
    Arc::new(
        ConstraintSet::new(
            2,
            &[Constraint::circle(vec![1.5, 1.0], 0.5), Constraint::circle(vec![-1.0, -1.5], 0.4)],
        )
        .unwrap(),
    )
}

fn safe_point(rng: &mut ChaCha8Rng, safety: &dyn SafetyFunction) -> DVector<f64> {
    loop {
        let x = uniform(rng, 2, -2.0, 2.0);
        if safety.min_h(&x) > 0.3 {
            return x;
        }
    }
}

fn config(rng: &mut ChaCha8Rng, combine: Combine) -> BarrierConfig {
    BarrierConfig {
        gamma: rng.random_range(0.1..2.0),
        discrete_gamma: rng.random_range(0.0..0.9),
        shift_point: Some(vec![0.0, 0.0]),
        combine,
        ..Default::default()
    }
}

#[test]
fn inverse_barrier_values() {
    let b = BarrierKind::Inverse;
    assert_eq!(b.value(0.5).unwrap(), 2.0);
    assert_eq!(b.inverse(2.0).unwrap(), 0.5);
    assert_eq!(b.derivative(0.5).unwrap(), -4.0);
    assert!(matches!(b.value(0.0), Err(gpbas::Error::BoundaryViolation { .. })));
    assert!(b.value(-1.0).is_err());
}

#[test]
fn quantile_phi_known_values() {
    assert!((quantile_phi(0.95).unwrap() - 1.644_853_626_951_472).abs() < 1e-9);
    assert!((quantile_phi(0.841_344_746_068_542_9).unwrap() - 1.0).abs() < 1e-9);
    assert!(quantile_phi(0.5).unwrap().abs() < 1e-12);
    assert!(quantile_phi(1.0).is_err());
}

#[test]
fn upper_bound_adds_scaled_deviation() {
    let mu = DVector::from_vec(vec![1.0, -2.0]);
    let s = DMatrix::from_row_slice(2, 2, &[4.0, 0.3, 0.3, 0.25]);
    let ub = bas_upper_bound(&mu, &s, 2.0).unwrap();
    assert_eq!(ub, DVector::from_vec(vec![5.0, -1.0]));
}

#[test]
fn composite_barrier_sums_terms() {
    let safety = two_obstacles();
    let x = DVector::from_vec(vec![0.0, 0.0]);
    let h = safety.eval(&x);
    let sum = BarrierSystem::new(safety.clone(), BarrierConfig::default()).unwrap();
    assert_eq!(sum.dim(), 1);
    assert!((sum.barrier(&x).unwrap()[0] - (1.0 / h[0] + 1.0 / h[1])).abs() < 1e-14);
    let per = BarrierSystem::new(
        safety,
        BarrierConfig {
            combine: Combine::PerConstraint,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(per.barrier(&x).unwrap().as_slice(), &[1.0 / h[0], 1.0 / h[1]]);
}

#[test]
fn shift_zeroes_barrier_state_at_shift_point() {
    let sys = BarrierSystem::new(
        two_obstacles(),
        BarrierConfig {
            shift_point: Some(vec![0.2, -0.1]),
            ..Default::default()
        },
    )
    .unwrap();
    let z = sys.consistent_z(&DVector::from_vec(vec![0.2, -0.1])).unwrap();
    assert!(z.amax() < 1e-15);
}

#[test]
fn dbas_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let safety = two_obstacles();
    let dynamics = common::random_gp_dynamics(&mut rng, 2, 1, 30);
    for i in 0..50 {
        let combine = if i % 2 == 0 { Combine::Sum } else { Combine::PerConstraint };
        let em = EmbeddedModel::new(dynamics.clone(), safety.clone(), config(&mut rng, combine), 0.05).unwrap();
        let sys = em.barrier();
        let x = safe_point(&mut rng, safety.as_ref());
        let u = uniform(&mut rng, 1, -1.0, 1.0);
        let w = sys.barrier(&x).unwrap() + uniform(&mut rng, sys.dim(), -0.1, 0.1);
        let x_next = em.mean_next(&x, &u).unwrap();
        let (fx, fu) = em.state_jacobians(&x, &u).unwrap();
        let (dx, dw, du) = sys.dbas_gradients(&x, &x_next, &fx, &fu).unwrap();

        let step = |x: &DVector<f64>, w: &DVector<f64>, u: &DVector<f64>| {
            sys.dbas_step(x, w, &em.mean_next(x, u).unwrap()).unwrap()
        };
        let h = 1e-6;
        assert!(rel_err(&dx, &fd_jacobian(|x| step(x, &w, &u), &x, h)) < 1e-4);
        // ∂w/∂w is -γ_d I and may be exactly zero, so compare absolutely.
        assert!((&dw - fd_jacobian(|w| step(&x, w, &u), &w, h)).amax() < 1e-8);
        assert!(rel_err(&du, &fd_jacobian(|u| step(&x, &w, u), &u, h)) < 1e-4);
    }
}

#[test]
fn step_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let safety = two_obstacles();
    let dynamics = common::random_gp_dynamics(&mut rng, 2, 1, 30);
    for _ in 0..50 {
        let em = EmbeddedModel::new(dynamics.clone(), safety.clone(), config(&mut rng, Combine::Sum), 0.05).unwrap();
        let x = safe_point(&mut rng, safety.as_ref());
        let s = EmbeddedState::new(x.clone(), em.barrier().consistent_z(&x).unwrap());
        let u = uniform(&mut rng, 1, -1.0, 1.0);
        let (_, jac) = em.step_with_jacobians(&s, &u, false).unwrap();
        let sv = s.to_vector();
        let fa = fd_jacobian(
            |v| em.embedded_step(&EmbeddedState::from_vector(v, 2), &u, false).unwrap().to_vector(),
            &sv,
            1e-6,
        );
        let fb = fd_jacobian(|u| em.embedded_step(&s, u, false).unwrap().to_vector(), &u, 1e-6);
        assert!(rel_err(&jac.a, &fa) < 1e-4);
        assert!(rel_err(&jac.b, &fb) < 1e-4);
    }
}

/// GP whose mean vanishes at `(x_eq, u_eq)`, so that point is an equilibrium.
fn gp_with_equilibrium(rng: &mut ChaCha8Rng, x_eq: &[f64], u_eq: f64) -> Arc<GpDynamics> {
    let mut inputs = vec![vec![x_eq[0], x_eq[1], u_eq]];
    let mut targets = vec![vec![0.0, 0.0]];
    for _ in 0..25 {
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        targets.push(vec![p[1] - 0.5 * p[0], (p[0] + p[2]).sin()]);
        inputs.push(p);
    }
    let data = Dataset::from_rows(&inputs, &targets, TargetMode::ContinuousDerivative).unwrap();
    let h = KernelHyperparameters::isotropic(1.0, 1.2, 3, 1e-10);
    Arc::new(GpDynamics::new(GpModel::fit(&data, &[h.clone(), h]).unwrap(), 2).unwrap())
}

#[test]
fn lqr_jacobians_match_finite_differences_at_equilibrium() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let safety = two_obstacles();
    for _ in 0..50 {
        let x_eq = safe_point(&mut rng, safety.as_ref());
        let u_eq = rng.random_range(-1.0..1.0);
        let dynamics = gp_with_equilibrium(&mut rng, x_eq.as_slice(), u_eq);
        let em = EmbeddedModel::new(dynamics.clone(), safety.clone(), config(&mut rng, Combine::Sum), 0.02).unwrap();
        let ue = DVector::from_element(1, u_eq);
        assert!(dynamics.mean(&x_eq, &ue).unwrap().amax() < 1e-5);
        let (a, b) = em.embedded_jacobians_lqr(&x_eq, &ue).unwrap();
        let s = EmbeddedState::new(x_eq.clone(), em.barrier().consistent_z(&x_eq).unwrap());
        let fa = fd_jacobian(
            |v| em.embedded_rhs(&EmbeddedState::from_vector(v, 2), &ue).unwrap(),
            &s.to_vector(),
            1e-6,
        );
        let fb = fd_jacobian(|u| em.embedded_rhs(&s, u).unwrap(), &ue, 1e-6);
        assert!(rel_err(&a, &fa) < 1e-4, "{a} vs {fa}");
        assert!(rel_err(&b, &fb) < 1e-4);
    }
}

#[test]
fn bounded_barrier_state_dominates_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let safety = two_obstacles();
    let dynamics = common::random_gp_dynamics(&mut rng, 2, 1, 20);
    for _ in 0..20 {
        let base = BarrierConfig {
            phi: rng.random_range(0.5..3.0),
            ..config(&mut rng, Combine::PerConstraint)
        };
        let em = EmbeddedModel::new(dynamics.clone(), safety.clone(), BarrierConfig { discrete_gamma: 0.0, ..base }, 0.05)
            .unwrap();
        let x0 = safe_point(&mut rng, safety.as_ref());
        let mut mean = em.initial_state(&x0).unwrap();
        let mut bounded = mean.clone();
        for _ in 0..30 {
            let u = uniform(&mut rng, 1, -0.5, 0.5);
            let (Ok(m), Ok(b)) = (em.embedded_step(&mean, &u, false), em.embedded_step(&bounded, &u, true)) else {
                break;
            };
            assert_eq!(m.x, b.x);
            assert!(b.z.iter().zip(m.z.iter()).all(|(b, m)| b >= m));
            mean = m;
            bounded = b;
        }
    }
}

#[test]
fn gp_bas_moments_match_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let safety = two_obstacles();
    let dynamics = common::random_gp_dynamics(&mut rng, 2, 1, 10);
    let em = EmbeddedModel::new(dynamics.clone(), safety.clone(), config(&mut rng, Combine::PerConstraint), 0.05).unwrap();
    let x = safe_point(&mut rng, safety.as_ref());
    let z = em.barrier().consistent_z(&x).unwrap();
    let u = DVector::from_element(1, 2.5);
    let (mu, sigma) = em.gp_bas_moments(&x, &z, &u).unwrap();
    let p = dynamics.predict(&x, &u).unwrap();
    let samples = 20_000;
    let draws: Vec<DVector<f64>> = (0..samples)
        .map(|_| {
            let f = DVector::from_fn(2, |i, _| p.mean[i] + p.variance[i].sqrt() * rng.sample::<f64, _>(StandardNormal));
            em.barrier().bas_rhs(&x, &z, &f).unwrap()
        })
        .collect();
    let n = samples as f64;
    let mean = draws.iter().fold(DVector::zeros(2), |a, d| a + d) / n;
    let cov = draws
        .iter()
        .fold(DMatrix::zeros(2, 2), |a, d| a + (d - &mean) * (d - &mean).transpose())
        / (n - 1.0);
    for i in 0..2 {
        assert!((mean[i] - mu[i]).abs() < 4.0 * (sigma[(i, i)] / n).sqrt() + 1e-12);
        for j in 0..2 {
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n).sqrt();
            assert!((cov[(i, j)] - sigma[(i, j)]).abs() < 4.0 * se + 1e-12);
        }
    }
}

#[test]
fn empty_constraint_set_has_no_barrier_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dynamics = common::random_gp_dynamics(&mut rng, 2, 1, 10);
    let em = EmbeddedModel::new(dynamics, Arc::new(ConstraintSet::empty(2)), BarrierConfig::default(), 0.1).unwrap();
    assert_eq!(em.barrier_dim(), 0);
    let s = em.initial_state(&DVector::from_vec(vec![0.3, 0.1])).unwrap();
    assert_eq!(em.embedded_step(&s, &DVector::zeros(1), true).unwrap().z.len(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn barrier_finite_and_positive_on_safe_set(x0 in -2.0f64..2.0, x1 in -2.0f64..2.0) {
        let safety = two_obstacles();
        let x = DVector::from_vec(vec![x0, x1]);
        let sys = BarrierSystem::new(safety.clone(), BarrierConfig { combine: Combine::PerConstraint, ..Default::default() }).unwrap();
        if safety.is_safe(&x) {
            let b = sys.barrier(&x).unwrap();
            prop_assert!(b.iter().all(|v| v.is_finite() && *v > 0.0));
        } else {
            prop_assert!(sys.barrier(&x).is_err());
        }
    }

    #[test]
    fn consistent_barrier_state_stays_consistent(
        a in prop::collection::vec(-2.0f64..2.0, 2),
        b in prop::collection::vec(-2.0f64..2.0, 2),
        g in 0.0f64..0.95,
    ) {
        let safety = two_obstacles();
        let (x, xn) = (DVector::from_vec(a), DVector::from_vec(b));
        prop_assume!(safety.is_safe(&x) && safety.is_safe(&xn));
        let sys = BarrierSystem::new(safety, BarrierConfig { discrete_gamma: g, ..Default::default() }).unwrap();
        let w = sys.dbas_step(&x, &sys.barrier(&x).unwrap(), &xn).unwrap();
        let want = sys.barrier(&xn).unwrap();
        prop_assert!((w - &want).amax() <= 1e-12 * want.amax().max(1.0));
    }
}
