use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tallscore::compose::{check_lambda_spd, compose_fnpse, PrecisionBundle};
use tallscore::metrics::{random_projections, sliced_wasserstein_with};
use tallscore::rng::aux_rng;
use tallscore::schedule::DiffusionSchedule;
use tallscore::score::{jacobian_fd, perturb, GaussianPosteriorScore, NoiseModel, Perturber, ScoreField};
use tallscore::tasks::GaussianTask;

fn rows(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..12).prop_flat_map(move |n| {
        proptest::collection::vec(-3.0f64..3.0, n * m).prop_map(move |v| DMatrix::from_row_slice(n, m, &v))
    })
}

fn sets(m: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (rows(m), rows(m), rows(m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sliced_wasserstein_is_a_metric_on_fixed_projections((a, b, c) in sets(3), seed in 0u64..1000) {
        let proj = random_projections(3, 64, &mut aux_rng(seed, 0));
        let ab = sliced_wasserstein_with(&a, &b, &proj).unwrap();
        let ba = sliced_wasserstein_with(&b, &a, &proj).unwrap();
        let ac = sliced_wasserstein_with(&a, &c, &proj).unwrap();
        let cb = sliced_wasserstein_with(&c, &b, &proj).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!(sliced_wasserstein_with(&a, &a, &proj).unwrap() < 1e-12);
    }

    #[test]
    fn sliced_wasserstein_scales_with_the_data((a, b, _) in sets(2), c in -4.0f64..4.0, seed in 0u64..1000) {
        let proj = random_projections(2, 32, &mut aux_rng(seed, 0));
        let base = sliced_wasserstein_with(&a, &b, &proj).unwrap();
        let scaled = sliced_wasserstein_with(&(&a * c), &(&b * c), &proj).unwrap();
        prop_assert!((scaled - c.abs() * base).abs() <= 1e-10 * (1.0 + base));
    }

    #[test]
    fn fd_jacobian_is_symmetric_negative_definite(
        theta in proptest::collection::vec(-2.0f64..2.0, 3),
        x in proptest::collection::vec(-2.0f64..2.0, 3),
        i in 1usize..50,
    ) {
        let field = GaussianPosteriorScore::new(GaussianTask::correlated(3, 0.5).unwrap());
        let sched = DiffusionSchedule::with_defaults(50).unwrap();
        let theta = DVector::from_vec(theta);
        let j = jacobian_fd(&field, &theta, &DVector::from_vec(x), sched.time(i), 1e-4);
        prop_assert_eq!(&j, &j.transpose());
        prop_assert!(j.symmetric_eigenvalues().max() < 0.0);
    }

    #[test]
    fn zero_noise_perturbation_is_identity(
        theta in proptest::collection::vec(-3.0f64..3.0, 8),
        x in proptest::collection::vec(-3.0f64..3.0, 4),
        seed in 0u64..1000,
        i in 1usize..20,
    ) {
        let base = GaussianPosteriorScore::new(GaussianTask::correlated(4, 0.3).unwrap());
        let noise = NoiseModel::new(0.0, Arc::new(Perturber::new(4, 4, seed))).unwrap();
        let field = perturb(base.clone(), noise).unwrap();
        let sched = DiffusionSchedule::with_defaults(20).unwrap();
        let theta = DMatrix::from_column_slice(4, 2, &theta);
        let x = DVector::from_vec(x);
        prop_assert_eq!(field.eval(&theta, &x, sched.time(i)), base.eval(&theta, &x, sched.time(i)));
    }

    #[test]
    fn perturbation_stays_within_epsilon_sqrt_upsilon(
        theta in proptest::collection::vec(-5.0f64..5.0, 3),
        eps in 0.0f64..1.0,
        i in 1usize..20,
    ) {
        let base = GaussianPosteriorScore::new(GaussianTask::correlated(3, 0.3).unwrap());
        let noise = NoiseModel::new(eps, Arc::new(Perturber::new(3, 3, 5))).unwrap();
        let field = perturb(base.clone(), noise).unwrap();
        let sched = DiffusionSchedule::with_defaults(20).unwrap();
        let time = sched.time(i);
        let theta = DMatrix::from_column_slice(3, 1, &theta);
        let x = DVector::from_vec(vec![0.1, -0.4, 0.3]);
        let diff = field.eval(&theta, &x, time) - base.eval(&theta, &x, time);
        prop_assert!(diff.amax() <= eps * time.upsilon.sqrt() + 1e-12);
    }

    #[test]
    fn schedule_is_monotone(steps in 2usize..400) {
        let s = DiffusionSchedule::with_defaults(steps).unwrap();
        prop_assert_eq!(s.alpha(0), 1.0);
        for i in 1..=steps {
            prop_assert!(s.alpha(i) < s.alpha(i - 1));
            prop_assert!((s.alpha(i) + s.upsilon(i) - 1.0).abs() < 1e-15);
            let a = s.step_ratio(i);
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn lambda_is_spd_when_every_factor_dominates_the_prior(
        extra in proptest::collection::vec(0.01f64..3.0, 1..6),
        prior in 0.1f64..5.0,
    ) {
        let m = 2;
        let precisions: Vec<_> = extra.iter().map(|e| DMatrix::identity(m, m) * (prior + e)).collect();
        let bundle = PrecisionBundle::new(precisions, DMatrix::identity(m, m) * prior).unwrap();
        prop_assert!(check_lambda_spd(&bundle).0);
    }

    #[test]
    fn fnpse_reduces_to_the_sum_at_the_clean_endpoint(
        s in proptest::collection::vec(-5.0f64..5.0, 6),
        p in proptest::collection::vec(-5.0f64..5.0, 2),
    ) {
        let scores: Vec<_> = s.chunks(2).map(|c| DVector::from_row_slice(c)).collect();
        let prior = DVector::from_vec(p);
        let got = compose_fnpse(&scores, &prior, 3, 0.0);
        let want = &scores[0] + &scores[1] + &scores[2] - &prior * 2.0;
        prop_assert!((got - want).amax() < 1e-12);
        // at t = 1 the prior correction vanishes
        let at_one = compose_fnpse(&scores, &prior, 3, 1.0);
        prop_assert!((at_one - (&scores[0] + &scores[1] + &scores[2])).amax() < 1e-12);
    }
}
