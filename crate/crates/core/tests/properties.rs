//! Randomized invariants over seeded inputs. Case counts are small; each case
//! runs quadratures.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use oulab::covariance::{q_infinity, q_kernel};
use oulab::evolution::{adjoint_evolve, evolve};
use oulab::experiment::ExperimentConfig;
use oulab::inequalities::exponent_curve;
use oulab::linalg::{self, CameronMartinMetric, SymOperator};
use oulab::measures::GaussianMeasure;
use oulab::mehler::{transform, TrigPolynomial};
use oulab::model::{make_diagonal_constant, ModelSpec, OperatorFamily, Window};
use oulab::rng::seed_stream;
use proptest::prelude::*;

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, n).prop_map(DVector::from_vec)
}

fn psd(g: &DMatrix<f64>) -> SymOperator {
    SymOperator::symmetrized(g.transpose() * g).unwrap()
}

fn time_varying() -> OperatorFamily {
    ModelSpec::DiagonalTimeVarying { n: 4, c1: 1.0, c2: 2.0 }.build(Window::new(-2.0, 2.0).unwrap()).unwrap()
}

fn catalog_models() -> Vec<OperatorFamily> {
    let w = Window::new(-3.0, 3.0).unwrap();
    oulab::model::catalog().into_iter().map(|e| e.spec.build(w).unwrap()).collect()
}

/// Three sorted times in [lo, hi].
fn triple(lo: f64, hi: f64) -> impl Strategy<Value = (f64, f64, f64)> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(a, b, c)| {
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        (v[0], v[1], v[2])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sqrt_psd_squares_back(g in matrix(5)) {
        let s = psd(&g);
        let r = linalg::sqrt_psd(&s).unwrap();
        let back = r.matrix() * r.matrix();
        prop_assert!((back - s.matrix()).amax() <= 1e-9 * s.max_abs().max(1.0));
    }

    #[test]
    fn pseudo_inverse_is_a_left_identity_on_the_range(g in matrix(4), z in vector(4)) {
        // rank ≤ 3: zero the last column of the factor
        let mut g = g;
        g.column_mut(3).fill(0.0);
        let r = psd(&g);
        let metric = CameronMartinMetric::new(r.clone()).unwrap();
        let y = r.apply(&z);
        let x = linalg::pseudo_inverse_apply(&metric, &y);
        prop_assert!((r.apply(&x) - &y).amax() <= 1e-9 * y.amax().max(1.0));
        // ‖y‖ ≤ ‖R‖·‖y‖_{H_R}
        prop_assert!(y.norm() <= r.norm() * metric.norm(&y) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn trace_is_basis_independent(g in matrix(5), h in matrix(5)) {
        let s = psd(&g);
        let v = h.qr().q();
        let rotated = SymOperator::symmetrized(v.transpose() * s.matrix() * &v).unwrap();
        prop_assert!((linalg::trace(&s) - linalg::trace(&rotated)).abs() <= 1e-9 * linalg::trace(&s).max(1.0));
    }

    #[test]
    fn chain_law_on_catalog_models((s, r, t) in triple(-3.0, 3.0)) {
        for model in catalog_models() {
            let direct = evolve(&model, s, t).unwrap().matrix;
            let chained = evolve(&model, r, t).unwrap().matrix * evolve(&model, s, r).unwrap().matrix;
            let err = linalg::operator_norm(&(direct.clone() - chained));
            prop_assert!(err <= 1e-8 * linalg::operator_norm(&direct).max(1e-300), "{}: {err:e}", model.name);
        }
    }

    #[test]
    fn adjoint_evolution_is_the_transpose((s, _r, t) in triple(-3.0, 3.0)) {
        for model in catalog_models() {
            let u = evolve(&model, s, t).unwrap().matrix;
            let v = adjoint_evolve(&model, s, t).unwrap().matrix;
            prop_assert!((u.transpose() - v).amax() <= 1e-8, "{}", model.name);
        }
    }

    #[test]
    fn constant_model_respects_its_certificate(lambda in -3.0..-0.1f64, (s, _r, t) in triple(-2.0, 2.0)) {
        let model = make_diagonal_constant(3, lambda, 1.0, Window::new(-2.0, 2.0).unwrap()).unwrap();
        let d = model.decay.unwrap();
        let norm = evolve(&model, s, t).unwrap().norm();
        prop_assert!(norm <= d.m * (-d.zeta * (t - s)).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn covariance_flow_decomposition((s, r, t) in triple(-2.0, 2.0)) {
        let model = time_varying();
        let u = evolve(&model, r, t).unwrap().matrix;
        let lhs = q_kernel(&model, s, t).unwrap().q.into_matrix();
        let rhs = &u * q_kernel(&model, s, r).unwrap().q.matrix() * u.transpose() + q_kernel(&model, r, t).unwrap().q.matrix();
        prop_assert!((lhs - rhs).amax() <= 1e-8);
    }

    #[test]
    fn covariance_grows_as_s_decreases((s, r, t) in triple(-2.0, 2.0)) {
        let model = time_varying();
        let wide = q_kernel(&model, s, t).unwrap().q.into_matrix();
        let narrow = q_kernel(&model, r, t).unwrap().q.into_matrix();
        let gap = SymOperator::symmetrized(wide - narrow).unwrap();
        prop_assert!(linalg::spectral(&gap).unwrap().min_eigenvalue() >= -1e-10);
    }

    #[test]
    fn characteristic_function_of_a_shifted_gaussian(g in matrix(3), v in vector(3), h in vector(3)) {
        let mu = GaussianMeasure::centered(psd(&g)).unwrap();
        prop_assert!((mu.char_fn(&DVector::zeros(3)) - Complex64::new(1.0, 0.0)).norm() <= 1e-15);
        prop_assert!(mu.char_fn(&h).norm() <= 1.0 + 1e-15);
        let shifted = mu.shifted(&v);
        let direct = GaussianMeasure::new(v.clone(), psd(&g)).unwrap();
        let convolved = mu.char_fn(&h) * Complex64::from_polar(1.0, v.dot(&h));
        prop_assert!((shifted.char_fn(&h) - convolved).norm() <= 1e-12);
        prop_assert!((direct.char_fn(&h) - convolved).norm() <= 1e-12);
    }

    #[test]
    fn transition_operators_compose((s, r, t) in triple(-2.0, 2.0), h in vector(4), k in vector(4)) {
        let model = time_varying();
        let phi = TrigPolynomial::exponential(h.clone()).add(&TrigPolynomial::cos(k)).unwrap();
        let direct = transform(&model, s, t, &phi).unwrap();
        let composed = transform(&model, s, r, &transform(&model, r, t, &phi).unwrap()).unwrap();
        prop_assert_eq!(direct.terms().len(), composed.terms().len());
        for (a, b) in direct.terms().iter().zip(composed.terms()) {
            prop_assert!((a.coef - b.coef).norm() <= 1e-10);
            prop_assert!((&a.freq - &b.freq).amax() <= 1e-10);
        }
        // frequencies are U(t,s)*h
        let u = evolve(&model, s, t).unwrap();
        prop_assert!((&direct.terms()[0].freq - u.apply_adjoint(&h)).amax() <= 1e-12);
    }

    #[test]
    fn exponent_curve_is_monotone(q in 1.1..4.0f64, tau in 0.01..3.0f64, kappa in 0.05..2.0f64) {
        let p = exponent_curve(q, tau, kappa);
        prop_assert!(p > q);
        prop_assert!(exponent_curve(q, tau * 1.1, kappa) > p);
        prop_assert!(exponent_curve(q, tau, kappa * 1.1) < p);
    }

    #[test]
    fn configs_round_trip(seed in 0u64..(i64::MAX as u64), tail in 1e-14..1e-2f64, t in -5.0..5.0f64, x in vector(8)) {
        let mut c = ExperimentConfig::dc_default();
        c.seed = seed;
        c.tolerances.tail = tail;
        c.ergodic.t = t;
        c.ergodic.s_values = vec![t - 1.0, t - 2.0];
        c.x0 = Some(x.iter().copied().collect());
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn seed_streams_are_reproducible(seed in any::<u64>(), label in "[a-z/]{1,12}") {
        let mut a = seed_stream(seed, &label).rng();
        let mut b = seed_stream(seed, &label).rng();
        for _ in 0..16 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn stationarity_of_the_infinite_horizon_kernel((s, _r, t) in triple(-2.0, 2.0)) {
        let model = time_varying();
        let u = evolve(&model, s, t).unwrap().matrix;
        let lhs = &u * q_infinity(&model, s, 1e-10).unwrap().q.matrix() * u.transpose() + q_kernel(&model, s, t).unwrap().q.matrix();
        let rhs = q_infinity(&model, t, 1e-10).unwrap().q.into_matrix();
        prop_assert!((lhs - rhs).amax() <= 1e-9);
    }
}

#[test]
fn evolution_difference_quotient_is_first_order() {
    let model = time_varying();
    let (s, t) = (-0.5, 0.7);
    let u = evolve(&model, s, t).unwrap().matrix;
    let generator = model.drift(t) * &u;
    let err = |h: f64| {
        let ahead = evolve(&model, s, t + h).unwrap().matrix;
        ((ahead - &u) / h - &generator).amax()
    };
    let ratio = err(1e-3) / err(1e-4);
    assert!((8.0..12.0).contains(&ratio), "{ratio}");
}

#[test]
fn distinct_labels_are_uncorrelated() {
    let mut a = seed_stream(0, "alpha").rng();
    let mut b = seed_stream(0, "beta").rng();
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += a.next_normal() * b.next_normal();
    }
    assert!((sum / n as f64).abs() < 0.01);
}
