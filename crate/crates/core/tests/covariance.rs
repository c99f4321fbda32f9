use nalgebra::{DMatrix, DVector};
use oulab::covariance::{check_ds_quadratic_form, check_dt_quadratic_form, q_infinity, q_kernel};
use oulab::evolution::evolve;
use oulab::linalg::{self, SymOperator};
use oulab::model::{ModelSpec, OperatorFamily, Window};

fn parabolic() -> OperatorFamily {
    ModelSpec::Parabolic1d { m: 5, nu: 1.0, nu_amp: 0.3, omega: 1.0, omega_amp: 0.5 }
        .build(Window::new(-3.0, 3.0).unwrap())
        .unwrap()
}

fn time_varying() -> OperatorFamily {
    ModelSpec::DiagonalTimeVarying { n: 4, c1: 1.0, c2: 2.0 }.build(Window::new(-2.0, 2.0).unwrap()).unwrap()
}

fn scalar() -> OperatorFamily {
    ModelSpec::Scalar { n: 3, a_mean: -1.0, a_amp: 0.5, a_freq: 1.0, b: 1.0 }
        .build(Window::new(-3.0, 3.0).unwrap())
        .unwrap()
}

/// Fixed-step RK4 on the Lyapunov equation Q' = AQ + QAᵀ + BBᵀ, Q(s) = 0.
fn lyapunov(model: &OperatorFamily, s: f64, t: f64, steps: usize) -> DMatrix<f64> {
    let n = model.dim();
    let rhs = |tau: f64, q: &DMatrix<f64>| {
        let a = model.drift(tau);
        let b = model.noise(tau);
        &a * q + q * a.transpose() + &b * b.transpose()
    };
    let h = (t - s) / steps as f64;
    let mut q = DMatrix::zeros(n, n);
    for i in 0..steps {
        let tau = s + i as f64 * h;
        let k1 = rhs(tau, &q);
        let k2 = rhs(tau + h / 2.0, &(&q + &k1 * (h / 2.0)));
        let k3 = rhs(tau + h / 2.0, &(&q + &k2 * (h / 2.0)));
        let k4 = rhs(tau + h, &(&q + &k3 * h));
        q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    q
}

#[test]
fn matches_lyapunov_oracle() {
    for (model, s, t) in [(parabolic(), -0.7, 1.1), (time_varying(), -1.5, 1.0), (scalar(), 0.0, 2.0)] {
        let q = q_kernel(&model, s, t).unwrap();
        let oracle = lyapunov(&model, s, t, 20_000);
        let err = (q.q.matrix() - oracle).amax();
        assert!(err < 1e-8, "{}: {err}", model.name);
    }
}

#[test]
fn flow_decomposition() {
    for (model, s, r, t) in [(parabolic(), -1.0, 0.2, 1.5), (time_varying(), -1.8, -0.3, 1.7), (scalar(), -2.0, 0.5, 2.5)] {
        let qts = q_kernel(&model, s, t).unwrap();
        let qrs = q_kernel(&model, s, r).unwrap();
        let qtr = q_kernel(&model, r, t).unwrap();
        let u = evolve(&model, r, t).unwrap().matrix;
        let rebuilt = &u * qrs.q.matrix() * u.transpose() + qtr.q.matrix();
        let err = (qts.q.matrix() - rebuilt).amax();
        assert!(err < 1e-8, "{}: {err}", model.name);
    }
}

#[test]
fn monotone_in_lower_limit() {
    for model in [parabolic(), time_varying(), scalar()] {
        let t = 1.0;
        let mut prev: Option<SymOperator> = None;
        for s in [0.5, 0.0, -0.5, -1.0, -1.5] {
            let q = q_kernel(&model, s, t).unwrap().q;
            if let Some(p) = prev {
                let diff = SymOperator::symmetrized(q.matrix() - p.matrix()).unwrap();
                let min = linalg::spectral(&diff).unwrap().min_eigenvalue();
                assert!(min > -1e-10, "{}: {min}", model.name);
            }
            prev = Some(q);
        }
    }
}

#[test]
fn infinite_horizon_traces_increase_to_limit() {
    let dc = ModelSpec::dc().build(Window::new(-10.0, 10.0).unwrap()).unwrap();
    let limit = q_infinity(&dc, 0.0, 1e-10).unwrap();
    let tail = limit.tail.unwrap();
    let mut prev = 0.0;
    for horizon in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let tr = q_kernel(&dc, -horizon, 0.0).unwrap().trace();
        assert!(tr > prev);
        // Cauchy increment to the limit stays below the analytic tail
        let gap = limit.trace() - tr;
        assert!(gap <= 8.0 * (-2.0 * horizon).exp() / 2.0 + 1e-9, "{horizon}: {gap}");
        prev = tr;
    }
    assert!(limit.trace() - prev <= tail.bound.max(8.0 * (-16.0_f64).exp() / 2.0) + 1e-9);
}

#[test]
fn scalar_constant_equals_dc() {
    let w = Window::new(-5.0, 5.0).unwrap();
    let flat = ModelSpec::Scalar { n: 8, a_mean: -1.0, a_amp: 0.0, a_freq: 1.0, b: 1.0 }.build(w).unwrap();
    let q = q_infinity(&flat, 1.0, 1e-10).unwrap();
    assert!((q.q.matrix() - DMatrix::identity(8, 8) * 0.5).amax() < 1e-10);
}

#[test]
fn stationarity_identity() {
    let model = scalar();
    let (s, t) = (-1.0, 1.5);
    let qs = q_infinity(&model, s, 1e-12).unwrap();
    let qt = q_infinity(&model, t, 1e-12).unwrap();
    let qts = q_kernel(&model, s, t).unwrap();
    let u = evolve(&model, s, t).unwrap().matrix;
    let lhs = &u * qs.q.matrix() * u.transpose() + qts.q.matrix();
    assert!((lhs - qt.q.matrix()).amax() < 1e-9);
}

#[test]
fn derivative_identities_dense() {
    let model = parabolic();
    let x = DVector::from_vec(vec![0.3, -0.5, 0.7, 0.1, -0.4]);
    let dt = check_dt_quadratic_form(&model, -0.5, 0.8, &x, 1e-4).unwrap();
    let ds = check_ds_quadratic_form(&model, -0.5, 0.8, &x, 1e-4).unwrap();
    assert!(dt.abs_error < 1e-6, "{dt:?}");
    assert!(ds.abs_error < 1e-6, "{ds:?}");
}

#[test]
fn derivative_identities_second_order() {
    let model = time_varying();
    let h = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
    let coarse = check_dt_quadratic_form(&model, -1.0, 0.7, &h, 2e-2).unwrap().abs_error;
    let fine = check_dt_quadratic_form(&model, -1.0, 0.7, &h, 1e-2).unwrap().abs_error;
    let ratio = coarse / fine;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    let coarse = check_ds_quadratic_form(&model, -1.0, 0.7, &h, 2e-2).unwrap().abs_error;
    let fine = check_ds_quadratic_form(&model, -1.0, 0.7, &h, 1e-2).unwrap().abs_error;
    let ratio = coarse / fine;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn csv_export_round_trips() {
    let q = q_kernel(&time_varying(), -1.0, 1.0).unwrap();
    let parsed: Vec<Vec<f64>> = q
        .to_csv()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(parsed[i][j], q.q.matrix()[(i, j)]);
        }
    }
}
