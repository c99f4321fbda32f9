//! Covariance operators Q(t,s) = ∫_s^t U(t,r)Q(r)U(t,r)* dr and their
//! infinite-horizon limit Q(t,−∞).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{self, EvolutionMap};
use crate::linalg::{self, SymOperator};
use crate::model::{Kind, OperatorFamily};
use crate::quadrature::{exp_weighted_integral, GaussLegendre, Tolerance};

/// Per-mode tolerance for diagonal and scalar kernels.
pub const DIAGONAL_TOL: f64 = 1e-11;
/// Entry tolerance for the composite Gauss–Legendre rule of dense kernels.
pub const DENSE_TOL: f64 = 1e-10;
const DENSE_NODES: usize = 8;
const MAX_PANELS: usize = 1 << 14;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureMeta {
    pub evaluations: usize,
    pub error_estimate: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailInfo {
    /// Lower integration limit actually used.
    pub s_star: f64,
    /// Trace bound for the discarded part ∫_{−∞}^{s*}.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceKernel {
    /// Lower limit; `f64::NEG_INFINITY` for Q(t, −∞).
    pub s: f64,
    pub t: f64,
    pub q: SymOperator,
    pub meta: QuadratureMeta,
    pub tail: Option<TailInfo>,
}

impl CovarianceKernel {
    pub fn trace(&self) -> f64 {
        linalg::trace(&self.q)
    }

    /// Row-major CSV, 17 significant digits.
    pub fn to_csv(&self) -> String {
        crate::io::matrix_csv(self.q.matrix())
    }
}

/// Q(t,s) for s ≤ t inside the model window.
pub fn q_kernel(model: &OperatorFamily, s: f64, t: f64) -> Result<CovarianceKernel> {
    model.check_pair(s, t)?;
    q_kernel_unchecked(model, s, t)
}

fn repair_psd(q: DMatrix<f64>) -> Result<SymOperator> {
    let sym = SymOperator::symmetrized(q)?;
    linalg::clamp_psd(&sym)?;
    Ok(sym)
}

pub(crate) fn q_kernel_unchecked(model: &OperatorFamily, s: f64, t: f64) -> Result<CovarianceKernel> {
    let n = model.dim();
    if s == t {
        return Ok(CovarianceKernel {
            s,
            t,
            q: SymOperator::zeros(n),
            meta: QuadratureMeta { evaluations: 0, error_estimate: 0.0, tolerance: 0.0 },
            tail: None,
        });
    }
    let breaks = graded_breakpoints(model, s, t);
    let tol = Tolerance::new(1e-14, DIAGONAL_TOL);
    let (matrix, meta) = match model.kind() {
        Kind::Diagonal { .. } => {
            let modes: Vec<(f64, f64, usize)> = (0..n)
                .into_par_iter()
                .map(|k| {
                    let rate = |tau: f64| model.mode_rate(k, tau);
                    let (r, _) = exp_weighted_integral(
                        &rate,
                        |sigma, out: &mut [f64]| out[0] = model.mode_noise(k, sigma).powi(2),
                        1,
                        s,
                        t,
                        &breaks,
                        tol,
                    )?;
                    Ok((r.value[0], r.error, r.evaluations))
                })
                .collect::<Result<_>>()?;
            let diag: Vec<f64> = modes.iter().map(|m| m.0).collect();
            let meta = QuadratureMeta {
                evaluations: modes.iter().map(|m| m.2).sum(),
                error_estimate: modes.iter().map(|m| m.1).fold(0.0, f64::max),
                tolerance: DIAGONAL_TOL,
            };
            (DMatrix::from_diagonal(&DVector::from_vec(diag)), meta)
        }
        Kind::Scalar { .. } => {
            let rate = |tau: f64| model.mode_rate(0, tau);
            let (r, _) = exp_weighted_integral(
                &rate,
                |sigma, out: &mut [f64]| out.copy_from_slice(model.diffusion(sigma).matrix().as_slice()),
                n * n,
                s,
                t,
                &breaks,
                tol,
            )?;
            let meta = QuadratureMeta { evaluations: r.evaluations, error_estimate: r.error, tolerance: DIAGONAL_TOL };
            (DMatrix::from_column_slice(n, n, &r.value), meta)
        }
        Kind::Dense { .. } => dense_kernel(model, s, t)?,
    };
    Ok(CovarianceKernel { s, t, q: repair_psd(matrix)?, meta, tail: None })
}

/// Model breakpoints plus t − 2^j/8, j ≥ 0, down to s. The weight e^{2∫a} is
/// concentrated near t; on long horizons an adaptive rule started on [s, t]
/// alone can sample past that mass entirely.
fn graded_breakpoints(model: &OperatorFamily, s: f64, t: f64) -> Vec<f64> {
    let mut breaks = model.breakpoints();
    let mut gap = 0.125;
    while t - gap > s {
        breaks.push(t - gap);
        gap *= 2.0;
    }
    breaks
}

/// Composite Gauss–Legendre with panel doubling. U(t,r) at the nodes is built
/// by chaining short evolutions from r = t downwards.
fn dense_kernel(model: &OperatorFamily, s: f64, t: f64) -> Result<(DMatrix<f64>, QuadratureMeta)> {
    let rule = GaussLegendre::new(DENSE_NODES);
    let mut breaks: Vec<f64> = model.breakpoints().into_iter().filter(|&b| b > s && b < t).collect();
    breaks.sort_by(f64::total_cmp);
    let mut panels = (((t - s) / 0.25).ceil() as usize).max(1);
    let mut previous: Option<DMatrix<f64>> = None;
    let mut evaluations = 0;
    loop {
        let mut edges = vec![s];
        for i in 1..panels {
            edges.push(s + (t - s) * i as f64 / panels as f64);
        }
        edges.extend(breaks.iter().copied());
        edges.push(t);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let mut nodes: Vec<(f64, f64)> = edges.windows(2).flat_map(|w| rule.mapped(w[0], w[1]).collect::<Vec<_>>()).collect();
        nodes.sort_by(|a, b| b.0.total_cmp(&a.0));

        let n = model.dim();
        let mut u = DMatrix::<f64>::identity(n, n);
        let mut at = t;
        let mut sum = DMatrix::<f64>::zeros(n, n);
        for &(r, w) in &nodes {
            let step: EvolutionMap = evolution::evolve_unchecked(model, r, at)?;
            u = &u * &step.matrix;
            at = r;
            let b = model.noise(r);
            let ub = &u * b;
            sum += (&ub * ub.transpose()) * w;
        }
        evaluations += nodes.len();
        if let Some(prev) = previous {
            let err = (&sum - &prev).amax();
            if err <= DENSE_TOL * sum.amax().max(1.0) {
                return Ok((sum, QuadratureMeta { evaluations, error_estimate: err, tolerance: DENSE_TOL }));
            }
        }
        if panels * 2 > MAX_PANELS {
            return Err(Error::QuadratureStalled(format!("dense kernel on [{s}, {t}] did not converge")));
        }
        previous = Some(sum);
        panels *= 2;
    }
}

/// Upper bound on the trace of the part of Q(t,−∞) below `s_star`.
fn tail_bound(model: &OperatorFamily, t: f64, s_star: f64) -> Result<f64> {
    if let Some(bound) = &model.tail_bound {
        return Ok(bound(t, s_star));
    }
    match model.decay {
        Some(d) if d.zeta > 0.0 => {
            let k = model.noise_bound;
            Ok(model.dim() as f64 * d.m * d.m * k * k * (-2.0 * d.zeta * (t - s_star)).exp() / (2.0 * d.zeta))
        }
        _ => Err(Error::NoDecay),
    }
}

const MAX_HORIZON: f64 = 1e7;

/// Q(t, −∞), truncated at the latest s* whose tail trace bound is below `tol_tail`.
pub fn q_infinity(model: &OperatorFamily, t: f64, tol_tail: f64) -> Result<CovarianceKernel> {
    model.check_window(t)?;
    if !(tol_tail > 0.0) {
        return Err(Error::BadParameter(format!("tail tolerance must be > 0, got {tol_tail}")));
    }
    let mut hi = 1.0;
    while tail_bound(model, t, t - hi)? >= tol_tail {
        hi *= 2.0;
        if hi > MAX_HORIZON {
            return Err(Error::NoDecay);
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if tail_bound(model, t, t - mid)? < tol_tail {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s_star = t - hi;
    let bound = tail_bound(model, t, s_star)?;
    let mut kernel = q_kernel_unchecked(model, s_star, t)?;
    kernel.s = f64::NEG_INFINITY;
    kernel.tail = Some(TailInfo { s_star, bound });
    Ok(kernel)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub finite_difference: f64,
    pub formula: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

impl DerivativeCheck {
    fn new(finite_difference: f64, formula: f64) -> Self {
        let abs_error = (finite_difference - formula).abs();
        let rel_error = abs_error / formula.abs().max(f64::MIN_POSITIVE);
        Self { finite_difference, formula, abs_error, rel_error }
    }
}

/// d/dτ ⟨Q(τ,s)h,h⟩ at τ = t against ‖Q(t)^{1/2}h‖² + 2⟨Q(t,s)A(t)*h, h⟩.
///
/// The squared norm is used: it is what the closed forms of the constant
/// model require.
pub fn check_dt_quadratic_form(
    model: &OperatorFamily,
    s: f64,
    t: f64,
    h: &DVector<f64>,
    fd_step: f64,
) -> Result<DerivativeCheck> {
    if !(s < t) {
        return Err(Error::BadParameter("need s < t".into()));
    }
    let plus = q_kernel(model, s, t + fd_step)?.q.quadratic_form(h);
    let minus = q_kernel(model, s, t - fd_step)?.q.quadratic_form(h);
    let fd = (plus - minus) / (2.0 * fd_step);
    let q = q_kernel(model, s, t)?.q;
    let formula = model.diffusion(t).quadratic_form(h) + 2.0 * h.dot(&(q.matrix() * model.drift_adjoint(t) * h));
    Ok(DerivativeCheck::new(fd, formula))
}

/// d/dσ ⟨Q(t,σ)x,x⟩ at σ = s against −⟨U(t,s)Q(s)U(t,s)*x, x⟩.
pub fn check_ds_quadratic_form(
    model: &OperatorFamily,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    fd_step: f64,
) -> Result<DerivativeCheck> {
    if !(s < t) {
        return Err(Error::BadParameter("need s < t".into()));
    }
    let plus = q_kernel(model, s + fd_step, t)?.q.quadratic_form(x);
    let minus = q_kernel(model, s - fd_step, t)?.q.quadratic_form(x);
    let fd = (plus - minus) / (2.0 * fd_step);
    let u = evolution::evolve(model, s, t)?;
    let ux = u.apply_adjoint(x);
    let formula = -model.diffusion(s).quadratic_form(&ux);
    Ok(DerivativeCheck::new(fd, formula))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_diagonal_constant, make_diagonal_paper, Window};
    use approx::assert_relative_eq;

    const Q10: f64 = 0.432_332_358_381_693_65; // (1 − e^{−2})/2

    fn dc() -> OperatorFamily {
        make_diagonal_constant(8, -1.0, 1.0, Window::new(-10.0, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_at_equal_times() {
        let k = q_kernel(&dc(), 0.3, 0.3).unwrap();
        assert_eq!(k.q.max_abs(), 0.0);
    }

    #[test]
    fn dc_closed_form() {
        let k = q_kernel(&dc(), 0.0, 1.0).unwrap();
        for i in 0..8 {
            assert_relative_eq!(k.q.matrix()[(i, i)], Q10, epsilon = 1e-12);
        }
        assert_relative_eq!(k.trace(), 8.0 * Q10, epsilon = 1e-11);
    }

    #[test]
    fn zero_diffusion_kernel() {
        let f = make_diagonal_constant(1, -2.0, 0.0, Window::new(0.0, 5.0).unwrap()).unwrap();
        assert_eq!(q_kernel(&f, 0.0, 3.0).unwrap().q.max_abs(), 0.0);
    }

    #[test]
    fn dc_infinite_horizon() {
        let k = q_infinity(&dc(), 0.0, 1e-10).unwrap();
        for i in 0..8 {
            assert!((k.q.matrix()[(i, i)] - 0.5).abs() < 1e-10);
        }
        let tail = k.tail.unwrap();
        assert!(tail.bound < 1e-10 && tail.s_star < 0.0);
    }

    #[test]
    fn no_decay_without_bound() {
        let mut f = dc();
        f.decay = None;
        assert!(matches!(q_infinity(&f, 0.0, 1e-10), Err(Error::NoDecay)));
    }

    #[test]
    fn dt_identity_dc() {
        let h = DVector::from_fn(8, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let c = check_dt_quadratic_form(&dc(), 0.0, 1.0, &h, 1e-4).unwrap();
        assert_relative_eq!(c.formula, (-2.0_f64).exp(), epsilon = 1e-12);
        assert!(c.abs_error < 1e-8, "{c:?}");
        let zero = check_dt_quadratic_form(&dc(), 0.0, 1.0, &DVector::zeros(8), 1e-4).unwrap();
        assert_eq!(zero.abs_error, 0.0);
    }

    #[test]
    fn ds_identity_dc() {
        let x = DVector::from_fn(8, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let c = check_ds_quadratic_form(&dc(), 0.0, 1.0, &x, 1e-4).unwrap();
        assert_relative_eq!(c.formula, -(-2.0_f64).exp(), epsilon = 1e-12);
        assert!(c.abs_error < 1e-8, "{c:?}");
    }

    #[test]
    fn time_varying_dt_identity() {
        let f = make_diagonal_paper(2, 1.0, 2.0, Window::new(-2.0, 2.0).unwrap()).unwrap();
        let h = DVector::from_vec(vec![0.6, -0.8]);
        let c = check_dt_quadratic_form(&f, -0.5, 1.0, &h, 1e-4).unwrap();
        assert!(c.abs_error < 1e-6, "{c:?}");
    }
}
