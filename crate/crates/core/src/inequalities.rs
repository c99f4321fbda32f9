//! The log-Sobolev constant κ = C(2η)^{2α−1}Γ(1−2α), the entropy inequality
//! under γ_t, hypercontractivity of P_{s,t}, and a probe of the exponent curve.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::covariance::q_infinity;
use crate::error::{Error, Result};
use crate::evolution::DecayCertificate;
use crate::io::fmt17;
use crate::linalg::SymOperator;
use crate::mc;
use crate::measures::GaussianMeasure;
use crate::mehler::{CylindricalFunction, Transition, TrigPolynomial};
use crate::model::OperatorFamily;
use crate::quadrature::{gaussian_expect, GaussHermite};
use crate::rng::StreamKey;

/// Node count of the coarse rule used to estimate quadrature error.
const COARSE_NODES: usize = 40;

pub fn kappa_from(c: f64, eta: f64, alpha: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(Error::BadCertificate(format!("alpha = {alpha} outside [0, 1/2)")));
    }
    if !(eta > 0.0) || !(c > 0.0) {
        return Err(Error::BadCertificate(format!("need C > 0 and eta > 0, got C = {c}, eta = {eta}")));
    }
    Ok(c * (2.0 * eta).powf(2.0 * alpha - 1.0) * gamma(1.0 - 2.0 * alpha))
}

pub fn kappa(cert: &DecayCertificate) -> Result<f64> {
    kappa_from(cert.constant, cert.rate, cert.alpha)
}

/// p_max = (q − 1) e^{τ/(2κ)} + 1
pub fn exponent_curve(q: f64, tau: f64, kappa: f64) -> f64 {
    (q - 1.0) * (tau / (2.0 * kappa)).exp() + 1.0
}

#[derive(Debug, Clone, Copy)]
pub enum Integration {
    /// Tensor Gauss–Hermite, 64 nodes per active direction.
    Quadrature,
    MonteCarlo { count: usize, key: StreamKey },
}

impl Integration {
    fn label(&self) -> &'static str {
        match self {
            Integration::Quadrature => "quadrature",
            Integration::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

/// γ_t, Q(t) and κ at one time.
#[derive(Debug, Clone)]
pub struct LogSobolevSetup {
    pub t: f64,
    pub kappa: f64,
    pub gamma: GaussianMeasure,
    pub diffusion: SymOperator,
}

impl LogSobolevSetup {
    pub fn new(model: &OperatorFamily, t: f64, kappa: f64, tol_tail: f64) -> Result<Self> {
        let gamma = GaussianMeasure::centered(q_infinity(model, t, tol_tail)?.q)?;
        Ok(Self { t, kappa, gamma, diffusion: model.diffusion(t) })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogSobolevReport {
    pub label: String,
    pub t: f64,
    pub p: f64,
    pub method: String,
    /// ∫|φ|^p log|φ|^p dγ_t − m_t(|φ|^p) log m_t(|φ|^p)
    pub lhs: f64,
    pub lhs_error: f64,
    /// ∫|φ|^{p−2}‖Q(t)^{1/2}∇φ‖² 1_{φ≠0} dγ_t
    pub energy: f64,
    /// κ p² · energy
    pub rhs: f64,
    pub rhs_error: f64,
    pub kappa: f64,
    pub slack: f64,
    pub error: f64,
    /// Cancellation allowance in lhs = E[f log f] − m log m.
    pub rounding: f64,
    pub pass: bool,
}

/// Relative rounding allowance on the entropy, so constants never flag.
pub const SLACK_FLOOR: f64 = 1e-12;

fn xlogx(f: f64) -> f64 {
    if f > 0.0 {
        f * f.ln()
    } else {
        0.0
    }
}

/// (|ψ|^p, |ψ|^p log|ψ|^p, energy density) at profile coordinates `u`.
fn entropy_integrands(phi: &CylindricalFunction, gram: &DMatrix<f64>, p: f64, u: &[f64]) -> [f64; 3] {
    let v = phi.profile(u);
    let f = v.abs().powf(p);
    let energy = if v != 0.0 {
        let g = DVector::from_vec(phi.profile_gradient(u));
        v.abs().powf(p - 2.0) * g.dot(&(gram * &g))
    } else {
        0.0
    };
    [f, xlogx(f), energy]
}

/// Both sides of the log-Sobolev inequality for a cylindrical φ.
pub fn entropy_gap(
    setup: &LogSobolevSetup,
    label: &str,
    phi: &CylindricalFunction,
    p: f64,
    method: Integration,
) -> Result<LogSobolevReport> {
    if !(p > 1.0) {
        return Err(Error::BadParameter(format!("p = {p} must exceed 1")));
    }
    let dirs = phi.directions();
    let k = dirs.len();
    // ⟨Q(t)h_i,h_j⟩: ‖Q(t)^{1/2}∇φ‖² = gᵀ G g with g = ∇ψ
    let gram = DMatrix::from_fn(k, k, |i, j| dirs[i].dot(&setup.diffusion.apply(&dirs[j])));
    let factor = setup.kappa * p * p;
    let (lhs, lhs_error, energy, energy_error, scale) = match method {
        Integration::Quadrature => {
            let sigma = DMatrix::from_fn(k, k, |i, j| dirs[i].dot(&setup.gamma.cov().apply(&dirs[j])));
            let mean = vec![0.0; k];
            let run = |rule: &GaussHermite| -> Result<[f64; 3]> {
                let mut out = [0.0; 3];
                for (slot, o) in out.iter_mut().enumerate() {
                    *o = gaussian_expect(&mean, &sigma, rule, |u| entropy_integrands(phi, &gram, p, u)[slot])?;
                }
                Ok(out)
            };
            let fine = run(GaussHermite::standard())?;
            let coarse = run(&GaussHermite::new(COARSE_NODES))?;
            let [m, ent, en] = fine;
            if !(m > 0.0) {
                return Err(Error::NonPositiveMean(m));
            }
            let lhs = ent - m * m.ln();
            let lhs_coarse = coarse[1] - coarse[0] * coarse[0].ln();
            (lhs, (lhs - lhs_coarse).abs(), en, (en - coarse[2]).abs(), ent.abs().max((m * m.ln()).abs()))
        }
        Integration::MonteCarlo { count, key } => {
            let gamma = &setup.gamma;
            let sums = mc::accumulate(count, key, 7, |rng, acc| {
                let x = gamma.draw(rng);
                let [f, flf, en] = entropy_integrands(phi, &gram, p, &phi.coordinates(&x));
                acc[0] += f;
                acc[1] += f * f;
                acc[2] += flf;
                acc[3] += flf * flf;
                acc[4] += f * flf;
                acc[5] += en;
                acc[6] += en * en;
            });
            let n = count as f64;
            let mean = |i: usize| sums[i] / n;
            let cov = |a: usize, b: usize, ab: usize| (sums[ab] / n - mean(a) * mean(b)) * n / (n - 1.0).max(1.0);
            let m = mean(0);
            if !(m > 0.0) {
                return Err(Error::NonPositiveMean(m));
            }
            let lhs = mean(2) - m * m.ln();
            // delta method on (E[f log f], E[f]) ↦ a − b log b
            let d = m.ln() + 1.0;
            let var = cov(2, 2, 3) + d * d * cov(0, 0, 1) - 2.0 * d * cov(0, 2, 4);
            let energy = mean(5);
            let scale = mean(2).abs().max((m * m.ln()).abs());
            (lhs, (var.max(0.0) / n).sqrt(), energy, (cov(5, 5, 6).max(0.0) / n).sqrt(), scale)
        }
    };
    let rhs = factor * energy;
    let rhs_error = factor * energy_error;
    let error = (lhs_error * lhs_error + rhs_error * rhs_error).sqrt();
    let slack = rhs - lhs;
    let rounding = SLACK_FLOOR * scale.max(1.0);
    Ok(LogSobolevReport {
        label: label.to_string(),
        t: setup.t,
        p,
        method: method.label().into(),
        lhs,
        lhs_error,
        energy,
        rhs,
        rhs_error,
        kappa: setup.kappa,
        slack,
        error,
        rounding,
        pass: slack >= -3.0 * error - rounding,
    })
}

/// √(ψ² + ε²), the smoothing of |φ| away from its zero set.
pub fn regularized(phi: &CylindricalFunction, eps: f64) -> Result<CylindricalFunction> {
    let a = phi.clone();
    let b = phi.clone();
    CylindricalFunction::new(
        phi.directions().to_vec(),
        Arc::new(move |u: &[f64]| (a.profile(u).powi(2) + eps * eps).sqrt()),
        Arc::new(move |u: &[f64]| {
            let v = b.profile(u);
            let r = (v * v + eps * eps).sqrt();
            b.profile_gradient(u).into_iter().map(|g| v * g / r).collect()
        }),
        None,
    )
}

fn unit(dim: usize, entries: &[(usize, f64)]) -> DVector<f64> {
    let mut v = DVector::zeros(dim);
    for &(i, x) in entries {
        v[i] = x;
    }
    v.normalize()
}

fn one_dim(h: DVector<f64>, f: fn(f64) -> f64, df: fn(f64) -> f64) -> CylindricalFunction {
    CylindricalFunction::new(vec![h], Arc::new(move |u: &[f64]| f(u[0])), Arc::new(move |u: &[f64]| vec![df(u[0])]), None)
        .expect("single unit direction")
}

fn two_dim(h1: DVector<f64>, h2: DVector<f64>, f: fn(f64, f64) -> f64, grad: fn(f64, f64) -> [f64; 2]) -> CylindricalFunction {
    CylindricalFunction::new(
        vec![h1, h2],
        Arc::new(move |u: &[f64]| f(u[0], u[1])),
        Arc::new(move |u: &[f64]| grad(u[0], u[1]).to_vec()),
        None,
    )
    .expect("orthonormal pair")
}

/// Positive, bounded, smooth cylindrical test functions over at most two
/// directions. Needs `dim ≥ 4`.
pub fn probe_suite(dim: usize) -> Result<Vec<(String, CylindricalFunction)>> {
    if dim < 4 {
        return Err(Error::BadParameter(format!("probe suite needs dim >= 4, got {dim}")));
    }
    let e = |i: usize| unit(dim, &[(i, 1.0)]);
    let diag = unit(dim, &[(0, 1.0), (1, 1.0)]);
    let anti = unit(dim, &[(2, 1.0), (3, -1.0)]);
    Ok(vec![
        ("const".into(), one_dim(e(0), |_| 1.7, |_| 0.0)),
        ("two_plus_cos".into(), one_dim(e(0), |u| 2.0 + u.cos(), |u| -u.sin())),
        ("two_plus_sin".into(), one_dim(e(1), |u| 2.0 + u.sin(), |u| u.cos())),
        (
            "gauss_bump".into(),
            one_dim(e(0), |u| 0.1 + (-u * u / 4.0).exp(), |u| -u / 2.0 * (-u * u / 4.0).exp()),
        ),
        ("tanh_step".into(), one_dim(e(2), |u| 1.5 + u.tanh(), |u| 1.0 / u.cosh().powi(2))),
        (
            "lorentz".into(),
            one_dim(e(3), |u| 0.5 + 1.0 / (1.0 + u * u), |u| -2.0 * u / (1.0 + u * u).powi(2)),
        ),
        ("cos_diag".into(), one_dim(diag.clone(), |u| 2.0 + (2.0 * u).cos(), |u| -2.0 * (2.0 * u).sin())),
        ("fast_cos".into(), one_dim(e(1), |u| 2.0 + (3.0 * u).cos(), |u| -3.0 * (3.0 * u).sin())),
        ("exp_sin".into(), one_dim(anti.clone(), |u| (0.5 * u.sin()).exp(), |u| 0.5 * u.cos() * (0.5 * u.sin()).exp())),
        (
            "logistic".into(),
            one_dim(e(0), |u| 0.2 + 1.0 / (1.0 + (-2.0 * u).exp()), |u| {
                let s = 1.0 / (1.0 + (-2.0 * u).exp());
                2.0 * s * (1.0 - s)
            }),
        ),
        (
            "cos_sum".into(),
            two_dim(e(0), e(1), |a, b| 3.0 + a.cos() + b.cos(), |a, b| [-a.sin(), -b.sin()]),
        ),
        (
            "tanh_product".into(),
            two_dim(e(2), e(3), |a, b| 1.0 + 0.5 * a.tanh() * b.tanh(), |a, b| {
                [0.5 / a.cosh().powi(2) * b.tanh(), 0.5 * a.tanh() / b.cosh().powi(2)]
            }),
        ),
        (
            "cos_sin_mix".into(),
            two_dim(diag, anti, |a, b| 2.0 + a.cos() * b.sin(), |a, b| [-a.sin() * b.sin(), a.cos() * b.cos()]),
        ),
        (
            "saturating".into(),
            one_dim(e(1), |u| 1.0 + u * u / (1.0 + u * u), |u| 2.0 * u / (1.0 + u * u).powi(2)),
        ),
    ])
}

/// γ_s, γ_t and the transition data for one pair.
#[derive(Debug, Clone)]
pub struct HyperSetup {
    pub s: f64,
    pub t: f64,
    pub kappa: f64,
    pub gamma_s: GaussianMeasure,
    pub gamma_t: GaussianMeasure,
    pub transition: Transition,
}

impl HyperSetup {
    pub fn new(model: &OperatorFamily, s: f64, t: f64, kappa: f64, tol_tail: f64) -> Result<Self> {
        if !(s < t) {
            return Err(Error::BadParameter("need s < t".into()));
        }
        Ok(Self {
            s,
            t,
            kappa,
            gamma_s: GaussianMeasure::centered(q_infinity(model, s, tol_tail)?.q)?,
            gamma_t: GaussianMeasure::centered(q_infinity(model, t, tol_tail)?.q)?,
            transition: Transition::new(model, s, t)?,
        })
    }

    pub fn p_max(&self, q: f64) -> f64 {
        exponent_curve(q, self.t - self.s, self.kappa)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperReport {
    pub label: String,
    pub s: f64,
    pub t: f64,
    pub q: f64,
    pub p: f64,
    pub p_max: f64,
    /// ‖P_{s,t}φ‖_{L^p(γ_s)}
    pub lhs: f64,
    /// ‖φ‖_{L^q(γ_t)}
    pub rhs: f64,
    pub slack: f64,
    pub error: f64,
    pub norm_holds: bool,
    pub pass: bool,
}

/// Orthonormal basis of the span of the given vectors.
fn span_basis(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let scale = vectors.iter().map(|v| v.amax()).fold(0.0, f64::max);
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = w.dot(b);
                w.axpy(-c, b, 1.0);
            }
        }
        let n = w.norm();
        if n > 1e-12 * scale.max(1.0) {
            basis.push(w / n);
        }
    }
    basis
}

/// (‖f‖_p, error) for f under μ, where f depends on x only through `basis`.
fn lp_norm_quadrature(
    mu: &GaussianMeasure,
    basis: &[DVector<f64>],
    p: f64,
    f: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
) -> Result<(f64, f64)> {
    if basis.is_empty() {
        let v = f(&DVector::zeros(mu.dim())).abs();
        return Ok((v, 0.0));
    }
    let k = basis.len();
    let sigma = DMatrix::from_fn(k, k, |i, j| basis[i].dot(&mu.cov().apply(&basis[j])));
    let mean: Vec<f64> = basis.iter().map(|b| b.dot(mu.mean())).collect();
    let lift = |u: &[f64]| {
        let mut x = DVector::zeros(mu.dim());
        for (ui, b) in u.iter().zip(basis) {
            x.axpy(*ui, b, 1.0);
        }
        f(&x).abs().powf(p)
    };
    let fine = gaussian_expect(&mean, &sigma, GaussHermite::standard(), lift)?;
    let coarse = gaussian_expect(&mean, &sigma, &GaussHermite::new(COARSE_NODES), lift)?;
    let norm = fine.powf(1.0 / p);
    Ok((norm, (norm - coarse.powf(1.0 / p)).abs()))
}

fn lp_norm_mc(
    mu: &GaussianMeasure,
    p: f64,
    count: usize,
    key: StreamKey,
    f: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
) -> (f64, f64) {
    let est = mu.expect_mc(count, key, |x| f(x).abs().powf(p));
    let norm = est.value.powf(1.0 / p);
    // d/dM M^{1/p} = M^{1/p − 1}/p
    let err = if est.value > 0.0 { norm / (p * est.value) * est.stderr } else { 0.0 };
    (norm, err)
}

/// ‖P_{s,t}φ‖_{L^p(γ_s)} against ‖φ‖_{L^q(γ_t)} for a real trigonometric polynomial.
pub fn hyper_check(
    setup: &HyperSetup,
    label: &str,
    phi: &TrigPolynomial,
    q: f64,
    p: f64,
    method: Integration,
) -> Result<HyperReport> {
    if !(q > 1.0) || !(p >= 1.0) {
        return Err(Error::BadParameter(format!("need q > 1 and p >= 1, got q = {q}, p = {p}")));
    }
    let transformed = setup.transition.transform(phi);
    let outer = |x: &DVector<f64>| transformed.eval(x).norm();
    let direct = |x: &DVector<f64>| phi.eval(x).norm();
    let ((lhs, lhs_err), (rhs, rhs_err)) = match method {
        Integration::Quadrature => {
            let fl: Vec<DVector<f64>> = transformed.terms().iter().map(|t| t.freq.clone()).collect();
            let fr: Vec<DVector<f64>> = phi.terms().iter().map(|t| t.freq.clone()).collect();
            (
                lp_norm_quadrature(&setup.gamma_s, &span_basis(&fl), p, &outer)?,
                lp_norm_quadrature(&setup.gamma_t, &span_basis(&fr), q, &direct)?,
            )
        }
        Integration::MonteCarlo { count, key } => (
            lp_norm_mc(&setup.gamma_s, p, count, key.substream(0), &outer),
            lp_norm_mc(&setup.gamma_t, q, count, key.substream(1), &direct),
        ),
    };
    let p_max = setup.p_max(q);
    let error = (lhs_err * lhs_err + rhs_err * rhs_err).sqrt();
    let norm_holds = lhs <= rhs + 3.0 * error;
    Ok(HyperReport {
        label: label.to_string(),
        s: setup.s,
        t: setup.t,
        q,
        p,
        p_max,
        lhs,
        rhs,
        slack: rhs - lhs,
        error,
        norm_holds,
        pass: norm_holds && p <= p_max * (1.0 + 1e-12),
    })
}

/// Real trigonometric test functions for hypercontractivity. Needs `dim ≥ 3`.
pub fn hyper_probes(dim: usize) -> Result<Vec<(String, TrigPolynomial)>> {
    if dim < 3 {
        return Err(Error::BadParameter(format!("hyper probes need dim >= 3, got {dim}")));
    }
    let e = |i: usize| unit(dim, &[(i, 1.0)]);
    let c = |x: f64| TrigPolynomial::constant(dim, x);
    let cos = |h: DVector<f64>, a: f64| TrigPolynomial::cos(h).scale(a.into());
    let sin = |h: DVector<f64>, a: f64| TrigPolynomial::sin(h).scale(a.into());
    let sum = |parts: Vec<TrigPolynomial>| parts.into_iter().reduce(|a, b| a.add(&b).expect("same dim")).expect("nonempty");
    Ok(vec![
        ("two_plus_cos".into(), sum(vec![c(2.0), cos(e(0), 1.0)])),
        ("one_plus_sin".into(), sum(vec![c(1.5), sin(e(1), 1.0)])),
        ("cos".into(), cos(e(0), 1.0)),
        ("near_flat".into(), sum(vec![c(1.0), cos(e(0), 0.1)])),
        ("fast".into(), sum(vec![c(2.0), cos(e(2) * 2.0, 1.0)])),
        ("diag".into(), sum(vec![c(3.0), cos(e(0) + e(1), 1.0), sin(e(2), 0.5)])),
        ("mixed".into(), sum(vec![c(1.0), cos(e(0), 0.5), cos(e(1), 0.5)])),
        ("product".into(), cos(e(0), 1.0).mul(&sum(vec![c(2.0), sin(e(1), 1.0)]))?),
        ("slow".into(), sum(vec![c(0.5), cos(e(2) * 0.5, 1.0)])),
        ("signed".into(), sum(vec![sin(e(0), 1.0), cos(e(1) * 1.5, 0.7)])),
    ])
}

/// e^{λ R tanh(⟨x,h⟩/R)}, an exponential ramp that saturates at ±R.
#[derive(Clone)]
pub struct Ramp {
    pub label: String,
    pub direction: DVector<f64>,
    pub lambda: f64,
    pub cap: f64,
}

impl fmt::Debug for Ramp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ramp({}, lambda={}, cap={})", self.label, self.lambda, self.cap)
    }
}

impl Ramp {
    pub fn eval(&self, u: f64) -> f64 {
        if self.lambda == 0.0 {
            return 1.0;
        }
        (self.lambda * self.cap * (u / self.cap).tanh()).exp()
    }
}

pub fn ramp_family(dim: usize, lambdas: &[f64], cap: f64) -> Vec<Ramp> {
    let h = unit(dim, &[(0, 1.0)]);
    lambdas
        .iter()
        .map(|&lambda| Ramp { label: format!("ramp_{lambda}"), direction: h.clone(), lambda, cap })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharpnessRow {
    pub p: f64,
    pub p_max: f64,
    pub best: String,
    pub ratio: f64,
    pub error: f64,
    /// ratio > 1 + 3·error (+ rounding floor)
    pub violation: bool,
}

/// ‖P_{s,t}ψ(⟨·,h⟩)‖_{L^p(γ_s)} / ‖ψ(⟨·,h⟩)‖_{L^q(γ_t)} for one ramp, by nested
/// one-dimensional Gauss–Hermite, with a coarse-rule error estimate.
fn ramp_ratio(setup: &HyperSetup, ramp: &Ramp, q: f64, p: f64) -> (f64, f64) {
    let h = &ramp.direction;
    let uh = setup.transition.u.apply_adjoint(h);
    let inner_sd = setup.transition.q.quadratic_form(h).max(0.0).sqrt();
    let outer_sd = setup.gamma_s.cov().quadratic_form(&uh).max(0.0).sqrt();
    let target_sd = setup.gamma_t.cov().quadratic_form(h).max(0.0).sqrt();
    let compute = |rule: &GaussHermite| {
        let smoothed = |a: f64| rule.expect(|z| ramp.eval(a + inner_sd * z));
        let lhs = rule.expect(|z| smoothed(outer_sd * z).abs().powf(p)).powf(1.0 / p);
        let rhs = rule.expect(|z| ramp.eval(target_sd * z).abs().powf(q)).powf(1.0 / q);
        lhs / rhs
    };
    let fine = compute(GaussHermite::standard());
    let coarse = compute(&GaussHermite::new(COARSE_NODES));
    (fine, (fine - coarse).abs())
}

/// Rounding allowance on ratios, so constants (ratio exactly 1) never flag.
pub const RATIO_FLOOR: f64 = 1e-12;

/// Largest ratio over the family at each p; ratios above 1 + 3·error are
/// violations of the norm inequality at that exponent.
pub fn sharpness_probe(setup: &HyperSetup, q: f64, p_grid: &[f64], family: &[Ramp]) -> Vec<SharpnessRow> {
    let p_max = setup.p_max(q);
    p_grid
        .iter()
        .map(|&p| {
            let (best, ratio, error) = family
                .iter()
                .map(|r| {
                    let (ratio, err) = ramp_ratio(setup, r, q, p);
                    (r.label.clone(), ratio, err)
                })
                .fold((String::new(), f64::NEG_INFINITY, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            SharpnessRow { p, p_max, best, ratio, error, violation: ratio > 1.0 + 3.0 * error + RATIO_FLOOR }
        })
        .collect()
}

/// Cells (q, fraction of p_max, probe); see `hyper_cells`.
pub fn hyper_lattice(
    setup: &HyperSetup,
    qs: &[f64],
    fractions: &[f64],
    probes: &[(String, TrigPolynomial)],
    method: Integration,
) -> Result<Vec<HyperReport>> {
    let exponents: Vec<(f64, f64)> = qs
        .iter()
        .flat_map(|&q| fractions.iter().map(move |&frac| (q, (frac * setup.p_max(q)).max(1.0))))
        .collect();
    hyper_cells(setup, &exponents, probes, method)
}

/// Cells (q, p, probe) with the probe varying fastest, evaluated in parallel;
/// cell `i` uses substream `i` of `key` under Monte Carlo.
pub fn hyper_cells(
    setup: &HyperSetup,
    exponents: &[(f64, f64)],
    probes: &[(String, TrigPolynomial)],
    method: Integration,
) -> Result<Vec<HyperReport>> {
    let cells: Vec<(f64, f64, &(String, TrigPolynomial))> =
        exponents.iter().flat_map(|&(q, p)| probes.iter().map(move |probe| (q, p, probe))).collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, (q, p, (label, phi)))| {
            let m = match method {
                Integration::MonteCarlo { count, key } => Integration::MonteCarlo { count, key: key.substream(i as u64) },
                other => other,
            };
            hyper_check(setup, label, phi, *q, *p, m)
        })
        .collect()
}

pub const LATTICE_HEADER: &str = "s,t,q,p,p_max,lhs,rhs,slack,stderr,verdict";

pub fn lattice_csv(rows: &[HyperReport]) -> String {
    let mut out = String::from(LATTICE_HEADER);
    out.push('\n');
    for r in rows {
        let nums = [r.s, r.t, r.q, r.p, r.p_max, r.lhs, r.rhs, r.slack, r.error];
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        out.push_str(&nums.iter().map(|&v| fmt17(v)).collect::<Vec<_>>().join(","));
        out.push(',');
        out.push_str(verdict);
        out.push('\n');
    }
    out
}
