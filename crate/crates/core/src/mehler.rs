//! The transition operator P_{s,t} through the Mehler formula, the generator
//! L(r), and the differentiation identities linking them.
//!
//! On exponentials P_{s,t} e^{i⟨·,h⟩}(x) = e^{−½⟨Q(t,s)h,h⟩} e^{i⟨x,U(t,s)*h⟩},
//! so trigonometric polynomials are transformed exactly, term by term.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::q_kernel;
use crate::error::{Error, Result};
use crate::evolution::{self, cameron_martin_norm, EvolutionMap};
use crate::linalg::{self, SymOperator};
use crate::mc::{self, MCEstimate};
use crate::measures::GaussianMeasure;
use crate::model::OperatorFamily;
use crate::rng::StreamKey;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub coef: Complex64,
    pub freq: DVector<f64>,
}

/// φ(x) = Σ c_j e^{i⟨x,h_j⟩}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    dim: usize,
    terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::from_terms(dim, vec![(Complex64::new(c, 0.0), DVector::zeros(dim))]).expect("dimension matches")
    }

    pub fn exponential(h: DVector<f64>) -> Self {
        let dim = h.len();
        Self { dim, terms: vec![TrigTerm { coef: Complex64::new(1.0, 0.0), freq: h }] }
    }

    /// cos⟨·,h⟩
    pub fn cos(h: DVector<f64>) -> Self {
        let dim = h.len();
        let half = Complex64::new(0.5, 0.0);
        Self { dim, terms: vec![TrigTerm { coef: half, freq: h.clone() }, TrigTerm { coef: half, freq: -h }] }
    }

    /// sin⟨·,h⟩
    pub fn sin(h: DVector<f64>) -> Self {
        let dim = h.len();
        let c = Complex64::new(0.0, -0.5);
        Self { dim, terms: vec![TrigTerm { coef: c, freq: h.clone() }, TrigTerm { coef: -c, freq: -h }] }
    }

    pub fn from_terms(dim: usize, terms: Vec<(Complex64, DVector<f64>)>) -> Result<Self> {
        if let Some((_, h)) = terms.iter().find(|(_, h)| h.len() != dim) {
            return Err(Error::BadParameter(format!("frequency of length {} in dimension {dim}", h.len())));
        }
        Ok(Self { dim, terms: terms.into_iter().map(|(coef, freq)| TrigTerm { coef, freq }).collect() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn eval(&self, x: &DVector<f64>) -> Complex64 {
        self.terms.iter().map(|t| t.coef * Complex64::from_polar(1.0, x.dot(&t.freq))).sum()
    }

    /// Gradient of the real part.
    pub fn gradient_re(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for t in &self.terms {
            let d = I * t.coef * Complex64::from_polar(1.0, x.dot(&t.freq));
            g.axpy(d.re, &t.freq, 1.0);
        }
        g
    }

    pub fn scale(mut self, c: Complex64) -> Self {
        for t in &mut self.terms {
            t.coef *= c;
        }
        self
    }

    pub fn add(mut self, other: &TrigPolynomial) -> Result<Self> {
        self.check_dim(other)?;
        self.terms.extend(other.terms.iter().cloned());
        Ok(self)
    }

    /// Pointwise product: coefficients multiply, frequencies add.
    pub fn mul(&self, other: &TrigPolynomial) -> Result<Self> {
        self.check_dim(other)?;
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(TrigTerm { coef: a.coef * b.coef, freq: &a.freq + &b.freq });
            }
        }
        Ok(Self { dim: self.dim, terms })
    }

    /// Complex conjugate: c e^{i⟨x,h⟩} ↦ c̄ e^{−i⟨x,h⟩}.
    pub fn conj(&self) -> Self {
        let terms = self.terms.iter().map(|t| TrigTerm { coef: t.coef.conj(), freq: -&t.freq }).collect();
        Self { dim: self.dim, terms }
    }

    /// Merges terms whose frequencies agree to `tol` and drops zero coefficients.
    pub fn compact(&self, tol: f64) -> Self {
        let mut out: Vec<TrigTerm> = Vec::new();
        for t in &self.terms {
            match out.iter_mut().find(|o| (&o.freq - &t.freq).amax() <= tol) {
                Some(o) => o.coef += t.coef,
                None => out.push(t.clone()),
            }
        }
        out.retain(|t| t.coef.norm() > 0.0);
        Self { dim: self.dim, terms: out }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check_dim(&self, other: &TrigPolynomial) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::BadParameter(format!("dimensions {} and {} differ", self.dim, other.dim)));
        }
        Ok(())
    }
}

pub type ProfileFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ProfileGradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ProfileHessFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// φ(x) = ψ(⟨x,h_1⟩, …, ⟨x,h_k⟩) with orthonormal h_i.
#[derive(Clone)]
pub struct CylindricalFunction {
    directions: Vec<DVector<f64>>,
    profile: ProfileFn,
    gradient: ProfileGradFn,
    hessian: Option<ProfileHessFn>,
}

impl fmt::Debug for CylindricalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CylindricalFunction")
            .field("directions", &self.directions)
            .field("has_hessian", &self.hessian.is_some())
            .finish()
    }
}

pub const ORTHONORMAL_TOL: f64 = 1e-12;

impl CylindricalFunction {
    pub fn new(
        directions: Vec<DVector<f64>>,
        profile: ProfileFn,
        gradient: ProfileGradFn,
        hessian: Option<ProfileHessFn>,
    ) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::BadParameter("at least one direction required".into()));
        }
        let dim = directions[0].len();
        for (i, a) in directions.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::BadParameter("directions of different lengths".into()));
            }
            for (j, b) in directions.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (a.dot(b) - expect).abs() > ORTHONORMAL_TOL {
                    return Err(Error::BadParameter(format!("directions {i}, {j} are not orthonormal")));
                }
            }
        }
        Ok(Self { directions, profile, gradient, hessian })
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    pub fn directions(&self) -> &[DVector<f64>] {
        &self.directions
    }

    pub fn coordinates(&self, x: &DVector<f64>) -> Vec<f64> {
        self.directions.iter().map(|h| x.dot(h)).collect()
    }

    pub fn profile(&self, u: &[f64]) -> f64 {
        (self.profile)(u)
    }

    pub fn profile_gradient(&self, u: &[f64]) -> Vec<f64> {
        (self.gradient)(u)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (self.profile)(&self.coordinates(x))
    }

    /// ∇φ(x) = Σ ∂_iψ h_i
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = (self.gradient)(&self.coordinates(x));
        let mut out = DVector::zeros(self.dim());
        for (gi, h) in g.iter().zip(&self.directions) {
            out.axpy(*gi, h, 1.0);
        }
        out
    }

    /// ∇²φ(x) = Σ ∂_ijψ h_i h_jᵀ
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let hess = self.hessian.as_ref().ok_or_else(|| Error::BadParameter("profile has no Hessian".into()))?;
        let d = hess(&self.coordinates(x));
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (i, hi) in self.directions.iter().enumerate() {
            for (j, hj) in self.directions.iter().enumerate() {
                out += hi * hj.transpose() * d[(i, j)];
            }
        }
        Ok(out)
    }
}

/// U(t,s) and Q(t,s) for one pair, the data of P_{s,t}.
#[derive(Debug, Clone)]
pub struct Transition {
    pub s: f64,
    pub t: f64,
    pub u: EvolutionMap,
    pub q: SymOperator,
}

impl Transition {
    pub fn new(model: &OperatorFamily, s: f64, t: f64) -> Result<Self> {
        let u = evolution::evolve(model, s, t)?;
        let q = q_kernel(model, s, t)?.q;
        Ok(Self { s, t, u, q })
    }

    /// P_{s,t}φ as a trigonometric polynomial with frequencies U(t,s)*h_j.
    pub fn transform(&self, phi: &TrigPolynomial) -> TrigPolynomial {
        let terms = phi
            .terms
            .iter()
            .map(|term| TrigTerm {
                coef: term.coef * (-0.5 * self.q.quadratic_form(&term.freq)).exp(),
                freq: self.u.apply_adjoint(&term.freq),
            })
            .collect();
        TrigPolynomial { dim: phi.dim, terms }
    }

    pub fn apply(&self, phi: &TrigPolynomial, x: &DVector<f64>) -> Complex64 {
        self.transform(phi).eval(x)
    }

    /// The law N(U(t,s)x, Q(t,s)).
    pub fn law(&self, x: &DVector<f64>) -> Result<GaussianMeasure> {
        GaussianMeasure::new(self.u.apply(x), self.q.clone())
    }

    pub fn apply_mc<F>(&self, phi: F, x: &DVector<f64>, count: usize, key: StreamKey) -> Result<MCEstimate>
    where
        F: Fn(&DVector<f64>) -> f64 + Sync,
    {
        Ok(self.law(x)?.expect_mc(count, key, phi))
    }
}

pub fn transform(model: &OperatorFamily, s: f64, t: f64, phi: &TrigPolynomial) -> Result<TrigPolynomial> {
    Ok(Transition::new(model, s, t)?.transform(phi))
}

pub fn apply_exact(model: &OperatorFamily, s: f64, t: f64, phi: &TrigPolynomial, x: &DVector<f64>) -> Result<Complex64> {
    Ok(Transition::new(model, s, t)?.apply(phi, x))
}

/// Monte Carlo P_{s,t}φ(x) over samples of N(U(t,s)x, Q(t,s)).
pub fn apply_mc<F>(
    model: &OperatorFamily,
    s: f64,
    t: f64,
    phi: F,
    x: &DVector<f64>,
    count: usize,
    key: StreamKey,
) -> Result<MCEstimate>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    Transition::new(model, s, t)?.apply_mc(phi, x, count, key)
}

#[derive(Debug, Clone, Copy)]
pub enum Observable<'a> {
    Trig(&'a TrigPolynomial),
    Cylindrical(&'a CylindricalFunction),
}

/// L(r)φ(x) on exponentials: Σ c_j [i⟨x,A(r)*h_j⟩ − ½⟨Q(r)h_j,h_j⟩] e^{i⟨x,h_j⟩}.
pub fn generator_trig(model: &OperatorFamily, r: f64, phi: &TrigPolynomial, x: &DVector<f64>) -> Complex64 {
    let a = model.drift(r);
    let q = model.diffusion(r);
    // ⟨x, A*h⟩ = ⟨Ax, h⟩
    let ax = a * x;
    phi.terms
        .iter()
        .map(|t| {
            let factor = I * ax.dot(&t.freq) - 0.5 * q.quadratic_form(&t.freq);
            t.coef * factor * Complex64::from_polar(1.0, x.dot(&t.freq))
        })
        .sum()
}

/// L(r)φ(x) = ½ Σ ⟨Q(r)∇²φ(x)h_i,h_i⟩ + Σ ⟨x,A(r)*h_i⟩⟨∇φ(x),h_i⟩.
pub fn generator_cylindrical(model: &OperatorFamily, r: f64, phi: &CylindricalFunction, x: &DVector<f64>) -> Result<f64> {
    let q = model.diffusion(r);
    let a = model.drift(r);
    let hess = phi.hessian(x)?;
    let grad = phi.gradient(x);
    let qh = q.matrix() * hess;
    let ax = a * x;
    let mut value = 0.0;
    for h in phi.directions() {
        value += 0.5 * h.dot(&(&qh * h)) + ax.dot(h) * grad.dot(h);
    }
    Ok(value)
}

pub fn generator_apply(model: &OperatorFamily, r: f64, phi: Observable<'_>, x: &DVector<f64>) -> Result<Complex64> {
    match phi {
        Observable::Trig(p) => Ok(generator_trig(model, r, p, x)),
        Observable::Cylindrical(c) => Ok(Complex64::new(generator_cylindrical(model, r, c, x)?, 0.0)),
    }
}

/// L(s)P_{s,t}φ(x) in closed form:
/// Σ c_j [i⟨x,A(s)*U*h⟩ − ½‖Q(s)^{1/2}U*h‖²] e^{−½⟨Q(t,s)h,h⟩} e^{i⟨x,U*h⟩}.
pub fn l_outside(model: &OperatorFamily, tr: &Transition, phi: &TrigPolynomial, x: &DVector<f64>) -> Complex64 {
    let a = model.drift(tr.s);
    let qs = model.diffusion(tr.s);
    phi.terms
        .iter()
        .map(|term| {
            let uh = tr.u.apply_adjoint(&term.freq);
            let factor = I * x.dot(&a.tr_mul(&uh)) - 0.5 * qs.quadratic_form(&uh);
            let decay = (-0.5 * tr.q.quadratic_form(&term.freq)).exp();
            term.coef * factor * decay * Complex64::from_polar(1.0, x.dot(&uh))
        })
        .sum()
}

/// P_{s,t}(L(t)φ)(x) in closed form:
/// Σ c_j [i⟨x,U*A(t)*h⟩ − ⟨Q(t,s)A(t)*h,h⟩ − ½‖Q(t)^{1/2}h‖²] e^{−½⟨Q(t,s)h,h⟩} e^{i⟨x,U*h⟩}.
pub fn l_inside(model: &OperatorFamily, tr: &Transition, phi: &TrigPolynomial, x: &DVector<f64>) -> Complex64 {
    let a = model.drift(tr.t);
    let qt = model.diffusion(tr.t);
    phi.terms
        .iter()
        .map(|term| {
            let h = &term.freq;
            let ah = a.tr_mul(h);
            let uah = tr.u.apply_adjoint(&ah);
            let factor = I * x.dot(&uah) - tr.q.apply(&ah).dot(h) - 0.5 * qt.quadratic_form(h);
            let decay = (-0.5 * tr.q.quadratic_form(h)).exp();
            term.coef * factor * decay * Complex64::from_polar(1.0, x.dot(&tr.u.apply_adjoint(h)))
        })
        .sum()
}

/// P_{s,t}(L(t)φ)(x) from Gaussian moments: for Y ~ N(m, Q),
/// E[⟨Y,g⟩e^{i⟨Y,h⟩}] = (⟨m,g⟩ + i⟨Qh,g⟩) e^{i⟨m,h⟩ − ½⟨Qh,h⟩}.
pub fn l_inside_by_moments(model: &OperatorFamily, tr: &Transition, phi: &TrigPolynomial, x: &DVector<f64>) -> Complex64 {
    let a = model.drift(tr.t);
    let qt = model.diffusion(tr.t);
    let m = tr.u.apply(x);
    phi.terms
        .iter()
        .map(|term| {
            let h = &term.freq;
            let g = a.tr_mul(h);
            let qh = tr.q.apply(h);
            let linear = Complex64::new(m.dot(&g), qh.dot(&g));
            let gauss = Complex64::from_polar((-0.5 * qh.dot(h)).exp(), m.dot(h));
            term.coef * (I * linear - 0.5 * qt.quadratic_form(h)) * gauss
        })
        .sum()
}

/// `count` trigonometric polynomials built on consecutive directions of `probe_set`:
/// cos⟨h_i,·⟩ + ½ sin⟨h_{i+1},·⟩ + ¼ e^{i⟨h_i + h_{i+1},·⟩}.
pub fn trig_probes(dim: usize, count: usize, key: crate::rng::StreamKey) -> Vec<TrigPolynomial> {
    let dirs = crate::measures::probe_set(dim, count + 1, key);
    dirs.windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            TrigPolynomial::cos(a.clone())
                .add(&TrigPolynomial::sin(b.clone()).scale(0.5.into()))
                .and_then(|p| p.add(&TrigPolynomial::exponential(a + b).scale(0.25.into())))
                .expect("same dimension")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FdComparison {
    pub finite_difference: Complex64,
    pub formula: Complex64,
    pub error: f64,
}

impl FdComparison {
    fn new(finite_difference: Complex64, formula: Complex64) -> Self {
        Self { finite_difference, formula, error: (finite_difference - formula).norm() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifferentiationReport {
    pub s: f64,
    pub t: f64,
    pub fd_step: f64,
    /// ∂_s P_{s,t}φ(x) against −L(s)P_{s,t}φ(x).
    pub ds: FdComparison,
    /// ∂_t P_{s,t}φ(x) against P_{s,t}L(t)φ(x).
    pub dt: FdComparison,
    /// Same comparisons at half the step.
    pub ds_half: FdComparison,
    pub dt_half: FdComparison,
    /// |L(s)P φ by generator on the transform − closed form|.
    pub l_outside_gap: f64,
    /// |P L(t)φ closed form − Gaussian-moment evaluation|.
    pub l_inside_gap: f64,
}

impl DifferentiationReport {
    pub fn max_error(&self) -> f64 {
        self.ds.error.max(self.dt.error)
    }

    /// Error ratios under step halving, ≈ 4 for a second-order difference.
    pub fn order_ratios(&self) -> (f64, f64) {
        (self.ds.error / self.ds_half.error, self.dt.error / self.dt_half.error)
    }
}

/// Central differences of P_{s,t}φ(x) in s and in t against the generator formulas.
pub fn check_differentiation(
    model: &OperatorFamily,
    s: f64,
    t: f64,
    phi: &TrigPolynomial,
    x: &DVector<f64>,
    fd_step: f64,
) -> Result<DifferentiationReport> {
    if !(s < t) {
        return Err(Error::BadParameter("need s < t".into()));
    }
    if !(fd_step > 0.0) {
        return Err(Error::BadParameter("fd_step must be positive".into()));
    }
    let tr = Transition::new(model, s, t)?;
    let transformed = tr.transform(phi);
    let ds_formula = -generator_trig(model, s, &transformed, x);
    let dt_formula = l_inside(model, &tr, phi, x);
    let l_outside_gap = (generator_trig(model, s, &transformed, x) - l_outside(model, &tr, phi, x)).norm();
    let l_inside_gap = (dt_formula - l_inside_by_moments(model, &tr, phi, x)).norm();

    let p = |a: f64, b: f64| apply_exact(model, a, b, phi, x);
    let fd = |step: f64| -> Result<(FdComparison, FdComparison)> {
        let ds = (p(s + step, t)? - p(s - step, t)?) / (2.0 * step);
        let dt = (p(s, t + step)? - p(s, t - step)?) / (2.0 * step);
        Ok((FdComparison::new(ds, ds_formula), FdComparison::new(dt, dt_formula)))
    };
    let (ds, dt) = fd(fd_step)?;
    let (ds_half, dt_half) = fd(fd_step / 2.0)?;
    Ok(DifferentiationReport { s, t, fd_step, ds, dt, ds_half, dt_half, l_outside_gap, l_inside_gap })
}

/// A bounded C¹ observable given with its gradient.
#[derive(Clone)]
pub struct SmoothObservable {
    pub value: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    pub gradient: Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
}

impl SmoothObservable {
    pub fn constant(c: f64, dim: usize) -> Self {
        Self { value: Arc::new(move |_| c), gradient: Arc::new(move |_| DVector::zeros(dim)) }
    }

    /// Real part of a trigonometric polynomial.
    pub fn from_trig(p: TrigPolynomial) -> Self {
        let q = p.clone();
        Self { value: Arc::new(move |x| p.eval(x).re), gradient: Arc::new(move |x| q.gradient_re(x)) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientReport {
    /// ‖Q(s)^{1/2}∇P_{s,t}φ(x)‖
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// ‖U(t,s)‖_{H_s→H_t}
    pub cm_norm: f64,
    /// P_{s,t}(‖Q(t)^{1/2}∇φ‖)(x)
    pub smoothed_gradient: f64,
    pub smoothed_stderr: f64,
    pub rhs: f64,
    pub combined_stderr: f64,
    pub pass: bool,
}

/// Monte Carlo check of ‖Q(s)^{1/2}∇P_{s,t}φ(x)‖ ≤ ‖U(t,s)‖_{H_s→H_t} P_{s,t}(‖Q(t)^{1/2}∇φ‖)(x),
/// with ∇P_{s,t}φ(x) = E[U(t,s)*∇φ(U(t,s)x + Y)].
pub fn gradient_estimate_check(
    model: &OperatorFamily,
    s: f64,
    t: f64,
    phi: &SmoothObservable,
    x: &DVector<f64>,
    count: usize,
    key: StreamKey,
) -> Result<GradientReport> {
    let tr = Transition::new(model, s, t)?;
    let law = tr.law(x)?;
    let qs_half = linalg::sqrt_psd(&model.diffusion(s))?;
    let qt_half = linalg::sqrt_psd(&model.diffusion(t))?;
    let cm_norm = cameron_martin_norm(model, s, t)?;
    let n = model.dim();
    // layout: [Σv (n), Σvvᵀ (n²), Σw, Σw²]
    let width = n + n * n + 2;
    let sums = mc::accumulate(count, key, width, |rng, acc| {
        let y = law.draw(rng);
        let g = (phi.gradient)(&y);
        let v = qs_half.matrix() * tr.u.apply_adjoint(&g);
        for i in 0..n {
            acc[i] += v[i];
            for j in 0..n {
                acc[n + i * n + j] += v[i] * v[j];
            }
        }
        let w = (qt_half.matrix() * &g).norm();
        acc[n + n * n] += w;
        acc[n + n * n + 1] += w * w;
    });
    let cnt = count as f64;
    let mean = DVector::from_fn(n, |i, _| sums[i] / cnt);
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let raw = sums[n + i * n + j] / cnt - mean[i] * mean[j];
        raw * cnt / (cnt - 1.0).max(1.0)
    });
    let lhs = mean.norm();
    let lhs_stderr = if lhs > 0.0 { (mean.dot(&(&cov * &mean)).max(0.0)).sqrt() / lhs / cnt.sqrt() } else { 0.0 };
    let smoothed = MCEstimate::from_sums(sums[n + n * n], sums[n + n * n + 1], count, key);
    let rhs = cm_norm * smoothed.value;
    let combined_stderr = (lhs_stderr.powi(2) + (cm_norm * smoothed.stderr).powi(2)).sqrt();
    Ok(GradientReport {
        lhs,
        lhs_stderr,
        cm_norm,
        smoothed_gradient: smoothed.value,
        smoothed_stderr: smoothed.stderr,
        rhs,
        combined_stderr,
        pass: lhs <= rhs + 3.0 * combined_stderr,
    })
}
