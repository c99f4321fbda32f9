//! Time-dependent operator families A(t), B(t) on an n-dimensional truncation,
//! and the catalog of concrete models.
//!
//! Every family carries a query window `[t_min, t_max]`. Boundedness and decay
//! quantities (`sup ‖B‖`, the mode suprema λ_k, the decay certificates) are
//! computed on that window only. Families built with [`Extension::Frozen`]
//! hold their coefficients constant outside the window, which makes the
//! windowed quantities valid on the whole line; this is what infinite-horizon
//! integrals such as Q(t, −∞) integrate against.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymOperator};
use crate::quadrature::{integrate, Tolerance};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Upper bound on the trace of ∫_{−∞}^{s*} U(t,r)Q(r)U(t,r)* dr, as a function of (t, s*).
pub type TailBoundFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_min: f64,
    pub t_max: f64,
}

impl Window {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite() && t_min < t_max) {
            return Err(Error::BadParameter(format!("empty window [{t_min}, {t_max}]")));
        }
        Ok(Self { t_min, t_max })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::WindowExceeded { time: t, t_min: self.t_min, t_max: self.t_max })
        }
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.t_min, self.t_max)
    }

    pub fn span(&self) -> f64 {
        self.t_max - self.t_min
    }
}

/// How coefficients behave outside the query window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extension {
    /// Coefficient formulas are used as given on the whole line.
    Analytic,
    /// Coefficients are frozen at the nearest window edge.
    Frozen,
}

/// ‖U(t,s)‖ ≤ M e^{−ζ(t−s)}
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorDecay {
    pub m: f64,
    pub zeta: f64,
}

/// ‖U(t,s)‖_{H_s → H_t} ≤ C e^{−η(t−s)} / (t−s)^α
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameronMartinDecay {
    pub c: f64,
    pub eta: f64,
    pub alpha: f64,
}

#[derive(Clone)]
pub enum Kind {
    /// A(t) = diag(a_k(t)), B(t) = diag(b_k(t)).
    Diagonal { rates: Vec<ScalarFn>, noises: Vec<ScalarFn> },
    /// A(t) = a(t) I with a general B(t).
    Scalar { rate: ScalarFn, noise: MatrixFn },
    Dense { drift: MatrixFn, noise: MatrixFn },
}

impl fmt::Debug for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Diagonal { rates, .. } => write!(f, "Diagonal({} modes)", rates.len()),
            Kind::Scalar { .. } => write!(f, "Scalar"),
            Kind::Dense { .. } => write!(f, "Dense"),
        }
    }
}

/// A non-autonomous Ornstein–Uhlenbeck family on the truncated space.
#[derive(Clone)]
pub struct OperatorFamily {
    pub name: String,
    dim: usize,
    window: Window,
    extension: Extension,
    kind: Kind,
    pub decay: Option<OperatorDecay>,
    pub hr_decay: Option<CameronMartinDecay>,
    /// sup ‖B(t)‖ over the window.
    pub noise_bound: f64,
    /// λ_k = sup_t a_k(t) over the window (diagonal and scalar kinds).
    pub mode_sup: Option<Vec<f64>>,
    pub tail_bound: Option<TailBoundFn>,
    /// Diagnostics recorded at construction (cutoffs, partial sums, ...).
    pub metadata: BTreeMap<String, f64>,
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("window", &self.window)
            .field("kind", &self.kind)
            .field("decay", &self.decay)
            .field("hr_decay", &self.hr_decay)
            .field("noise_bound", &self.noise_bound)
            .finish()
    }
}

impl OperatorFamily {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    pub fn kind(&self) -> &Kind {
        &self.kind
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.kind, Kind::Diagonal { .. })
    }

    fn at(&self, t: f64) -> f64 {
        match self.extension {
            Extension::Analytic => t,
            Extension::Frozen => self.window.clamp(t),
        }
    }

    /// Points where coefficients may lose smoothness.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.extension {
            Extension::Analytic => Vec::new(),
            Extension::Frozen => vec![self.window.t_min, self.window.t_max],
        }
    }

    /// a_k(t) for diagonal families, a(t) for scalar ones.
    pub fn mode_rate(&self, k: usize, t: f64) -> f64 {
        let t = self.at(t);
        match &self.kind {
            Kind::Diagonal { rates, .. } => rates[k](t),
            Kind::Scalar { rate, .. } => rate(t),
            Kind::Dense { drift, .. } => drift(t)[(k, k)],
        }
    }

    pub fn mode_noise(&self, k: usize, t: f64) -> f64 {
        let t = self.at(t);
        match &self.kind {
            Kind::Diagonal { noises, .. } => noises[k](t),
            Kind::Scalar { noise, .. } | Kind::Dense { noise, .. } => noise(t)[(k, k)],
        }
    }

    pub fn drift(&self, t: f64) -> DMatrix<f64> {
        let t = self.at(t);
        match &self.kind {
            Kind::Diagonal { rates, .. } => {
                DMatrix::from_diagonal(&DVector::from_iterator(self.dim, rates.iter().map(|a| a(t))))
            }
            Kind::Scalar { rate, .. } => DMatrix::identity(self.dim, self.dim) * rate(t),
            Kind::Dense { drift, .. } => drift(t),
        }
    }

    /// A(t)* = A(t)ᵀ on the real truncation.
    pub fn drift_adjoint(&self, t: f64) -> DMatrix<f64> {
        self.drift(t).transpose()
    }

    pub fn noise(&self, t: f64) -> DMatrix<f64> {
        let t = self.at(t);
        match &self.kind {
            Kind::Diagonal { noises, .. } => {
                DMatrix::from_diagonal(&DVector::from_iterator(self.dim, noises.iter().map(|b| b(t))))
            }
            Kind::Scalar { noise, .. } | Kind::Dense { noise, .. } => noise(t),
        }
    }

    /// Q(t) = B(t)B(t)*
    pub fn diffusion(&self, t: f64) -> SymOperator {
        let b = self.noise(t);
        SymOperator::symmetrized(&b * b.transpose()).expect("square noise operator")
    }

    /// Q(t)^{1/2}
    pub fn diffusion_sqrt(&self, t: f64) -> Result<SymOperator> {
        match &self.kind {
            Kind::Diagonal { noises, .. } => {
                let t = self.at(t);
                let d: Vec<f64> = noises.iter().map(|b| b(t).abs()).collect();
                Ok(SymOperator::from_diagonal(&d))
            }
            _ => linalg::sqrt_psd(&self.diffusion(t)),
        }
    }

    pub fn check_window(&self, t: f64) -> Result<()> {
        self.window.check(t)
    }

    pub fn check_pair(&self, s: f64, t: f64) -> Result<()> {
        if !(s <= t) {
            return Err(Error::BadParameter(format!("need s <= t, got s={s}, t={t}")));
        }
        self.window.check(s)?;
        self.window.check(t)
    }

    /// Σ_k ‖b_k‖²_∞ / |λ_k| over the truncation (diagonal kind only); the
    /// finite analogue of the trace condition.
    pub fn trace_condition_partial_sum(&self) -> Option<f64> {
        let sups = self.mode_sup.as_ref()?;
        let b_sup = self.metadata_vec("b_sup")?;
        Some(sups.iter().zip(&b_sup).map(|(l, b)| b * b / l.abs()).sum())
    }

    fn metadata_vec(&self, prefix: &str) -> Option<Vec<f64>> {
        let v: Vec<f64> = (0..self.dim)
            .map_while(|k| self.metadata.get(&format!("{prefix}[{k}]")).copied())
            .collect();
        (v.len() == self.dim).then_some(v)
    }
}

const SUP_GRID_STEP: f64 = 1e-3;

/// sup of `f` over the window: grid search at step 1e-3, then golden-section
/// refinement around the best grid point.
pub fn window_sup(f: &dyn Fn(f64) -> f64, window: Window) -> f64 {
    let steps = ((window.span() / SUP_GRID_STEP).ceil() as usize).max(1);
    let h = window.span() / steps as f64;
    let (mut best_i, mut best) = (0usize, f64::NEG_INFINITY);
    for i in 0..=steps {
        let v = f(window.t_min + h * i as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let lo = window.clamp(window.t_min + h * (best_i as f64 - 1.0));
    let hi = window.clamp(window.t_min + h * (best_i as f64 + 1.0));
    best.max(golden_max(f, lo, hi))
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}

fn sampled_times(window: Window, count: usize) -> impl Iterator<Item = f64> {
    (0..=count).map(move |i| window.t_min + window.span() * i as f64 / count as f64)
}

fn diagonal_family(
    name: &str,
    window: Window,
    extension: Extension,
    rates: Vec<ScalarFn>,
    noises: Vec<ScalarFn>,
) -> OperatorFamily {
    let dim = rates.len();
    let mode_sup: Vec<f64> = rates.iter().map(|a| window_sup(&|t| a(t), window)).collect();
    let b_sup: Vec<f64> = noises.iter().map(|b| window_sup(&|t| b(t).abs(), window)).collect();
    let noise_bound = b_sup.iter().copied().fold(0.0, f64::max);
    let lambda0 = mode_sup.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut metadata = BTreeMap::new();
    for k in 0..dim {
        metadata.insert(format!("lambda[{k}]"), mode_sup[k]);
        metadata.insert(format!("b_sup[{k}]"), b_sup[k]);
    }
    metadata.insert("lambda0".into(), lambda0);
    let mut family = OperatorFamily {
        name: name.into(),
        dim,
        window,
        extension,
        kind: Kind::Diagonal { rates, noises },
        decay: Some(OperatorDecay { m: 1.0, zeta: -lambda0 }),
        hr_decay: None,
        noise_bound,
        mode_sup: Some(mode_sup),
        tail_bound: None,
        metadata,
    };
    if let Some(sum) = family.trace_condition_partial_sum() {
        family.metadata.insert("trace_condition_partial_sum".into(), sum);
    }
    family
}

/// The explicit diagonal example: a_k(t) = −(k²+c1)/(t^{2k}+1),
/// b_k(t) = sin(kt) + c2, modes k = 1..=n.
pub fn make_diagonal_paper(n: usize, c1: f64, c2: f64, window: Window) -> Result<OperatorFamily> {
    if n == 0 {
        return Err(Error::BadParameter("mode count must be >= 1".into()));
    }
    if !(c1 > 0.0) {
        return Err(Error::BadParameter(format!("c1 must be > 0, got {c1}")));
    }
    if !(c2 > 1.0) {
        return Err(Error::BadParameter(format!("c2 must be > 1, got {c2}")));
    }
    let rates: Vec<ScalarFn> = (1..=n)
        .map(|k| {
            let kf = k as f64;
            let two_k = 2 * k as i32;
            Arc::new(move |t: f64| -(kf * kf + c1) / (t.powi(two_k) + 1.0)) as ScalarFn
        })
        .collect();
    let noises: Vec<ScalarFn> = (1..=n)
        .map(|k| {
            let kf = k as f64;
            Arc::new(move |t: f64| (kf * t).sin() + c2) as ScalarFn
        })
        .collect();
    let mut family = diagonal_family("diagonal_time_varying", window, Extension::Frozen, rates, noises);
    let lambda0 = family.metadata["lambda0"];
    // |b_k(s)| / |b_k(t)| ≤ (c2+1)/(c2−1)
    family.hr_decay = Some(CameronMartinDecay { c: (c2 + 1.0) / (c2 - 1.0), eta: -lambda0, alpha: 0.0 });
    family.metadata.insert("c1".into(), c1);
    family.metadata.insert("c2".into(), c2);
    Ok(family)
}

/// Constant coefficients a_k ≡ lambda, b_k ≡ b.
pub fn make_diagonal_constant(n: usize, lambda: f64, b: f64, window: Window) -> Result<OperatorFamily> {
    if n == 0 {
        return Err(Error::BadParameter("mode count must be >= 1".into()));
    }
    if !(lambda < 0.0) {
        return Err(Error::BadParameter(format!("lambda must be < 0, got {lambda}")));
    }
    let rates: Vec<ScalarFn> = (0..n).map(|_| Arc::new(move |_: f64| lambda) as ScalarFn).collect();
    let noises: Vec<ScalarFn> = (0..n).map(|_| Arc::new(move |_: f64| b) as ScalarFn).collect();
    let mut family = diagonal_family("diagonal_constant", window, Extension::Analytic, rates, noises);
    family.decay = Some(OperatorDecay { m: 1.0, zeta: -lambda });
    family.hr_decay = Some(CameronMartinDecay { c: 1.0, eta: -lambda, alpha: 0.0 });
    family.noise_bound = b.abs();
    Ok(family)
}

/// A(t) = a(t) I with a caller-supplied B(t).
///
/// With `for_inequalities`, sup a < 0 on the window is required.
pub fn make_scalar(
    dim: usize,
    window: Window,
    rate: ScalarFn,
    noise: MatrixFn,
    for_inequalities: bool,
) -> Result<OperatorFamily> {
    if dim == 0 {
        return Err(Error::BadParameter("dimension must be >= 1".into()));
    }
    let b0 = noise(window.t_min);
    if b0.nrows() != dim || b0.ncols() != dim {
        return Err(Error::BadParameter(format!("B(t) must be {dim}x{dim}")));
    }
    let a0 = window_sup(&|t| rate(t), window);
    if for_inequalities && !(a0 < 0.0) {
        return Err(Error::BadParameter(format!("sup a = {a0} must be < 0 for inequality experiments")));
    }
    let mut noise_bound = 0.0_f64;
    let mut constant_noise = true;
    for t in sampled_times(window, 400) {
        let b = noise(t);
        noise_bound = noise_bound.max(linalg::operator_norm(&b));
        constant_noise &= (&b - &b0).amax() <= 1e-14 * b0.amax().max(1.0);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("a0".into(), a0);
    Ok(OperatorFamily {
        name: "scalar".into(),
        dim,
        window,
        extension: Extension::Frozen,
        kind: Kind::Scalar { rate, noise },
        decay: Some(OperatorDecay { m: 1.0, zeta: -a0 }),
        hr_decay: constant_noise.then_some(CameronMartinDecay { c: 1.0, eta: -a0, alpha: 0.0 }),
        noise_bound,
        mode_sup: Some(vec![a0; dim]),
        tail_bound: None,
        metadata,
    })
}

/// Finite-difference realization of u ↦ (a(t,x)u')' + a0(t,x)u on [0, 1]
/// with Dirichlet boundary and `m` interior points (h = 1/(m+1)).
pub fn make_parabolic_1d(
    m: usize,
    window: Window,
    diffusion: FieldFn,
    reaction: FieldFn,
    noise: Option<MatrixFn>,
) -> Result<OperatorFamily> {
    if m == 0 {
        return Err(Error::BadParameter("need at least one interior point".into()));
    }
    let h = 1.0 / (m as f64 + 1.0);
    for t in sampled_times(window, 200) {
        for i in 0..=(2 * m + 2) {
            let x = i as f64 * h / 2.0;
            let a = diffusion(t, x);
            if !(a > 0.0) {
                return Err(Error::BadParameter(format!("diffusion a({t}, {x}) = {a} is not positive")));
            }
            let r = reaction(t, x);
            if r > 0.0 {
                return Err(Error::BadParameter(format!("reaction a0({t}, {x}) = {r} is positive")));
            }
        }
    }
    let drift: MatrixFn = Arc::new(move |t: f64| {
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            let x = (i as f64 + 1.0) * h;
            let left = diffusion(t, x - h / 2.0);
            let right = diffusion(t, x + h / 2.0);
            a[(i, i)] = -(left + right) / (h * h) + reaction(t, x);
            if i > 0 {
                a[(i, i - 1)] = left / (h * h);
            }
            if i + 1 < m {
                a[(i, i + 1)] = right / (h * h);
            }
        }
        a
    });
    let noise = noise.unwrap_or_else(|| Arc::new(move |_: f64| DMatrix::identity(m, m)));
    let mut top = f64::NEG_INFINITY;
    let mut noise_bound = 0.0_f64;
    let mut identity_noise = true;
    for t in sampled_times(window, 200) {
        let a = SymOperator::symmetrized(drift(t))?;
        top = top.max(linalg::spectral(&a)?.max_eigenvalue());
        let b = noise(t);
        noise_bound = noise_bound.max(linalg::operator_norm(&b));
        identity_noise &= (&b - DMatrix::<f64>::identity(m, m)).amax() == 0.0;
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("h".into(), h);
    metadata.insert("max_eigenvalue".into(), top);
    Ok(OperatorFamily {
        name: "parabolic_1d".into(),
        dim: m,
        window,
        extension: Extension::Frozen,
        kind: Kind::Dense { drift, noise },
        // symmetric A(t): ‖U(t,s)‖ ≤ exp(∫ λ_max(A)) ≤ e^{top (t−s)}
        decay: (top < 0.0).then_some(OperatorDecay { m: 1.0, zeta: -top }),
        hr_decay: (identity_noise && top < 0.0).then_some(CameronMartinDecay { c: 1.0, eta: -top, alpha: 0.0 }),
        noise_bound,
        mode_sup: None,
        tail_bound: None,
        metadata,
    })
}

/// A general dense family; decay metadata is whatever the caller certifies.
pub fn make_dense(
    dim: usize,
    window: Window,
    drift: MatrixFn,
    noise: MatrixFn,
    decay: Option<OperatorDecay>,
) -> Result<OperatorFamily> {
    let a = drift(window.t_min);
    let b = noise(window.t_min);
    if a.shape() != (dim, dim) || b.shape() != (dim, dim) {
        return Err(Error::BadParameter(format!("A(t), B(t) must be {dim}x{dim}")));
    }
    let noise_bound = sampled_times(window, 200)
        .map(|t| linalg::operator_norm(&noise(t)))
        .fold(0.0, f64::max);
    Ok(OperatorFamily {
        name: "dense".into(),
        dim,
        window,
        extension: Extension::Frozen,
        kind: Kind::Dense { drift, noise },
        decay,
        hr_decay: None,
        noise_bound,
        mode_sup: None,
        tail_bound: None,
        metadata: BTreeMap::new(),
    })
}

/// Cutoff magnitude for the improper integral of a_1 in the non-uniqueness demo.
pub const NONUNIQUE_RATE_CUTOFF: f64 = 1e-12;

/// Two evolution systems for the same family: a_1(t) = −t²/(1+t⁴) has
/// maximum 0 and is integrable, a_k = −k² for k ≥ 2.
///
/// b_1(t) = 1/(1+t²) is square-integrable so that Q(t, −∞) stays finite
/// along the neutral first mode; b_k ≡ 1 for k ≥ 2.
pub fn make_nonunique_demo(n: usize, window: Window) -> Result<OperatorFamily> {
    if n < 2 {
        return Err(Error::BadParameter(format!("non-uniqueness demo needs n >= 2, got {n}")));
    }
    let mut rates: Vec<ScalarFn> = vec![Arc::new(|t: f64| -t * t / (1.0 + t.powi(4)))];
    let mut noises: Vec<ScalarFn> = vec![Arc::new(|t: f64| 1.0 / (1.0 + t * t))];
    for k in 2..=n {
        let kk = (k * k) as f64;
        rates.push(Arc::new(move |_: f64| -kk));
        noises.push(Arc::new(|_: f64| 1.0));
    }
    let mut family = diagonal_family("nonunique_demo", window, Extension::Analytic, rates, noises);
    // λ_1 = 0, so no exponential decay on the whole space; the tail of
    // Q(t, −∞) is bounded mode by mode instead:
    //   mode 1: ∫_{−∞}^{s*} b_1² ≤ 1/(3|s*|³)   (s* < 0, since exp(2∫a_1) ≤ 1)
    //   mode k: e^{−2k²(t−s*)}/(2k²)
    family.decay = Some(OperatorDecay { m: 1.0, zeta: 0.0 });
    family.tail_bound = Some(Arc::new(move |t: f64, s_star: f64| {
        let first = if s_star < 0.0 { 1.0 / (3.0 * s_star.abs().powi(3)) } else { f64::INFINITY };
        let rest: f64 = (2..=n)
            .map(|k| {
                let kk = (k * k) as f64;
                (-2.0 * kk * (t - s_star)).exp() / (2.0 * kk)
            })
            .sum();
        first + rest
    }));
    // |a_1(σ)| ≈ σ^{-2} for large |σ|
    let cutoff = -(1.0 / NONUNIQUE_RATE_CUTOFF).sqrt();
    family.metadata.insert("rate_cutoff_time".into(), cutoff);
    family.metadata.insert("rate_cutoff_tail_estimate".into(), 1.0 / cutoff.abs());
    Ok(family)
}

/// m_t = exp(∫_{−∞}^t a_1(τ) dτ) for the non-uniqueness demo, with the lower
/// limit cut where |a_1| falls below [`NONUNIQUE_RATE_CUTOFF`].
///
/// The truncated tail only rescales m_t by a t-independent factor, so the
/// transport identity m_t / m_s = exp(∫_s^t a_1) is unaffected.
pub fn nonunique_mass(family: &OperatorFamily, t: f64) -> Result<f64> {
    let cutoff = *family
        .metadata
        .get("rate_cutoff_time")
        .ok_or_else(|| Error::BadParameter("family is not the non-uniqueness demo".into()))?;
    let rate = |tau: f64| family.mode_rate(0, tau);
    // split so the adaptive rule sees the bump near 0 at its own scale
    let mut pieces = vec![cutoff, -1e3, -10.0];
    pieces.retain(|&p| p < t);
    pieces.push(t);
    let mut total = 0.0;
    for w in pieces.windows(2) {
        total += integrate(rate, w[0], w[1], Tolerance::new(1e-15, 1e-13))?.value;
    }
    Ok(total.exp())
}

/// Config-level description of a catalog model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    /// a_k ≡ lambda, b_k ≡ b ("DC" with n=8, lambda=−1, b=1).
    DiagonalConstant { n: usize, lambda: f64, b: f64 },
    DiagonalTimeVarying { n: usize, c1: f64, c2: f64 },
    /// a(t) = a_mean + a_amp sin(a_freq t), B = b I.
    Scalar { n: usize, a_mean: f64, a_amp: f64, a_freq: f64, b: f64 },
    /// a(t,x) = nu (1 + nu_amp sin(t) x), a0(t,x) = −omega (1 + omega_amp cos(t)).
    Parabolic1d { m: usize, nu: f64, nu_amp: f64, omega: f64, omega_amp: f64 },
    NonuniqueDemo { n: usize },
}

impl ModelSpec {
    pub fn dc() -> Self {
        ModelSpec::DiagonalConstant { n: 8, lambda: -1.0, b: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ModelSpec::DiagonalConstant { n, .. }
            | ModelSpec::DiagonalTimeVarying { n, .. }
            | ModelSpec::Scalar { n, .. }
            | ModelSpec::NonuniqueDemo { n } => n,
            ModelSpec::Parabolic1d { m, .. } => m,
        }
    }

    pub fn build(&self, window: Window) -> Result<OperatorFamily> {
        match *self {
            ModelSpec::DiagonalConstant { n, lambda, b } => make_diagonal_constant(n, lambda, b, window),
            ModelSpec::DiagonalTimeVarying { n, c1, c2 } => make_diagonal_paper(n, c1, c2, window),
            ModelSpec::Scalar { n, a_mean, a_amp, a_freq, b } => make_scalar(
                n,
                window,
                Arc::new(move |t| a_mean + a_amp * (a_freq * t).sin()),
                Arc::new(move |_| DMatrix::identity(n, n) * b),
                false,
            ),
            ModelSpec::Parabolic1d { m, nu, nu_amp, omega, omega_amp } => make_parabolic_1d(
                m,
                window,
                Arc::new(move |t, x| nu * (1.0 + nu_amp * t.sin() * x)),
                Arc::new(move |t, _| -omega * (1.0 + omega_amp * t.cos())),
                None,
            ),
            ModelSpec::NonuniqueDemo { n } => make_nonunique_demo(n, window),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelCatalogEntry {
    pub name: &'static str,
    pub spec: ModelSpec,
    pub doc: &'static str,
}

pub fn catalog() -> Vec<ModelCatalogEntry> {
    vec![
        ModelCatalogEntry {
            name: "dc",
            spec: ModelSpec::dc(),
            doc: "constant diagonal model a_k = -1, b_k = 1; U(t,s) = e^{-(t-s)} I",
        },
        ModelCatalogEntry {
            name: "diagonal_time_varying",
            spec: ModelSpec::DiagonalTimeVarying { n: 4, c1: 1.0, c2: 2.0 },
            doc: "a_k(t) = -(k^2+c1)/(t^{2k}+1), b_k(t) = sin(kt)+c2, frozen outside the window",
        },
        ModelCatalogEntry {
            name: "scalar",
            spec: ModelSpec::Scalar { n: 4, a_mean: -1.0, a_amp: 0.5, a_freq: 1.0, b: 1.0 },
            doc: "A(t) = a(t) I with a(t) = -1 - 0.5 sin t, B = I",
        },
        ModelCatalogEntry {
            name: "parabolic_1d",
            spec: ModelSpec::Parabolic1d { m: 5, nu: 1.0, nu_amp: 0.3, omega: 1.0, omega_amp: 0.5 },
            doc: "finite-difference (a u')' + a0 u on [0,1], Dirichlet, B = I",
        },
        ModelCatalogEntry {
            name: "nonunique_demo",
            spec: ModelSpec::NonuniqueDemo { n: 3 },
            doc: "a_1 = -t^2/(1+t^4) (max 0, integrable), a_k = -k^2; two evolution systems",
        },
    ]
}
