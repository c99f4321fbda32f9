//! The evolution operator U(t,s) and its decay certificates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CameronMartinMetric};
use crate::model::{Kind, OperatorFamily};
use crate::quadrature::{integrate, Tolerance};

/// Target for the Richardson error estimate of the dense integrator.
pub const DENSE_TOL: f64 = 1e-10;
const MAX_STEPS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// exp(∫ a_k) per mode.
    ClosedForm,
    /// Classical fourth-order Runge–Kutta with `steps` uniform steps.
    Integrated { step: f64, order: u32, steps: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionMap {
    pub s: f64,
    pub t: f64,
    pub matrix: DMatrix<f64>,
    pub method: Method,
}

impl EvolutionMap {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    /// U(t,s)* h
    pub fn apply_adjoint(&self, h: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(h)
    }

    pub fn norm(&self) -> f64 {
        linalg::operator_norm(&self.matrix)
    }
}

fn quad_tol() -> Tolerance {
    Tolerance::new(1e-14, 1e-13)
}

/// ∫_s^t a_k for every mode of a diagonal family (one entry for scalar kind).
pub(crate) fn mode_log_decay(model: &OperatorFamily, s: f64, t: f64) -> Result<Vec<f64>> {
    let breaks = model.breakpoints();
    let count = match model.kind() {
        Kind::Diagonal { .. } => model.dim(),
        Kind::Scalar { .. } => 1,
        Kind::Dense { .. } => unreachable!("dense families have no mode rates"),
    };
    (0..count)
        .map(|k| {
            let mut pieces = vec![s];
            pieces.extend(breaks.iter().copied().filter(|&b| b > s && b < t));
            pieces.push(t);
            let mut total = 0.0;
            for w in pieces.windows(2) {
                total += integrate(|tau| model.mode_rate(k, tau), w[0], w[1], quad_tol())?.value;
            }
            Ok(total)
        })
        .collect()
}

enum Flow {
    /// M' = A(τ) M
    Forward,
    /// V' = V A(τ)*, which yields U(t,s)*.
    Adjoint,
}

fn rk4(model: &OperatorFamily, s: f64, t: f64, steps: usize, flow: &Flow) -> DMatrix<f64> {
    let n = model.dim();
    let h = (t - s) / steps as f64;
    let rhs = |tau: f64, m: &DMatrix<f64>| match flow {
        Flow::Forward => model.drift(tau) * m,
        Flow::Adjoint => m * model.drift_adjoint(tau),
    };
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..steps {
        let tau = s + h * i as f64;
        let k1 = rhs(tau, &m);
        let k2 = rhs(tau + 0.5 * h, &(&m + &k1 * (0.5 * h)));
        let k3 = rhs(tau + 0.5 * h, &(&m + &k2 * (0.5 * h)));
        let k4 = rhs(tau + h, &(&m + &k3 * h));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    m
}

fn integrate_flow(model: &OperatorFamily, s: f64, t: f64, flow: Flow) -> Result<EvolutionMap> {
    let n = model.dim();
    if s == t {
        return Ok(EvolutionMap { s, t, matrix: DMatrix::identity(n, n), method: Method::ClosedForm });
    }
    let stiffness = [s, 0.5 * (s + t), t]
        .iter()
        .map(|&tau| model.drift(tau).abs().row_sum().max())
        .fold(0.0_f64, f64::max);
    let mut steps = (((t - s) * stiffness / 0.5).ceil() as usize).max(4);
    let mut coarse = rk4(model, s, t, steps, &flow);
    loop {
        if steps * 2 > MAX_STEPS {
            return Err(Error::IntegratorDiverged(format!(
                "no convergence on [{s}, {t}] with {steps} steps"
            )));
        }
        let fine = rk4(model, s, t, steps * 2, &flow);
        if fine.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegratorDiverged(format!("non-finite state on [{s}, {t}]")));
        }
        let err = (&fine - &coarse).amax() / 15.0;
        steps *= 2;
        // relative: strongly damped flows must stay accurate at their own scale
        if err <= DENSE_TOL * fine.amax().max(f64::MIN_POSITIVE) {
            return Ok(EvolutionMap {
                s,
                t,
                matrix: fine,
                method: Method::Integrated { step: (t - s) / steps as f64, order: 4, steps },
            });
        }
        coarse = fine;
    }
}

/// U(t,s) for s ≤ t inside the model window.
pub fn evolve(model: &OperatorFamily, s: f64, t: f64) -> Result<EvolutionMap> {
    model.check_pair(s, t)?;
    evolve_unchecked(model, s, t)
}

/// As [`evolve`] but without the window check; used for tails below the window.
pub(crate) fn evolve_unchecked(model: &OperatorFamily, s: f64, t: f64) -> Result<EvolutionMap> {
    let n = model.dim();
    match model.kind() {
        Kind::Diagonal { .. } => {
            let logs = mode_log_decay(model, s, t)?;
            let diag = DVector::from_iterator(n, logs.iter().map(|l| l.exp()));
            Ok(EvolutionMap { s, t, matrix: DMatrix::from_diagonal(&diag), method: Method::ClosedForm })
        }
        Kind::Scalar { .. } => {
            let log = mode_log_decay(model, s, t)?[0];
            Ok(EvolutionMap { s, t, matrix: DMatrix::identity(n, n) * log.exp(), method: Method::ClosedForm })
        }
        Kind::Dense { .. } => integrate_flow(model, s, t, Flow::Forward),
    }
}

/// U(t,s)* as the transpose of [`evolve`].
pub fn adjoint_evolve(model: &OperatorFamily, s: f64, t: f64) -> Result<EvolutionMap> {
    let mut u = evolve(model, s, t)?;
    u.matrix.transpose_mut();
    Ok(u)
}

/// U(t,s)* by integrating ∂_t V = V A(t)* directly, independent of [`evolve`].
pub fn integrate_adjoint(model: &OperatorFamily, s: f64, t: f64) -> Result<EvolutionMap> {
    model.check_pair(s, t)?;
    integrate_flow(model, s, t, Flow::Adjoint)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayMode {
    /// ‖U(t,s)‖_{L(X)} ≤ M e^{−ζ(t−s)}
    OperatorNorm,
    /// ‖U(t,s)‖_{L(H_s, H_t)} ≤ C e^{−η(t−s)} / (t−s)^α
    CameronMartin,
}

/// A bound `constant · e^{−rate τ} / τ^alpha` that majorizes every sampled norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub mode: DecayMode,
    pub constant: f64,
    pub rate: f64,
    pub alpha: f64,
    /// RMS residual of the log-linear least-squares fit.
    pub residual: f64,
    pub fit_slack: f64,
    pub grid: Vec<(f64, f64)>,
    pub norms: Vec<f64>,
}

/// α values below this are snapped to zero.
pub const ALPHA_SNAP: f64 = 1e-3;
const ALPHA_MAX: f64 = 0.499;
const FIT_SLACK: f64 = 1e-12;

impl DecayCertificate {
    pub fn bound(&self, tau: f64) -> f64 {
        self.constant * (-self.rate * tau).exp() / tau.powf(self.alpha)
    }

    /// Every sample lies under the bound (up to `fit_slack`).
    pub fn is_sound(&self) -> bool {
        self.grid
            .iter()
            .zip(&self.norms)
            .all(|(&(s, t), &n)| n <= self.bound(t - s) * (1.0 + self.fit_slack))
    }

    pub fn window(&self) -> (f64, f64) {
        let lo = self.grid.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = self.grid.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// ‖Q(t)^{−1/2} U(t,s) Q(s)^{1/2}‖ on the range of Q(s)^{1/2}.
pub fn cameron_martin_norm(model: &OperatorFamily, s: f64, t: f64) -> Result<f64> {
    let u = evolve(model, s, t)?;
    cameron_martin_norm_of(model, &u)
}

pub(crate) fn cameron_martin_norm_of(model: &OperatorFamily, u: &EvolutionMap) -> Result<f64> {
    let rs = model.diffusion_sqrt(u.s)?;
    let rt = CameronMartinMetric::new(model.diffusion_sqrt(u.t)?)?;
    let mapped = &u.matrix * rs.matrix();
    let leak = rt.kernel_projection() * &mapped;
    if leak.amax() > 1e-8 * mapped.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::FitFailed(format!(
            "U({}, {}) does not map H_s into H_t (kernel leakage {:.3e})",
            u.t,
            u.s,
            leak.amax()
        )));
    }
    Ok(linalg::operator_norm(&(rt.pseudo_inverse() * mapped)))
}

fn measure(model: &OperatorFamily, s: f64, t: f64, mode: DecayMode) -> Result<f64> {
    match mode {
        DecayMode::OperatorNorm => Ok(evolve(model, s, t)?.norm()),
        DecayMode::CameronMartin => cameron_martin_norm(model, s, t),
    }
}

/// Least squares for y ≈ c − rate·τ − α·ln τ; α is fixed when `alpha` is Some.
fn fit_log_linear(taus: &[f64], ys: &[f64], alpha: Option<f64>) -> (f64, f64, f64) {
    let distinct = {
        let mut v: Vec<f64> = taus.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        v.len()
    };
    let alpha = match (alpha, distinct) {
        (Some(a), _) => Some(a),
        (None, d) if d < 3 => Some(0.0),
        (None, _) => None,
    };
    if distinct == 1 {
        // exact interpolation with unit constant
        let a = alpha.unwrap_or(0.0);
        let tau = taus[0];
        let rate = -(ys[0] + a * tau.ln()) / tau;
        return (0.0, rate, a);
    }
    match alpha {
        Some(a) => {
            let design = DMatrix::from_fn(taus.len(), 2, |i, j| if j == 0 { 1.0 } else { -taus[i] });
            let rhs = DVector::from_iterator(ys.len(), ys.iter().zip(taus).map(|(y, t)| y + a * t.ln()));
            let sol = design.svd(true, true).solve(&rhs, 1e-14).expect("svd solve");
            (sol[0], sol[1], a)
        }
        None => {
            let design = DMatrix::from_fn(taus.len(), 3, |i, j| match j {
                0 => 1.0,
                1 => -taus[i],
                _ => -taus[i].ln(),
            });
            let rhs = DVector::from_column_slice(ys);
            let sol = design.svd(true, true).solve(&rhs, 1e-14).expect("svd solve");
            (sol[0], sol[1], sol[2])
        }
    }
}

/// Fits a decay certificate to norms measured on `grid` (pairs with t = s are skipped).
pub fn fit_decay(model: &OperatorFamily, grid: &[(f64, f64)], mode: DecayMode) -> Result<DecayCertificate> {
    let grid: Vec<(f64, f64)> = grid.iter().copied().filter(|(s, t)| t > s).collect();
    if grid.is_empty() {
        return Err(Error::FitFailed("grid has no pairs with s < t".into()));
    }
    let norms: Vec<f64> = grid
        .par_iter()
        .map(|&(s, t)| measure(model, s, t, mode))
        .collect::<Result<_>>()?;
    if let Some(bad) = norms.iter().find(|n| !(n.is_finite() && **n > 0.0)) {
        return Err(Error::FitFailed(format!("measured norm {bad} is zero or non-finite")));
    }
    let taus: Vec<f64> = grid.iter().map(|(s, t)| t - s).collect();
    let ys: Vec<f64> = norms.iter().map(|n| n.ln()).collect();

    let fixed = match mode {
        DecayMode::OperatorNorm => Some(0.0),
        DecayMode::CameronMartin => None,
    };
    let (mut c, mut rate, mut alpha) = fit_log_linear(&taus, &ys, fixed);
    if fixed.is_none() {
        let clamped = if alpha < ALPHA_SNAP { 0.0 } else { alpha.min(ALPHA_MAX) };
        if clamped != alpha {
            (c, rate, alpha) = fit_log_linear(&taus, &ys, Some(clamped));
        }
    }
    let predicted: Vec<f64> = taus.iter().map(|t| c - rate * t - alpha * t.ln()).collect();
    let residual =
        (ys.iter().zip(&predicted).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
    let excess = ys.iter().zip(&predicted).map(|(y, p)| y - p).fold(0.0_f64, f64::max);
    c += excess;
    Ok(DecayCertificate {
        mode,
        constant: c.exp(),
        rate,
        alpha,
        residual,
        fit_slack: FIT_SLACK,
        grid,
        norms,
    })
}

/// Pairs s < t drawn from an evenly spaced lattice of `points` times in [lo, hi].
pub fn lattice_pairs(lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    let times: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let mut pairs = Vec::new();
    for (i, &s) in times.iter().enumerate() {
        for &t in &times[i + 1..] {
            pairs.push((s, t));
        }
    }
    pairs
}
