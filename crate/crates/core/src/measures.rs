//! Gaussian measures, the evolution system γ_t = N(0, Q(t,−∞)), and the
//! characteristic-function test for evolution systems of measures.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::q_infinity;
use crate::error::{Error, Result};
use crate::linalg::{self, SymOperator};
use crate::mc::{self, MCEstimate};
use crate::mehler::{Transition, TrigPolynomial};
use crate::model::{nonunique_mass, OperatorFamily};
use crate::rng::{CounterRng, StreamKey};

/// N(m, Q), sampled through the spectral factor V Λ^{1/2}.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: SymOperator,
    factor: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: SymOperator) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::BadParameter(format!("mean of length {} for covariance of dim {}", mean.len(), cov.dim())));
        }
        let decomp = linalg::clamp_psd(&cov)?;
        // zero eigenvalues give zero columns: those modes stay at the mean
        let root = decomp.eigenvalues.map(f64::sqrt);
        let factor = &decomp.eigenvectors * DMatrix::from_diagonal(&root);
        Ok(Self { mean, cov, factor })
    }

    pub fn centered(cov: SymOperator) -> Result<Self> {
        Self::new(DVector::zeros(cov.dim()), cov)
    }

    pub fn dirac(point: DVector<f64>) -> Self {
        let n = point.len();
        Self { mean: point, cov: SymOperator::zeros(n), factor: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SymOperator {
        &self.cov
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// exp(i⟨m,h⟩ − ½⟨Qh,h⟩)
    pub fn char_fn(&self, h: &DVector<f64>) -> Complex64 {
        Complex64::from_polar((-0.5 * self.cov.quadratic_form(h)).exp(), self.mean.dot(h))
    }

    /// Convolution with δ_v.
    pub fn shifted(&self, v: &DVector<f64>) -> Self {
        Self { mean: &self.mean + v, cov: self.cov.clone(), factor: self.factor.clone() }
    }

    /// One draw m + V Λ^{1/2} z.
    pub fn draw(&self, rng: &mut CounterRng) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        rng.fill_normal(z.as_mut_slice());
        &self.mean + &self.factor * z
    }

    /// `count` draws as the columns of a dim × count matrix.
    pub fn sample(&self, count: usize, key: StreamKey) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, count);
        if n == 0 {
            return out;
        }
        out.as_mut_slice().par_chunks_mut(n * mc::CHUNK).enumerate().for_each(|(c, block)| {
            let mut rng = key.substream(c as u64).rng();
            for col in block.chunks_mut(n) {
                col.copy_from_slice(self.draw(&mut rng).as_slice());
            }
        });
        out
    }

    /// Monte Carlo mean of `f`, drawing the same points as [`Self::sample`].
    pub fn expect_mc<F>(&self, count: usize, key: StreamKey, f: F) -> MCEstimate
    where
        F: Fn(&DVector<f64>) -> f64 + Sync,
    {
        mc::estimate(count, key, |rng| f(&self.draw(rng)))
    }
}

/// ∫ Σ c_j e^{i⟨x,h_j⟩} dμ = Σ c_j μ̂(h_j)
pub fn mean_functional(mu: &GaussianMeasure, phi: &TrigPolynomial) -> Complex64 {
    phi.terms().iter().map(|t| t.coef * mu.char_fn(&t.freq)).sum()
}

/// How a system moves away from γ_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shift {
    None,
    /// γ_t ⋆ δ_{m_t v} with m_t = exp(∫_{−∞}^t a_1); transported by the flow.
    Mass { direction: DVector<f64> },
    /// γ_t ⋆ δ_{v / m_t}.
    ReciprocalMass { direction: DVector<f64> },
}

/// A time-indexed family of Gaussian measures.
pub struct EvolutionSystem<'a> {
    pub label: String,
    model: &'a OperatorFamily,
    tol_tail: f64,
    shift: Shift,
    cache: Mutex<HashMap<u64, Arc<GaussianMeasure>>>,
}

impl<'a> EvolutionSystem<'a> {
    /// γ_t = N(0, Q(t,−∞)).
    pub fn gamma(model: &'a OperatorFamily, tol_tail: f64) -> Self {
        Self::with_shift(model, tol_tail, Shift::None, "gamma")
    }

    pub fn with_shift(model: &'a OperatorFamily, tol_tail: f64, shift: Shift, label: &str) -> Self {
        Self { label: label.to_string(), model, tol_tail, shift, cache: Mutex::new(HashMap::new()) }
    }

    pub fn model(&self) -> &OperatorFamily {
        self.model
    }

    pub fn measure(&self, t: f64) -> Result<Arc<GaussianMeasure>> {
        if let Some(m) = self.cache.lock().expect("cache lock").get(&t.to_bits()) {
            return Ok(m.clone());
        }
        let gamma = GaussianMeasure::centered(q_infinity(self.model, t, self.tol_tail)?.q)?;
        let mu = match &self.shift {
            Shift::None => gamma,
            Shift::Mass { direction } => gamma.shifted(&(direction * nonunique_mass(self.model, t)?)),
            Shift::ReciprocalMass { direction } => gamma.shifted(&(direction / nonunique_mass(self.model, t)?)),
        };
        let mu = Arc::new(mu);
        self.cache.lock().expect("cache lock").insert(t.to_bits(), mu.clone());
        Ok(mu)
    }

    pub fn char_fn(&self, t: f64, h: &DVector<f64>) -> Result<Complex64> {
        Ok(self.measure(t)?.char_fn(h))
    }
}

/// Basis vectors, the all-ones vector, adjacent sums e_i + e_{i+1}, then
/// seeded random directions with norms in [0.5, 2], cut or filled to `count`.
pub fn probe_set(dim: usize, count: usize, key: StreamKey) -> Vec<DVector<f64>> {
    let mut probes: Vec<DVector<f64>> = Vec::new();
    for i in 0..dim {
        probes.push(DVector::from_fn(dim, |k, _| if k == i { 1.0 } else { 0.0 }));
    }
    if dim > 1 {
        probes.push(DVector::from_element(dim, 1.0));
        for i in 0..dim - 1 {
            probes.push(DVector::from_fn(dim, |k, _| if k == i || k == i + 1 { 1.0 } else { 0.0 }));
        }
    }
    probes.truncate(count);
    let mut rng = key.rng();
    while probes.len() < count {
        let mut v = DVector::zeros(dim);
        rng.fill_normal(v.as_mut_slice());
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let length = 0.5 + 1.5 * rng.next_f64();
        probes.push(v * (length / norm));
    }
    probes
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub s: f64,
    pub t: f64,
    pub probe: usize,
    /// ν̂_t(h)
    pub lhs: Complex64,
    /// e^{−½⟨Q(t,s)h,h⟩} ν̂_s(U(t,s)*h)
    pub rhs: Complex64,
    pub abs_error: f64,
    pub rel_error: f64,
    /// ∫φ dν_t − ∫P_{s,t}φ dν_s for φ = e^{i⟨·,h⟩}, through the transformed polynomial.
    pub dual_error: Complex64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub label: String,
    pub probe_count: usize,
    pub rows: Vec<InvarianceRow>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Largest gap between the characteristic-function and dual forms.
    pub max_form_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares both sides of ν̂_t(h) = e^{−½⟨Q(t,s)h,h⟩} ν̂_s(U(t,s)*h) for
/// every pair s ≤ t and probe h.
pub fn verify_invariance(
    system: &EvolutionSystem<'_>,
    pairs: &[(f64, f64)],
    probes: &[DVector<f64>],
    tolerance: f64,
) -> Result<InvarianceReport> {
    let model = system.model();
    let mut times: Vec<f64> = pairs.iter().flat_map(|&(s, t)| [s, t]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times.par_iter().map(|&t| system.measure(t).map(|_| ())).collect::<Result<Vec<_>>>()?;

    let per_pair: Vec<Vec<InvarianceRow>> = pairs
        .par_iter()
        .map(|&(s, t)| {
            if s > t {
                return Err(Error::BadParameter(format!("pair ({s}, {t}) has s > t")));
            }
            let tr = Transition::new(model, s, t)?;
            let nu_s = system.measure(s)?;
            let nu_t = system.measure(t)?;
            Ok(probes
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let lhs = nu_t.char_fn(h);
                    let rhs = Complex64::from((-0.5 * tr.q.quadratic_form(h)).exp()) * nu_s.char_fn(&tr.u.apply_adjoint(h));
                    let phi = TrigPolynomial::exponential(h.clone());
                    let dual_error = mean_functional(&nu_t, &phi) - mean_functional(&nu_s, &tr.transform(&phi));
                    let abs_error = (lhs - rhs).norm();
                    InvarianceRow {
                        s,
                        t,
                        probe: i,
                        lhs,
                        rhs,
                        abs_error,
                        rel_error: abs_error / lhs.norm().max(f64::MIN_POSITIVE),
                        dual_error,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<InvarianceRow> = per_pair.into_iter().flatten().collect();
    let max_abs_error = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    let max_rel_error = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    let max_form_gap = rows.iter().map(|r| ((r.lhs - r.rhs) - r.dual_error).norm()).fold(0.0, f64::max);
    Ok(InvarianceReport {
        label: system.label.clone(),
        probe_count: probes.len(),
        rows,
        max_abs_error,
        max_rel_error,
        max_form_gap,
        tolerance,
        pass: max_abs_error <= tolerance,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicRow {
    pub s: f64,
    pub value: Complex64,
    pub gap: f64,
    pub envelope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub t: f64,
    pub limit: Complex64,
    pub rows: Vec<ErgodicRow>,
    pub monotone: bool,
    pub within_envelope: bool,
    pub final_gap: f64,
}

/// P_{s,t}φ(x0) along a decreasing sequence of s against m_t(φ) = ∫φ dγ_t.
///
/// Envelope: Σ|c_j| (‖x0‖‖h_j‖ M e^{−ζτ} + ‖h_j‖² M⁴K²/(4ζ) e^{−2ζτ}), τ = t − s.
pub fn verify_ergodic_limit(
    model: &OperatorFamily,
    t: f64,
    x0: &DVector<f64>,
    s_values: &[f64],
    phi: &TrigPolynomial,
    tol_tail: f64,
) -> Result<ErgodicReport> {
    let decay = model.decay.filter(|d| d.zeta > 0.0).ok_or(Error::NoDecay)?;
    let gamma = GaussianMeasure::centered(q_infinity(model, t, tol_tail)?.q)?;
    let limit = mean_functional(&gamma, phi);
    let k = model.noise_bound;
    let (m, zeta) = (decay.m, decay.zeta);
    let rows = s_values
        .iter()
        .map(|&s| {
            let value = Transition::new(model, s, t)?.apply(phi, x0);
            let tau = t - s;
            let envelope: f64 = phi
                .terms()
                .iter()
                .map(|term| {
                    let h = term.freq.norm();
                    term.coef.norm()
                        * (x0.norm() * h * m * (-zeta * tau).exp()
                            + h * h * m.powi(4) * k * k / (4.0 * zeta) * (-2.0 * zeta * tau).exp())
                })
                .sum();
            Ok(ErgodicRow { s, value, gap: (value - limit).norm(), envelope })
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = rows.windows(2).all(|w| w[1].gap <= w[0].gap);
    let within_envelope = rows.iter().all(|r| r.gap <= r.envelope * (1.0 + 1e-9) + tol_tail);
    let final_gap = rows.last().map_or(0.0, |r| r.gap);
    Ok(ErgodicReport { t, limit, rows, monotone, within_envelope, final_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Window};
    use crate::rng::seed_stream;
    use approx::assert_relative_eq;

    fn dc() -> OperatorFamily {
        ModelSpec::dc().build(Window::new(-10.0, 10.0).unwrap()).unwrap()
    }

    fn e1(n: usize) -> DVector<f64> {
        DVector::from_fn(n, |k, _| if k == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn char_fn_values() {
        let model = dc();
        let sys = EvolutionSystem::gamma(&model, 1e-12);
        let g = sys.measure(0.3).unwrap();
        assert_eq!(g.char_fn(&DVector::zeros(8)), Complex64::new(1.0, 0.0));
        assert_relative_eq!(g.char_fn(&e1(8)).re, (-0.25_f64).exp(), epsilon = 1e-11);
        assert_relative_eq!(g.char_fn(&e1(8)).re, 0.778_800_8, epsilon = 1e-7);
    }

    #[test]
    fn shift_multiplies_char_fn() {
        let g = GaussianMeasure::centered(SymOperator::from_diagonal(&[0.5, 0.2, 0.1])).unwrap();
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let h = DVector::from_vec(vec![1.0, 0.5, -0.25]);
        let direct = GaussianMeasure::new(v.clone(), g.cov().clone()).unwrap().char_fn(&h);
        let conv = g.char_fn(&h) * Complex64::from_polar(1.0, v.dot(&h));
        assert!((g.shifted(&v).char_fn(&h) - conv).norm() < 1e-15);
        assert!((direct - conv).norm() < 1e-15);
    }

    #[test]
    fn degenerate_sampling_sits_at_mean() {
        let m = DVector::from_vec(vec![1.0, -2.0]);
        let mu = GaussianMeasure::new(m.clone(), SymOperator::zeros(2)).unwrap();
        let xs = mu.sample(100, seed_stream(1, "deg"));
        for c in xs.column_iter() {
            assert_eq!(c, m);
        }
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let model = dc();
        let sys = EvolutionSystem::gamma(&model, 1e-12);
        let g = sys.measure(0.0).unwrap();
        let key = seed_stream(9, "gamma");
        let xs = g.sample(100_000, key);
        for i in 0..8 {
            let row = xs.row(i);
            let mean = row.mean();
            let var = row.map(|v| v * v).mean() - mean * mean;
            assert!(mean.abs() < 4.0 * (0.5_f64 / 1e5).sqrt());
            assert!((var - 0.5).abs() < 0.02);
        }
        assert_eq!(xs, g.sample(100_000, key));
        // samples follow the same chunk streams as expect_mc
        let est = g.expect_mc(100_000, key, |x| x[0]);
        assert_relative_eq!(est.value, xs.row(0).mean(), epsilon = 1e-12);
    }

    #[test]
    fn mean_functional_values() {
        let model = dc();
        let g = EvolutionSystem::gamma(&model, 1e-12).measure(0.0).unwrap();
        assert_eq!(mean_functional(&g, &TrigPolynomial::constant(8, 1.0)).re, 1.0);
        assert_relative_eq!(mean_functional(&g, &TrigPolynomial::cos(e1(8))).re, (-0.25_f64).exp(), epsilon = 1e-11);
        let delta = GaussianMeasure::dirac(DVector::zeros(3));
        let phi = TrigPolynomial::exponential(DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(mean_functional(&delta, &phi), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn dc_invariance_exact() {
        let model = dc();
        let sys = EvolutionSystem::gamma(&model, 1e-12);
        let probes = probe_set(8, 20, seed_stream(0, "probes"));
        let pairs = [(-1.0, 1.0), (0.0, 0.0), (2.0, 2.5)];
        let rep = verify_invariance(&sys, &pairs, &probes, 1e-10).unwrap();
        assert!(rep.pass && rep.max_abs_error < 1e-11, "{}", rep.max_abs_error);
        assert!(rep.max_form_gap < 1e-12);
        assert_eq!(rep.rows.len(), 60);
    }

    #[test]
    fn probe_set_layout() {
        let p = probe_set(4, 12, seed_stream(0, "p"));
        assert_eq!(p.len(), 12);
        assert_eq!(p[4], DVector::from_element(4, 1.0));
        for v in &p[8..] {
            assert!(v.norm() >= 0.5 && v.norm() <= 2.0);
        }
        assert_eq!(probe_set(4, 3, seed_stream(0, "p")).len(), 3);
    }

    #[test]
    fn ergodic_dc() {
        let phi = TrigPolynomial::exponential(e1(8));
        let rep = verify_ergodic_limit(&dc(), 0.0, &e1(8), &[-1.0, -2.0, -4.0, -8.0], &phi, 1e-12).unwrap();
        assert!(rep.monotone && rep.within_envelope, "{rep:?}");
        assert!(rep.final_gap <= 1e-3);
        let one = TrigPolynomial::constant(8, 1.0);
        let rep = verify_ergodic_limit(&dc(), 0.0, &e1(8), &[-1.0, -3.0], &one, 1e-12).unwrap();
        assert!(rep.rows.iter().all(|r| r.gap == 0.0));
    }

    #[test]
    fn ergodic_at_origin_matches_formula() {
        let phi = TrigPolynomial::exponential(e1(8));
        let rep = verify_ergodic_limit(&dc(), 0.0, &DVector::zeros(8), &[-2.0], &phi, 1e-12).unwrap();
        let q = (1.0 - (-4.0_f64).exp()) / 2.0;
        assert_relative_eq!(rep.final_gap, ((-0.5 * q).exp() - (-0.25_f64).exp()).abs(), epsilon = 1e-11);
    }
}
