//! One-dimensional quadrature: adaptive Gauss–Kronrod, Gauss–Legendre and
//! Gauss–Hermite rules, and the nested exponential integrals that define
//! evolution operators and covariances of diagonal models.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
// Gauss weights on the odd Kronrod nodes (indices 1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_98,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

const MAX_INTERVALS: usize = 20_000;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

#[derive(Debug, Clone)]
pub struct VecIntegral {
    pub value: Vec<f64>,
    /// Max-norm error estimate.
    pub error: f64,
    pub evaluations: usize,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

fn gk15<F>(f: &F, a: f64, b: f64, dim: usize, buf: &mut Vec<f64>) -> (Vec<f64>, f64)
where
    F: Fn(f64, &mut [f64]),
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    buf.resize(dim, 0.0);
    for j in 0..8 {
        let nodes: &[f64] = if j == 7 { &[0.0] } else { &[-XGK[j], XGK[j]] };
        for &x in nodes {
            f(c + h * x, buf);
            for d in 0..dim {
                kron[d] += WGK[j] * buf[d];
                if j % 2 == 1 {
                    gauss[d] += WG[j / 2] * buf[d];
                }
            }
        }
    }
    let mut err = 0.0_f64;
    for d in 0..dim {
        kron[d] *= h;
        gauss[d] *= h;
        err = err.max((kron[d] - gauss[d]).abs());
    }
    (kron, err)
}

/// Globally adaptive Gauss–Kronrod (7, 15) for a vector-valued integrand.
///
/// `breakpoints` inside `(a, b)` seed the initial partition; the integrand
/// writes its `dim` components into the provided slice. The error target is
/// applied to the max-norm of the integral.
pub fn integrate_vec<F>(
    f: F,
    dim: usize,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: Tolerance,
) -> Result<VecIntegral>
where
    F: Fn(f64, &mut [f64]),
{
    if a == b {
        return Ok(VecIntegral { value: vec![0.0; dim], error: 0.0, evaluations: 0, intervals: 0 });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    let mut inner: Vec<f64> = breakpoints.iter().copied().filter(|&x| x > lo && x < hi).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(hi);

    let mut buf = Vec::with_capacity(dim);
    let mut segments: Vec<Segment> = cuts
        .windows(2)
        .map(|w| {
            let (value, error) = gk15(&f, w[0], w[1], dim, &mut buf);
            Segment { a: w[0], b: w[1], value, error }
        })
        .collect();
    let mut evaluations = 15 * segments.len();

    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for s in &segments {
            for d in 0..dim {
                total[d] += s.value[d];
            }
            err += s.error;
        }
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if err <= tol.target(scale) {
            let value = total.into_iter().map(|v| sign * v).collect();
            return Ok(VecIntegral { value, error: err, evaluations, intervals: segments.len() });
        }
        if segments.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureStalled(format!(
                "error estimate {err:.3e} above target after {} intervals on [{lo}, {hi}]",
                segments.len()
            )));
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty partition");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            return Err(Error::QuadratureStalled(format!("interval [{}, {}] cannot be split", seg.a, seg.b)));
        }
        let (lv, le) = gk15(&f, seg.a, mid, dim, &mut buf);
        let (rv, re) = gk15(&f, mid, seg.b, dim, &mut buf);
        evaluations += 30;
        segments.push(Segment { a: seg.a, b: mid, value: lv, error: le });
        segments.push(Segment { a: mid, b: seg.b, value: rv, error: re });
    }
}

pub fn integrate<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Integral>
where
    F: Fn(f64) -> f64,
{
    let r = integrate_vec(|x, out: &mut [f64]| out[0] = f(x), 1, a, b, &[], tol)?;
    Ok(Integral { value: r.value[0], error: r.error, evaluations: r.evaluations })
}

/// Samples of σ ↦ ∫_σ^t a(τ) dτ on a knot grid, so that inner integrals of
/// nested quadratures only need a short local piece.
pub struct Antiderivative<'a> {
    rate: &'a (dyn Fn(f64) -> f64 + Sync),
    upper: f64,
    knots: Vec<f64>,
    /// `tail[j] = ∫_{knots[j]}^{upper} a`
    tail: Vec<f64>,
}

const KNOT_SPACING: f64 = 0.5;

fn inner_tol() -> Tolerance {
    Tolerance::new(1e-15, 1e-14)
}

impl<'a> Antiderivative<'a> {
    pub fn new(rate: &'a (dyn Fn(f64) -> f64 + Sync), lower: f64, upper: f64, breakpoints: &[f64]) -> Result<Self> {
        let span = upper - lower;
        let cells = ((span / KNOT_SPACING).ceil() as usize).max(1);
        let mut knots: Vec<f64> = (0..=cells).map(|j| lower + span * j as f64 / cells as f64).collect();
        knots[cells] = upper;
        knots.extend(breakpoints.iter().copied().filter(|&x| x > lower && x < upper));
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let mut tail = vec![0.0; knots.len()];
        for j in (0..knots.len() - 1).rev() {
            let piece = integrate(rate, knots[j], knots[j + 1], inner_tol())?;
            tail[j] = tail[j + 1] + piece.value;
        }
        Ok(Self { rate, upper, knots, tail })
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// ∫_σ^upper a
    pub fn from(&self, sigma: f64) -> f64 {
        let j = match self.knots.binary_search_by(|k| k.total_cmp(&sigma)) {
            Ok(j) => return self.tail[j],
            Err(j) => j.min(self.knots.len() - 1),
        };
        let local = integrate(self.rate, sigma, self.knots[j], inner_tol())
            .map(|r| r.value)
            .unwrap_or(f64::NAN);
        self.tail[j] + local
    }
}

/// ∫_s^t exp(2 ∫_σ^t a(τ) dτ) g(σ) dσ for a vector-valued weight `g`.
///
/// Returns the integral together with ∫_s^t a.
pub fn exp_weighted_integral<G>(
    rate: &(dyn Fn(f64) -> f64 + Sync),
    weight: G,
    dim: usize,
    s: f64,
    t: f64,
    breakpoints: &[f64],
    tol: Tolerance,
) -> Result<(VecIntegral, f64)>
where
    G: Fn(f64, &mut [f64]),
{
    if s == t {
        return Ok((VecIntegral { value: vec![0.0; dim], error: 0.0, evaluations: 0, intervals: 0 }, 0.0));
    }
    let anti = Antiderivative::new(rate, s, t, breakpoints)?;
    let log_decay = anti.from(s);
    let r = integrate_vec(
        |sigma, out: &mut [f64]| {
            let e = (2.0 * anti.from(sigma)).exp();
            weight(sigma, out);
            for v in out.iter_mut() {
                *v *= e;
            }
        },
        dim,
        s,
        t,
        breakpoints,
        tol,
    )?;
    if r.value.iter().any(|v| !v.is_finite()) {
        return Err(Error::QuadratureStalled("non-finite nested integral".into()));
    }
    Ok((r, log_decay))
}

/// Nodes and weights of an n-point rule from its Jacobi matrix (Golub–Welsch).
fn golub_welsch(diag: &[f64], offdiag: &[f64], mass: f64) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = offdiag[i];
            j[(i + 1, i)] = offdiag[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to kill roundoff asymmetry in the rule
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let k = n - 1 - i;
        let x = 0.5 * (nodes[k] - nodes[i]);
        nodes[i] = -x;
        nodes[k] = x;
        let w = 0.5 * (weights[i] + weights[k]);
        weights[i] = w;
        weights[k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let offdiag: Vec<f64> = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        let (nodes, weights) = golub_welsch(&vec![0.0; n], &offdiag, 2.0);
        Self { nodes, weights }
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (c + h * x, h * w))
    }
}

/// Gauss–Hermite rule for expectations against the standard normal:
/// E f(Z) ≈ Σ wᵢ f(xᵢ), Σ wᵢ = 1.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        let offdiag: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
        let (nodes, weights) = golub_welsch(&vec![0.0; n], &offdiag, 1.0);
        Self { nodes, weights }
    }

    /// The 64-node rule, built once.
    pub fn standard() -> &'static GaussHermite {
        static RULE: OnceLock<GaussHermite> = OnceLock::new();
        RULE.get_or_init(|| GaussHermite::new(64))
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Tensor-product Gauss–Hermite expectation of `f` under N(mean, cov) in at
/// most three dimensions. `cov` may be singular.
pub fn gaussian_expect(mean: &[f64], cov: &DMatrix<f64>, rule: &GaussHermite, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let k = mean.len();
    if k == 0 || k > 3 || cov.shape() != (k, k) {
        return Err(Error::BadParameter(format!("tensor Gauss–Hermite needs 1 to 3 dimensions, got {k}")));
    }
    let eig = SymmetricEigen::new(0.5 * (cov + cov.transpose()));
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&root);
    let m = rule.nodes.len();
    let mut index = vec![0usize; k];
    let mut point = vec![0.0; k];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for (i, p) in point.iter_mut().enumerate() {
            *p = mean[i];
        }
        for (j, &ij) in index.iter().enumerate() {
            w *= rule.weights[ij];
            let z = rule.nodes[ij];
            for (i, p) in point.iter_mut().enumerate() {
                *p += factor[(i, j)] * z;
            }
        }
        total += w * f(&point);
        let mut d = 0;
        loop {
            index[d] += 1;
            if index[d] < m {
                break;
            }
            index[d] = 0;
            d += 1;
            if d == k {
                return Ok(total);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_expect_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let rule = GaussHermite::new(20);
        let cross = gaussian_expect(&[1.0, -1.0], &cov, &rule, |u| u[0] * u[1]).unwrap();
        assert_relative_eq!(cross, 0.6 - 1.0, epsilon = 1e-12);
        // E cos(X) = e^{-σ²/2}, singular direction included
        let degenerate = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = gaussian_expect(&[0.0, 0.0], &degenerate, GaussHermite::standard(), |u| (u[0] - u[1] + u[0]).cos()).unwrap();
        assert_relative_eq!(c, (-0.5_f64).exp(), epsilon = 1e-13);
        assert!(gaussian_expect(&[], &DMatrix::zeros(0, 0), &rule, |_| 1.0).is_err());
    }

    #[test]
    fn gk_polynomial_and_exponential() {
        let r = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, Tolerance::new(1e-14, 1e-14)).unwrap();
        assert_relative_eq!(r.value, 64.0 / 6.0 - 4.0, epsilon = 1e-13);
        let r = integrate(|x| (-x).exp(), 0.0, 30.0, Tolerance::new(1e-14, 1e-13)).unwrap();
        assert_relative_eq!(r.value, 1.0 - (-30.0_f64).exp(), epsilon = 1e-13);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let f = |x: f64| x.sin();
        let a = integrate(f, 0.0, 1.0, Tolerance::new(1e-14, 1e-14)).unwrap().value;
        let b = integrate(f, 1.0, 0.0, Tolerance::new(1e-14, 1e-14)).unwrap().value;
        assert_eq!(a, -b);
    }

    #[test]
    fn arctan_integral() {
        let r = integrate(|x| 1.0 / (1.0 + x * x), 0.0, 1.0, Tolerance::new(1e-15, 1e-15)).unwrap();
        assert_relative_eq!(r.value, std::f64::consts::FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn nested_integral_constant_rate() {
        let rate = |_: f64| -1.0;
        let (r, log_decay) = exp_weighted_integral(
            &rate,
            |_, out: &mut [f64]| out[0] = 1.0,
            1,
            0.0,
            1.0,
            &[],
            Tolerance::new(1e-13, 1e-12),
        )
        .unwrap();
        assert_relative_eq!(r.value[0], (1.0 - (-2.0_f64).exp()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(log_decay, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn legendre_and_hermite_moments() {
        let gl = GaussLegendre::new(10);
        let s: f64 = gl.mapped(0.0, 1.0).map(|(x, w)| w * x.powi(19)).sum();
        assert_relative_eq!(s, 1.0 / 20.0, epsilon = 1e-14);
        let gh = GaussHermite::standard();
        assert_relative_eq!(gh.expect(|_| 1.0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(gh.expect(|x| x * x), 1.0, epsilon = 1e-12);
        assert_relative_eq!(gh.expect(|x| x.powi(4)), 3.0, epsilon = 1e-11);
        // E cos(Z) = e^{-1/2}
        assert_relative_eq!(gh.expect(f64::cos), (-0.5_f64).exp(), epsilon = 1e-13);
    }
}
