//! Dense symmetric linear algebra on the truncated space.
//!
//! Everything here operates on small dense matrices (a few hundred rows at
//! most). Square roots and pseudo-inverses go through the symmetric
//! eigendecomposition so that kernels and ranges are handled explicitly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`SymOperator::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues in `[-PSD_TOL, 0)` are clamped to zero before taking roots.
pub const PSD_TOL: f64 = 1e-10;
/// Default relative spectral cutoff for ranges and pseudo-inverses.
pub const RANK_CUT_REL: f64 = 1e-12;

/// A real symmetric operator on the truncated space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymOperator {
    entries: DMatrix<f64>,
}

impl SymOperator {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
            return Err(Error::BadParameter(format!(
                "symmetric operator needs a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let asym = relative_asymmetry(&entries);
        if asym > SYMMETRY_TOL {
            return Err(Error::NonSymmetric(asym));
        }
        Ok(Self { entries })
    }

    /// Builds from a matrix that is symmetric up to roundoff by averaging it
    /// with its transpose.
    pub fn symmetrized(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
            return Err(Error::BadParameter("symmetrized: non-square matrix".into()));
        }
        let sym = (&entries + entries.transpose()) * 0.5;
        Ok(Self { entries: sym })
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: DMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: DMatrix::zeros(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self { entries: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// ⟨S h, h⟩
    pub fn quadratic_form(&self, h: &DVector<f64>) -> f64 {
        h.dot(&(&self.entries * h))
    }

    pub fn apply(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.entries * h
    }

    /// Largest absolute entry, used as a cheap scale.
    pub fn max_abs(&self) -> f64 {
        self.entries.amax()
    }

    /// Spectral norm (largest |eigenvalue|).
    pub fn norm(&self) -> f64 {
        spectral(self)
            .map(|d| d.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .unwrap_or(f64::NAN)
    }
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Eigenpairs of a symmetric operator, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomp {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lambda = DMatrix::from_diagonal(&self.eigenvalues);
        &self.eigenvectors * lambda * self.eigenvectors.transpose()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// V f(Λ) Vᵀ
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mapped = self.eigenvalues.map(f);
        &self.eigenvectors * DMatrix::from_diagonal(&mapped) * self.eigenvectors.transpose()
    }
}

pub fn spectral(s: &SymOperator) -> Result<SpectralDecomp> {
    let asym = relative_asymmetry(s.matrix());
    if asym > SYMMETRY_TOL {
        return Err(Error::NonSymmetric(asym));
    }
    let eig = SymmetricEigen::new(s.matrix().clone());
    let n = s.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomp { eigenvalues, eigenvectors })
}

fn psd_floor(decomp: &SpectralDecomp) -> f64 {
    PSD_TOL * decomp.eigenvalues.amax().max(1.0)
}

/// Checks that `s` is positive semi-definite up to [`PSD_TOL`] and returns its
/// spectral decomposition with small negative eigenvalues clamped to zero.
pub fn clamp_psd(s: &SymOperator) -> Result<SpectralDecomp> {
    let mut decomp = spectral(s)?;
    let min = decomp.min_eigenvalue();
    if min < -psd_floor(&decomp) {
        return Err(Error::NotPsd(min));
    }
    decomp.eigenvalues.apply(|v| *v = v.max(0.0));
    Ok(decomp)
}

pub fn sqrt_psd(s: &SymOperator) -> Result<SymOperator> {
    let decomp = clamp_psd(s)?;
    SymOperator::symmetrized(decomp.map_eigenvalues(f64::sqrt))
}

pub fn trace(s: &SymOperator) -> f64 {
    s.matrix().trace()
}

/// Largest singular value of a general matrix.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// The Cameron–Martin space H_R = R(X) with ⟨x, y⟩_{H_R} = ⟨R⁻¹x, R⁻¹y⟩.
///
/// `R⁻¹` is the pseudo-inverse: it inverts `R` on `(ker R)^⊥` and drops
/// kernel components. Eigenvalues at or below `rank_cut` count as kernel.
#[derive(Debug, Clone)]
pub struct CameronMartinMetric {
    base: SymOperator,
    rank_cut: f64,
    decomp: SpectralDecomp,
}

impl CameronMartinMetric {
    pub fn new(base: SymOperator) -> Result<Self> {
        let decomp = spectral(&base)?;
        let rank_cut = RANK_CUT_REL * decomp.eigenvalues.amax();
        Ok(Self { base, rank_cut, decomp })
    }

    pub fn with_rank_cut(base: SymOperator, rank_cut: f64) -> Result<Self> {
        if !(rank_cut >= 0.0) {
            return Err(Error::BadParameter(format!("rank cut must be >= 0, got {rank_cut}")));
        }
        let decomp = spectral(&base)?;
        Ok(Self { base, rank_cut, decomp })
    }

    pub fn base(&self) -> &SymOperator {
        &self.base
    }

    pub fn rank_cut(&self) -> f64 {
        self.rank_cut
    }

    pub fn rank(&self) -> usize {
        self.decomp.eigenvalues.iter().filter(|v| v.abs() > self.rank_cut).count()
    }

    /// R⁻¹ as a matrix (zero on ker R).
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let cut = self.rank_cut;
        self.decomp.map_eigenvalues(|v| if v.abs() > cut { 1.0 / v } else { 0.0 })
    }

    /// Orthogonal projection onto ker R.
    pub fn kernel_projection(&self) -> DMatrix<f64> {
        let cut = self.rank_cut;
        self.decomp.map_eigenvalues(|v| if v.abs() > cut { 0.0 } else { 1.0 })
    }

    pub fn pseudo_inverse_apply(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(y.len());
        for (i, &lambda) in self.decomp.eigenvalues.iter().enumerate() {
            if lambda.abs() > self.rank_cut {
                let v = self.decomp.eigenvectors.column(i);
                out += v * (v.dot(y) / lambda);
            }
        }
        out
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.pseudo_inverse_apply(x).dot(&self.pseudo_inverse_apply(y))
    }

    /// ‖x‖_{H_R}; only meaningful for x in the range of R.
    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.pseudo_inverse_apply(x).norm()
    }
}

/// Pseudo-inverse application for a bare operator with the default cutoff.
pub fn pseudo_inverse_apply(metric: &CameronMartinMetric, y: &DVector<f64>) -> DVector<f64> {
    metric.pseudo_inverse_apply(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::CounterRng::new(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.next_f64() * 2.0 - 1.0);
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn identity_spectrum() {
        let d = spectral(&SymOperator::identity(3)).unwrap();
        for v in d.eigenvalues.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn diagonal_spectrum_sorted_with_axes() {
        let d = spectral(&SymOperator::from_diagonal(&[1.0, 4.0])).unwrap();
        assert_relative_eq!(d.eigenvalues[0], 4.0, epsilon = 1e-14);
        assert_relative_eq!(d.eigenvalues[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(d.eigenvectors[(1, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(d.eigenvectors[(0, 1)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        let s = SymOperator::new(random_symmetric(5, 11)).unwrap();
        let d = spectral(&s).unwrap();
        let err = (d.reconstruct() - s.matrix()).norm();
        assert!(err <= 1e-10 * s.matrix().norm(), "err {err}");
        let gram = d.eigenvectors.transpose() * &d.eigenvectors;
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
        for w in d.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn rejects_non_symmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(SymOperator::new(m), Err(Error::NonSymmetric(_))));
    }

    #[test]
    fn sqrt_of_diagonal_and_zero() {
        let r = sqrt_psd(&SymOperator::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_relative_eq!(r.matrix()[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.matrix()[(1, 1)], 3.0, epsilon = 1e-14);
        assert_relative_eq!(r.matrix()[(0, 1)], 0.0, epsilon = 1e-14);
        let z = sqrt_psd(&SymOperator::zeros(3)).unwrap();
        assert_eq!(z.matrix().amax(), 0.0);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let s = SymOperator::from_diagonal(&[1.0, -1e-3]);
        assert!(matches!(sqrt_psd(&s), Err(Error::NotPsd(_))));
        // roundoff-sized negativity is clamped
        let s = SymOperator::from_diagonal(&[1.0, -1e-12]);
        let r = sqrt_psd(&s).unwrap();
        assert_eq!(r.matrix()[(1, 1)], 0.0);
    }

    #[test]
    fn pseudo_inverse_drops_kernel() {
        let m = CameronMartinMetric::new(SymOperator::from_diagonal(&[2.0, 0.0])).unwrap();
        let x = m.pseudo_inverse_apply(&DVector::from_vec(vec![4.0, 7.0]));
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-14);
        assert_eq!(x[1], 0.0);
        assert_eq!(m.rank(), 1);
    }

    #[test]
    fn pseudo_inverse_identity_and_norm() {
        let id = CameronMartinMetric::new(SymOperator::identity(3)).unwrap();
        let y = DVector::from_vec(vec![0.3, -1.2, 5.0]);
        assert!((id.pseudo_inverse_apply(&y) - &y).amax() < 1e-15);

        let m = CameronMartinMetric::new(SymOperator::from_diagonal(&[2.0, 3.0])).unwrap();
        let y = DVector::from_vec(vec![2.0, 3.0]);
        let x = m.pseudo_inverse_apply(&y);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.norm(&y), 2.0_f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn trace_examples() {
        assert_eq!(trace(&SymOperator::identity(4)), 4.0);
        assert_eq!(trace(&SymOperator::from_diagonal(&[0.5; 8])), 4.0);
        let a = random_symmetric(6, 3);
        let s = SymOperator::symmetrized(&a * a.transpose()).unwrap();
        let sum: f64 = spectral(&s).unwrap().eigenvalues.iter().sum();
        assert!((trace(&s) - sum).abs() < 1e-10);
    }
}
