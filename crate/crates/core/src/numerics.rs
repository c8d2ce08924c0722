//! Rank, pseudo-determinant and subspace primitives for symmetric PSD matrices.
//!
//! Every rank decision goes through [`RankTolerance`]: an eigenvalue counts
//! iff it exceeds `relative_threshold * λ_max` and `λ_max > 0`. For general
//! (non-symmetric) matrices the same rule is applied to the squared singular
//! values, i.e. to the eigenvalues of the Gram matrix `X Xᵀ`.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum relative asymmetry accepted for "symmetric" inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Maximum deviation of `AᵀA` from the identity for "orthonormal" inputs.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTolerance {
    relative_threshold: f64,
}

impl RankTolerance {
    pub fn new(relative_threshold: f64) -> Result<Self> {
        if !(relative_threshold > 0.0 && relative_threshold.is_finite()) {
            return Err(Error::validation(format!(
                "rank tolerance must be strictly positive, got {relative_threshold}"
            )));
        }
        Ok(Self { relative_threshold })
    }

    pub fn relative_threshold(&self) -> f64 {
        self.relative_threshold
    }

    /// Absolute cutoff for a spectrum whose largest eigenvalue is `lambda_max`.
    /// Returns `None` when nothing can count (λ_max ≤ 0).
    pub fn cutoff(&self, lambda_max: f64) -> Option<f64> {
        (lambda_max > 0.0).then_some(self.relative_threshold * lambda_max)
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self {
            relative_threshold: 1e-10,
        }
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(matrix)?;
        let n = matrix.nrows();
        if n == 0 {
            return Ok(Self {
                eigenvalues: DVector::zeros(0),
                eigenvectors: DMatrix::zeros(0, 0),
            });
        }
        let sym = (matrix + matrix.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    pub fn rank(&self, tol: RankTolerance) -> usize {
        match tol.cutoff(self.lambda_max()) {
            Some(cut) => self.eigenvalues.iter().filter(|&&l| l > cut).count(),
            None => 0,
        }
    }

    /// Eigenvalues that count toward the rank (descending).
    pub fn significant_eigenvalues(&self, tol: RankTolerance) -> Vec<f64> {
        let r = self.rank(tol);
        self.eigenvalues.iter().take(r).copied().collect()
    }

    pub fn log_pseudo_determinant(&self, tol: RankTolerance) -> f64 {
        self.significant_eigenvalues(tol).iter().map(|l| l.ln()).sum()
    }

    pub fn image_basis(&self, tol: RankTolerance) -> DMatrix<f64> {
        let r = self.rank(tol);
        self.eigenvectors.columns(0, r).into_owned()
    }

    pub fn null_space_basis(&self, tol: RankTolerance) -> DMatrix<f64> {
        let r = self.rank(tol);
        let n = self.dim();
        self.eigenvectors.columns(r, n - r).into_owned()
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues);
        scaled * self.eigenvectors.transpose()
    }
}

pub fn check_square(matrix: &DMatrix<f64>) -> Result<()> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::validation(format!(
            "expected a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    Ok(())
}

pub fn check_symmetric(matrix: &DMatrix<f64>) -> Result<()> {
    check_square(matrix)?;
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("matrix has non-finite entries"));
    }
    let scale = matrix.amax();
    let n = matrix.nrows();
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::validation(format!(
            "matrix is not symmetric (max asymmetry {asym:e}, scale {scale:e})"
        )));
    }
    Ok(())
}

pub fn numerical_rank(matrix: &DMatrix<f64>, tol: RankTolerance) -> Result<usize> {
    Ok(SpectralDecomposition::new(matrix)?.rank(tol))
}

/// Product of the eigenvalues above the rank threshold; 1 for the zero matrix.
pub fn pseudo_determinant(matrix: &DMatrix<f64>, tol: RankTolerance) -> Result<f64> {
    Ok(log_pseudo_determinant(matrix, tol)?.exp())
}

pub fn log_pseudo_determinant(matrix: &DMatrix<f64>, tol: RankTolerance) -> Result<f64> {
    Ok(SpectralDecomposition::new(matrix)?.log_pseudo_determinant(tol))
}

pub fn null_space_basis(matrix: &DMatrix<f64>, tol: RankTolerance) -> Result<DMatrix<f64>> {
    Ok(SpectralDecomposition::new(matrix)?.null_space_basis(tol))
}

pub fn image_basis(matrix: &DMatrix<f64>, tol: RankTolerance) -> Result<DMatrix<f64>> {
    Ok(SpectralDecomposition::new(matrix)?.image_basis(tol))
}

/// Eigenpairs of `A·Aᵀ`, i.e. squared singular values and left singular
/// vectors of `A`. nalgebra's SVD loses accuracy on rank-deficient inputs with
/// repeated singular values, while the symmetric eigensolver does not.
fn gram_eigen(matrix: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let g = matrix * matrix.transpose();
    ((&g + g.transpose()) * 0.5).symmetric_eigen()
}

/// Largest squared singular value, `‖A‖₂²`.
pub fn spectral_norm_squared(matrix: &DMatrix<f64>) -> f64 {
    if matrix.is_empty() {
        return 0.0;
    }
    gram_eigen(matrix).eigenvalues.iter().copied().fold(0.0, f64::max)
}

/// Rank of an arbitrary matrix, thresholding squared singular values.
pub fn matrix_rank(matrix: &DMatrix<f64>, tol: RankTolerance) -> usize {
    if matrix.is_empty() {
        return 0;
    }
    let ev = gram_eigen(matrix).eigenvalues;
    let smax2 = ev.iter().copied().fold(0.0, f64::max);
    match tol.cutoff(smax2) {
        Some(cut) => ev.iter().filter(|&&s2| s2 > cut).count(),
        None => 0,
    }
}

/// Orthonormal basis of the column span of an arbitrary matrix.
pub fn column_span_basis(matrix: &DMatrix<f64>, tol: RankTolerance) -> DMatrix<f64> {
    let n = matrix.nrows();
    if matrix.ncols() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let eig = gram_eigen(matrix);
    let ev = &eig.eigenvalues;
    let smax2 = ev.iter().copied().fold(0.0, f64::max);
    let Some(cut) = tol.cutoff(smax2) else {
        return DMatrix::zeros(n, 0);
    };
    let mut order: Vec<usize> = (0..ev.len()).filter(|&k| ev[k] > cut).collect();
    order.sort_by(|&a, &b| ev[b].total_cmp(&ev[a]));
    let mut basis = DMatrix::zeros(n, order.len());
    for (dst, &src) in order.iter().enumerate() {
        basis.set_column(dst, &eig.eigenvectors.column(src));
    }
    basis
}

pub fn check_orthonormal(basis: &DMatrix<f64>) -> Result<()> {
    let k = basis.ncols();
    let gram = basis.transpose() * basis;
    let dev = (gram - DMatrix::<f64>::identity(k, k)).amax();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::validation(format!(
            "basis columns are not orthonormal (max deviation {dev:e})"
        )));
    }
    Ok(())
}

/// `dim(span A ∩ span B)` computed as `rank A + rank B − rank [A B]`.
pub fn subspace_intersection_dim(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tol: RankTolerance,
) -> Result<usize> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    check_orthonormal(a)?;
    check_orthonormal(b)?;
    let joined = hstack(a, b);
    let ra = matrix_rank(a, tol);
    let rb = matrix_rank(b, tol);
    let rab = matrix_rank(&joined, tol);
    Ok((ra + rb).saturating_sub(rab))
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Orthogonal projector `B Bᵀ` onto the span of an orthonormal basis.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// Eigenvalue law for synthetic class covariances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EigenSpectrum {
    /// i.i.d. uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Every nonzero eigenvalue equal to `value`.
    Fixed { value: f64 },
}

impl Default for EigenSpectrum {
    fn default() -> Self {
        EigenSpectrum::Uniform {
            low: 0.5,
            high: 1.5,
        }
    }
}

impl EigenSpectrum {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            EigenSpectrum::Uniform { low, high } => low > 0.0 && high >= low && high.is_finite(),
            EigenSpectrum::Fixed { value } => value > 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "eigenvalue law must be strictly positive and finite: {self:?}"
            )))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            EigenSpectrum::Uniform { low, high } if high > low => {
                Uniform::new_inclusive(low, high)
                    .expect("validated bounds")
                    .sample(rng)
            }
            EigenSpectrum::Uniform { low, .. } => low,
            EigenSpectrum::Fixed { value } => value,
        }
    }
}

/// `N × k` matrix whose columns are an orthonormal basis of a uniformly
/// random `k`-dimensional subspace of `R^N`.
pub fn random_orthonormal_basis<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let gaussian = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    if k == 0 {
        return gaussian;
    }
    let q = gaussian.qr().q();
    q.columns(0, k).into_owned()
}

/// Random rank-`r` covariance `U diag(λ) Uᵀ` with a Grassmann-uniform image.
pub fn random_subspace_covariance<R: Rng + ?Sized>(
    n: usize,
    r: usize,
    spectrum: EigenSpectrum,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if r < 1 || r >= n {
        return Err(Error::validation(format!(
            "class rank must satisfy 1 <= r < N, got r={r}, N={n}"
        )));
    }
    spectrum.validate()?;
    let basis = random_orthonormal_basis(n, r, rng);
    let lambdas = DVector::from_fn(r, |_, _| spectrum.draw(rng));
    let sigma = &basis * DMatrix::from_diagonal(&lambdas) * basis.transpose();
    Ok(symmetrize(sigma))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> RankTolerance {
        RankTolerance::default()
    }

    #[test]
    fn rank_of_identity_and_tiny_diagonal() {
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), tol()).unwrap(), 3);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14, 0.0]));
        assert_eq!(numerical_rank(&d, tol()).unwrap(), 1);
    }

    #[test]
    fn rank_rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(numerical_rank(&m, tol()), Err(Error::Validation(_))));
        assert!(pseudo_determinant(&m, tol()).is_err());
        assert!(null_space_basis(&m, tol()).is_err());
    }

    #[test]
    fn tolerance_must_be_positive() {
        assert!(RankTolerance::new(0.0).is_err());
        assert!(RankTolerance::new(-1.0).is_err());
        assert!(RankTolerance::new(1e-8).is_ok());
    }

    #[test]
    fn pseudo_determinant_small_cases() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.0]));
        assert!((pseudo_determinant(&d, tol()).unwrap() - 6.0).abs() < 1e-12);
        assert!((pseudo_determinant(&DMatrix::identity(5, 5), tol()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pseudo_determinant(&DMatrix::zeros(4, 4), tol()).unwrap(), 1.0);
    }

    #[test]
    fn pseudo_determinant_planted_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_orthonormal_basis(5, 5, &mut rng);
        let lam = DVector::from_vec(vec![4.0, 2.0, 0.5, 0.0, 0.0]);
        let m = symmetrize(&u * DMatrix::from_diagonal(&lam) * u.transpose());
        let pdet = pseudo_determinant(&m, tol()).unwrap();
        assert!((pdet - 4.0).abs() < 1e-10, "{pdet}");
        assert_eq!(numerical_rank(&m, tol()).unwrap(), 3);
    }

    #[test]
    fn null_space_of_simple_diagonals() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        let ns = null_space_basis(&d, tol()).unwrap();
        assert_eq!(ns.ncols(), 1);
        assert!((ns[(2, 0)].abs() - 1.0).abs() < 1e-12);

        let z = DMatrix::zeros(3, 3);
        let ns = null_space_basis(&z, tol()).unwrap();
        assert_eq!(ns.ncols(), 3);
        assert!((projector(&ns) - DMatrix::identity(3, 3)).amax() < 1e-12);

        let im = image_basis(&d, tol()).unwrap();
        assert_eq!(im.ncols(), 2);
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((projector(&im) - expect).amax() < 1e-12);
        assert_eq!(image_basis(&DMatrix::identity(4, 4), tol()).unwrap().ncols(), 4);
    }

    #[test]
    fn planted_image_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_orthonormal_basis(4, 2, &mut rng);
        let sigma = projector(&u);
        let ns = null_space_basis(&sigma, tol()).unwrap();
        assert_eq!(ns.ncols(), 2);
        assert!((u.transpose() * &ns).amax() < 1e-10);
        let im = image_basis(&sigma, tol()).unwrap();
        assert!((projector(&im) - projector(&u)).amax() < 1e-10);
        assert!((projector(&im) + projector(&ns) - DMatrix::identity(4, 4)).amax() < 1e-8);
    }

    #[test]
    fn random_covariance_rank_and_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let line = random_subspace_covariance(4, 1, EigenSpectrum::Fixed { value: 1.0 }, &mut rng).unwrap();
        assert!((line.trace() - 1.0).abs() < 1e-12);
        assert!((&line * &line - &line).amax() < 1e-12, "rank-1 projector");

        let s = random_subspace_covariance(64, 14, EigenSpectrum::default(), &mut rng).unwrap();
        assert_eq!(numerical_rank(&s, tol()).unwrap(), 14);
        assert!(random_subspace_covariance(4, 4, EigenSpectrum::default(), &mut rng).is_err());
        assert!(random_subspace_covariance(4, 0, EigenSpectrum::default(), &mut rng).is_err());
    }

    #[test]
    fn sum_of_independent_draws_has_rank_two_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_subspace_covariance(64, 14, EigenSpectrum::default(), &mut rng).unwrap();
        let b = random_subspace_covariance(64, 14, EigenSpectrum::default(), &mut rng).unwrap();
        let ia = image_basis(&a, tol()).unwrap();
        let ib = image_basis(&b, tol()).unwrap();
        assert_eq!(matrix_rank(&hstack(&ia, &ib), tol()), 28);
        let na = null_space_basis(&a, tol()).unwrap();
        let nb = null_space_basis(&b, tol()).unwrap();
        assert_eq!(subspace_intersection_dim(&na, &nb, tol()).unwrap(), 64 - 28);
    }

    #[test]
    fn intersection_dim_small_cases() {
        let e = DMatrix::<f64>::identity(3, 3);
        let e1 = e.columns(0, 1).into_owned();
        let e2 = e.columns(1, 1).into_owned();
        assert_eq!(subspace_intersection_dim(&e1, &e1, tol()).unwrap(), 1);
        assert_eq!(subspace_intersection_dim(&e1, &e2, tol()).unwrap(), 0);
        let bad = e1.clone() * 2.0;
        assert!(subspace_intersection_dim(&bad, &e2, tol()).is_err());
    }

    #[test]
    fn random_subspaces_meet_trivially() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_orthonormal_basis(64, 14, &mut rng);
        let b = random_orthonormal_basis(64, 14, &mut rng);
        assert_eq!(subspace_intersection_dim(&a, &b, tol()).unwrap(), 0);
        // independent route: cosines of principal angles are the singular values of AᵀB
        let c = a.transpose() * &b;
        let cos_max = (c.transpose() * &c).symmetric_eigen().eigenvalues.max().sqrt();
        assert!(cos_max < 1.0 - 1e-6);
    }

    #[test]
    fn spectral_decomposition_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_subspace_covariance(12, 5, EigenSpectrum::default(), &mut rng).unwrap();
        let sd = SpectralDecomposition::new(&s).unwrap();
        for k in 1..sd.dim() {
            assert!(sd.eigenvalues[k - 1] >= sd.eigenvalues[k]);
        }
        let v = &sd.eigenvectors;
        assert!((v.transpose() * v - DMatrix::identity(12, 12)).amax() < 1e-10);
        let rel = (sd.reconstruct() - &s).norm() / s.norm();
        assert!(rel < 1e-10);
    }
}
