//! Measurement kernels: random rotation-invariant draws and designed
//! kernels built from class null spaces.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ip::DesignAllocation;
use crate::model::SourceModel;
use crate::numerics::{column_span_basis, hstack, null_space_basis, RankTolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignTag {
    Random,
    Prop3,
    Prop4,
    Prop5,
    Custom,
}

impl DesignTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignTag::Random => "random",
            DesignTag::Prop3 => "prop3",
            DesignTag::Prop4 => "prop4",
            DesignTag::Prop5 => "prop5",
            DesignTag::Custom => "custom",
        }
    }
}

impl std::str::FromStr for DesignTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(DesignTag::Random),
            "prop3" => Ok(DesignTag::Prop3),
            "prop4" => Ok(DesignTag::Prop4),
            "prop5" => Ok(DesignTag::Prop5),
            "custom" => Ok(DesignTag::Custom),
            other => Err(Error::validation(format!("unknown design '{other}'"))),
        }
    }
}

impl std::fmt::Display for DesignTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An `M × N` measurement matrix Φ with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementKernel {
    matrix: DMatrix<f64>,
    design_tag: DesignTag,
    seed: Option<u64>,
}

impl MeasurementKernel {
    pub fn new(matrix: DMatrix<f64>, design_tag: DesignTag, seed: Option<u64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::validation(format!(
                "kernel must be at least 1x1, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("kernel has non-finite entries"));
        }
        Ok(Self {
            matrix,
            design_tag,
            seed,
        })
    }

    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, DesignTag::Custom, None)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn design_tag(&self) -> DesignTag {
        self.design_tag
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Number of measurements `M`.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Ambient dimension `N`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `tr(ΦᵀΦ)`, the squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.matrix.norm_squared()
    }

    /// `Φ Σ Φᵀ`, symmetrized.
    pub fn project(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let p = &self.matrix * sigma * self.matrix.transpose();
        (&p + p.transpose()) * 0.5
    }
}

/// Rescales Φ so that `tr(ΦᵀΦ) = M`.
pub fn normalize_kernel(kernel: MeasurementKernel) -> Result<MeasurementKernel> {
    let energy = kernel.energy();
    if energy == 0.0 {
        return Err(Error::validation("cannot normalize an all-zero kernel"));
    }
    let scale = (kernel.rows() as f64 / energy).sqrt();
    Ok(MeasurementKernel {
        matrix: kernel.matrix * scale,
        ..kernel
    })
}

/// i.i.d. standard-normal `M × N` kernel, normalized.
pub fn random_kernel(m: usize, n: usize, seed: u64) -> Result<MeasurementKernel> {
    if m == 0 || n == 0 {
        return Err(Error::validation(format!(
            "random kernel needs M >= 1 and N >= 1, got M={m}, N={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
    normalize_kernel(MeasurementKernel::new(matrix, DesignTag::Random, Some(seed))?)
}

/// Orthonormal bases used by the two-class maximal-exponent construction.
///
/// `[u v]` spans `N₁`, `[u w]` spans `N₂` and `u` spans `N₁ ∩ N₂`. The
/// stacked rows `[v w]ᵀ` form `Φ₀`.
#[derive(Debug, Clone)]
pub struct Phi0Construction {
    pub u_block: DMatrix<f64>,
    pub v_block: DMatrix<f64>,
    pub w_block: DMatrix<f64>,
    pub n12: usize,
    pub n_sigma: usize,
}

impl Phi0Construction {
    /// Rows of Φ₀, i.e. `R`.
    pub fn rank_gap(&self) -> usize {
        self.v_block.ncols() + self.w_block.ncols()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        hstack(&self.v_block, &self.w_block).transpose()
    }
}

fn require_two_classes(model: &SourceModel) -> Result<()> {
    if model.num_classes() != 2 {
        return Err(Error::validation(format!(
            "two-class design needs L = 2, model has L = {}",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Orthonormal completion of `inner` (orthonormal, contained in span of
/// `outer`) inside `outer`.
fn complete_within(outer: &DMatrix<f64>, inner: &DMatrix<f64>, tol: RankTolerance) -> DMatrix<f64> {
    let residual = outer - inner * (inner.transpose() * outer);
    column_span_basis(&residual, tol)
}

pub fn build_phi0(model: &SourceModel, tol: RankTolerance) -> Result<Phi0Construction> {
    require_two_classes(model)?;
    let (s1, s2) = (model.covariance(0), model.covariance(1));
    let u_block = null_space_basis(&(s1 + s2), tol)?;
    let n1 = null_space_basis(s1, tol)?;
    let n2 = null_space_basis(s2, tol)?;
    let v_block = complete_within(&n1, &u_block, tol);
    let w_block = complete_within(&n2, &u_block, tol);
    let n_sigma = v_block.ncols().min(w_block.ncols());
    if v_block.ncols() + w_block.ncols() == 0 {
        return Err(Error::infeasible(
            "class null spaces coincide; no discriminating direction exists",
        ));
    }
    if v_block.ncols() != w_block.ncols() {
        log::warn!(
            "unequal completion sizes {} and {}; classes violate the equal-rank assumption",
            v_block.ncols(),
            w_block.ncols()
        );
    }
    Ok(Phi0Construction {
        n12: u_block.ncols(),
        u_block,
        v_block,
        w_block,
        n_sigma,
    })
}

fn random_unit_combination<R: Rng + ?Sized>(basis: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    loop {
        let coeffs = DVector::from_fn(basis.ncols(), |_, _| StandardNormal.sample(rng));
        let v = basis * coeffs;
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Single-row kernel `φᵀ` with `φ ∈ N₁` (or `N₂`) and `φ ∉ N₁ ∩ N₂`.
pub fn design_prop3(model: &SourceModel, seed: u64, tol: RankTolerance) -> Result<MeasurementKernel> {
    let phi0 = build_phi0(model, tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = if phi0.v_block.ncols() > 0 {
        &phi0.v_block
    } else {
        &phi0.w_block
    };
    let phi = random_unit_combination(block, &mut rng);
    let matrix = DMatrix::from_row_slice(1, phi.len(), phi.as_slice());
    normalize_kernel(MeasurementKernel::new(matrix, DesignTag::Prop3, Some(seed))?)
}

/// `⌊4d₀⌋ + 1` rows of Φ₀, split at random between the v and w blocks.
pub fn design_prop4(model: &SourceModel, d0: f64, seed: u64, tol: RankTolerance) -> Result<MeasurementKernel> {
    if !(d0 >= 0.0 && d0.is_finite()) {
        return Err(Error::validation(format!("target exponent must be >= 0, got {d0}")));
    }
    let phi0 = build_phi0(model, tol)?;
    let r = phi0.rank_gap();
    if d0 >= r as f64 / 4.0 {
        return Err(Error::infeasible(format!(
            "target exponent {d0} is not below R/4 = {}",
            r as f64 / 4.0
        )));
    }
    let m = (4.0 * d0).floor() as usize + 1;
    let (nv, nw) = (phi0.v_block.ncols(), phi0.w_block.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = m.saturating_sub(nw);
    let hi = m.min(nv);
    let m1 = rng.random_range(lo..=hi);
    let m2 = m - m1;
    let mut v_idx: Vec<usize> = (0..nv).collect();
    let mut w_idx: Vec<usize> = (0..nw).collect();
    v_idx.shuffle(&mut rng);
    w_idx.shuffle(&mut rng);
    let n = model.ambient_dim();
    let mut matrix = DMatrix::zeros(m, n);
    for (row, &k) in v_idx.iter().take(m1).enumerate() {
        matrix.set_row(row, &phi0.v_block.column(k).transpose());
    }
    for (row, &k) in w_idx.iter().take(m2).enumerate() {
        matrix.set_row(m1 + row, &phi0.w_block.column(k).transpose());
    }
    normalize_kernel(MeasurementKernel::new(matrix, DesignTag::Prop4, Some(seed))?)
}

/// One random unit null-space row for each of `M` classes chosen by a seeded
/// random permutation.
pub fn design_prop5(model: &SourceModel, m: usize, seed: u64, tol: RankTolerance) -> Result<MeasurementKernel> {
    let l = model.num_classes();
    if m == 0 || m > l {
        return Err(Error::validation(format!(
            "one-vs-all design takes 1 <= M <= L = {l} rows, got M = {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = (0..l).collect();
    classes.shuffle(&mut rng);
    let mut counts = vec![0; l];
    for &c in classes.iter().take(m) {
        counts[c] = 1;
    }
    let matrix = null_space_rows(model, &counts, &mut rng, tol)?;
    normalize_kernel(MeasurementKernel::new(matrix, DesignTag::Prop5, Some(seed))?)
}

/// Kernel realizing an allocation: `M_i` random unit vectors from each `N_i`.
pub fn design_from_allocation(
    model: &SourceModel,
    allocation: &DesignAllocation,
    seed: u64,
    tol: RankTolerance,
) -> Result<MeasurementKernel> {
    let counts = &allocation.per_class_counts;
    if counts.len() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            got: counts.len(),
        });
    }
    if allocation.total == 0 {
        return Err(Error::validation("allocation has no measurements"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = null_space_rows(model, counts, &mut rng, tol)?;
    normalize_kernel(MeasurementKernel::new(matrix, DesignTag::Custom, Some(seed))?)
}

fn null_space_rows<R: Rng + ?Sized>(
    model: &SourceModel,
    counts: &[usize],
    rng: &mut R,
    tol: RankTolerance,
) -> Result<DMatrix<f64>> {
    let n = model.ambient_dim();
    let total: usize = counts.iter().sum();
    let mut matrix = DMatrix::zeros(total, n);
    let mut row = 0;
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let basis = null_space_basis(model.covariance(class), tol)?;
        if basis.ncols() == 0 {
            return Err(Error::infeasible(format!(
                "class {} has a trivial null space",
                class + 1
            )));
        }
        if count > basis.ncols() {
            return Err(Error::validation(format!(
                "class {} null space has dimension {} < {count} requested rows",
                class + 1,
                basis.ncols()
            )));
        }
        for _ in 0..count {
            let v = random_unit_combination(&basis, rng);
            matrix.set_row(row, &v.transpose());
            row += 1;
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::pairwise_exponent;
    use crate::numerics::{numerical_rank, EigenSpectrum};

    fn tol() -> RankTolerance {
        RankTolerance::default()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn two_class(n: usize, r: usize, seed: u64) -> SourceModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SourceModel::synthetic(n, 2, r, EigenSpectrum::default(), tol(), &mut rng).unwrap()
    }

    #[test]
    fn normalize_small_cases() {
        let k = normalize_kernel(MeasurementKernel::custom(DMatrix::identity(2, 2)).unwrap()).unwrap();
        assert!((k.matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
        let k = normalize_kernel(MeasurementKernel::custom(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap()).unwrap();
        assert!((k.matrix()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((k.matrix()[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(k.design_tag(), DesignTag::Custom);
        assert!(normalize_kernel(MeasurementKernel::custom(DMatrix::zeros(2, 2)).unwrap()).is_err());
    }

    #[test]
    fn random_kernel_normalized() {
        let k = random_kernel(1, 1, 0).unwrap();
        assert!(k.matrix()[(0, 0)].abs() <= 1.0 + 1e-15);
        let k = random_kernel(10, 64, 7).unwrap();
        assert!((k.energy() - 10.0).abs() < 1e-12);
        assert_eq!(k.design_tag(), DesignTag::Random);
        assert_eq!(k.seed(), Some(7));
        assert!(random_kernel(0, 4, 1).is_err());
    }

    #[test]
    fn prop3_hand_case() {
        let m = SourceModel::new(vec![0.5, 0.5], vec![diag(&[1.0, 0.0, 0.0]), diag(&[0.0, 1.0, 0.0])], tol()).unwrap();
        let k = design_prop3(&m, 3, tol()).unwrap();
        let phi = k.matrix().row(0).transpose();
        // φ ∈ N₁ = span{e₂, e₃} but not in N₁∩N₂ = span{e₃}
        assert!(phi[0].abs() < 1e-12);
        assert!(phi[1].abs() > 1e-6);
        let d = pairwise_exponent(&k, m.covariance(0), m.covariance(1), tol()).unwrap();
        assert_eq!(d.exponent(), 0.25);
    }

    #[test]
    fn prop3_random_model() {
        let m = two_class(64, 14, 1);
        let k = design_prop3(&m, 5, tol()).unwrap();
        let phi = k.matrix().row(0).transpose();
        assert!((m.covariance(0) * &phi).norm() < 1e-10);
        assert!((m.covariance(1) * &phi).norm() > 1e-3);
        let d = pairwise_exponent(&k, m.covariance(0), m.covariance(1), tol()).unwrap();
        assert_eq!(d.exponent(), 0.25);
    }

    #[test]
    fn prop3_degenerate_is_infeasible() {
        let s = diag(&[1.0, 0.0, 0.0]);
        let m = SourceModel::new(vec![0.5, 0.5], vec![s.clone(), s], tol()).unwrap();
        assert!(design_prop3(&m, 0, tol()).unwrap_err().is_infeasible());
    }

    #[test]
    fn phi0_hand_case() {
        let m = SourceModel::new(
            vec![0.5, 0.5],
            vec![diag(&[1.0, 0.0, 0.0, 0.0]), diag(&[0.0, 1.0, 0.0, 0.0])],
            tol(),
        )
        .unwrap();
        let p = build_phi0(&m, tol()).unwrap();
        assert_eq!(p.n12, 2);
        assert_eq!(p.n_sigma, 1);
        assert_eq!(p.rank_gap(), 2);
        assert!(p.u_block.row(0).amax() < 1e-12 && p.u_block.row(1).amax() < 1e-12);
        assert!((p.v_block[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((p.w_block[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phi0_random_models() {
        let m = two_class(64, 14, 2);
        let p = build_phi0(&m, tol()).unwrap();
        assert_eq!((p.n12, p.n_sigma, p.rank_gap()), (36, 14, 28));
        let phi0 = MeasurementKernel::custom(p.matrix()).unwrap();
        assert_eq!(numerical_rank(&phi0.project(m.covariance(0)), tol()).unwrap(), 14);
        let sum = m.covariance(0) + m.covariance(1);
        assert_eq!(numerical_rank(&phi0.project(&sum), tol()).unwrap(), 28);
        // block invariants
        let uv = hstack(&p.u_block, &p.v_block);
        assert!((uv.transpose() * &uv - DMatrix::<f64>::identity(50, 50)).amax() < 1e-10);
        assert!((m.covariance(0) * &uv).amax() < 1e-10);
        let uw = hstack(&p.u_block, &p.w_block);
        assert!((m.covariance(1) * &uw).amax() < 1e-10);
        assert!((p.u_block.transpose() * &p.w_block).amax() < 1e-10);

        let m = two_class(20, 14, 3);
        let p = build_phi0(&m, tol()).unwrap();
        assert_eq!((p.n12, p.n_sigma, p.rank_gap()), (0, 6, 12));
    }

    #[test]
    fn prop4_rows_and_exponent() {
        let m = two_class(64, 14, 4);
        let k = design_prop4(&m, 0.0, 1, tol()).unwrap();
        assert_eq!(k.rows(), 1);
        let k = design_prop4(&m, 1.2, 1, tol()).unwrap();
        assert_eq!(k.rows(), 5);
        let d = pairwise_exponent(&k, m.covariance(0), m.covariance(1), tol()).unwrap();
        assert_eq!(d.exponent(), 1.25);
        assert!(design_prop4(&m, 7.0, 1, tol()).unwrap_err().is_infeasible());
        assert!(design_prop4(&m, 6.99, 1, tol()).is_ok());
    }

    #[test]
    fn prop5_rows_live_in_null_spaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = SourceModel::synthetic(32, 6, 5, EigenSpectrum::default(), tol(), &mut rng).unwrap();
        let k = design_prop5(&m, 5, 3, tol()).unwrap();
        assert_eq!(k.rows(), 5);
        // each row annihilated by exactly one class covariance
        for row in k.matrix().row_iter() {
            let v = row.transpose();
            let hits = (0..6).filter(|&c| (m.covariance(c) * &v).norm() < 1e-8).count();
            assert_eq!(hits, 1);
        }
        assert!(design_prop5(&m, 7, 3, tol()).is_err());
        assert!(design_prop5(&m, 0, 3, tol()).is_err());
    }

    #[test]
    fn prop5_two_class_matches_prop3_exponent() {
        let m = two_class(16, 5, 6);
        let k = design_prop5(&m, 1, 0, tol()).unwrap();
        let d = pairwise_exponent(&k, m.covariance(0), m.covariance(1), tol()).unwrap();
        assert_eq!(d.exponent(), 0.25);
    }
}
