//! The L-class zero-mean low-rank Gaussian source.
//!
//! Class indices are 0-based in memory; file formats use 1-based labels.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    check_symmetric, random_subspace_covariance, subspace_intersection_dim, EigenSpectrum,
    RankTolerance, SpectralDecomposition,
};

const PRIOR_SUM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SourceModel {
    priors: Vec<f64>,
    covariances: Vec<DMatrix<f64>>,
    ambient_dim: usize,
    class_rank: usize,
    class_ranks: Vec<usize>,
    /// Spectral square roots `U_r diag(√λ)`, one `N × r_i` block per class.
    factors: Vec<DMatrix<f64>>,
    tol: RankTolerance,
}

impl SourceModel {
    pub fn new(priors: Vec<f64>, covariances: Vec<DMatrix<f64>>, tol: RankTolerance) -> Result<Self> {
        let l = priors.len();
        if l == 0 {
            return Err(Error::validation("a source model needs at least one class"));
        }
        if covariances.len() != l {
            return Err(Error::validation(format!(
                "{} priors but {} covariances",
                l,
                covariances.len()
            )));
        }
        if priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::validation("priors must be finite and nonnegative"));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(Error::validation(format!("priors sum to {total}, expected 1")));
        }
        let n = covariances[0].nrows();
        let mut factors = Vec::with_capacity(l);
        let mut class_ranks = Vec::with_capacity(l);
        for (i, cov) in covariances.iter().enumerate() {
            if cov.nrows() != n || cov.ncols() != n {
                return Err(Error::validation(format!(
                    "covariance of class {} is {}x{}, expected {n}x{n}",
                    i + 1,
                    cov.nrows(),
                    cov.ncols()
                )));
            }
            check_symmetric(cov)?;
            let sd = SpectralDecomposition::new(cov)?;
            let lmin = sd.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if n > 0 && lmin < -PSD_TOL * sd.lambda_max().max(f64::MIN_POSITIVE) {
                return Err(Error::validation(format!(
                    "covariance of class {} is not positive semidefinite (min eigenvalue {lmin:e})",
                    i + 1
                )));
            }
            let r = sd.rank(tol);
            let mut f = sd.eigenvectors.columns(0, r).into_owned();
            for (k, mut col) in f.column_iter_mut().enumerate() {
                col *= sd.eigenvalues[k].sqrt();
            }
            factors.push(f);
            class_ranks.push(r);
        }
        let class_rank = modal(&class_ranks);
        if class_ranks.iter().any(|&r| r != class_rank) {
            log::warn!("class covariances have unequal ranks {class_ranks:?}; recording modal rank {class_rank}");
        }
        Ok(Self {
            priors,
            covariances,
            ambient_dim: n,
            class_rank,
            class_ranks,
            factors,
            tol,
        })
    }

    /// Equal-prior model whose classes are independent Grassmann-uniform
    /// rank-`r` covariances in `R^N`.
    pub fn synthetic<R: Rng + ?Sized>(
        n: usize,
        l: usize,
        r: usize,
        spectrum: EigenSpectrum,
        tol: RankTolerance,
        rng: &mut R,
    ) -> Result<Self> {
        if l == 0 {
            return Err(Error::validation("number of classes must be at least 1"));
        }
        let covariances = (0..l)
            .map(|_| random_subspace_covariance(n, r, spectrum, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vec![1.0 / l as f64; l], covariances, tol)
    }

    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn class_rank(&self) -> usize {
        self.class_rank
    }

    pub fn class_ranks(&self) -> &[usize] {
        &self.class_ranks
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn covariance(&self, class: usize) -> &DMatrix<f64> {
        &self.covariances[class]
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn tolerance(&self) -> RankTolerance {
        self.tol
    }

    /// `R = 2 min{N − r_Σ, r_Σ}` for the recorded class rank.
    pub fn rank_gap(&self) -> usize {
        2 * (self.ambient_dim - self.class_rank).min(self.class_rank)
    }

    /// Draws a class label from the priors and a vector from `N(0, Σ_label)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, DVector<f64>) {
        let label = if self.priors.len() == 1 {
            0
        } else {
            WeightedIndex::new(&self.priors)
                .expect("priors validated at construction")
                .sample(rng)
        };
        (label, self.sample_class(label, rng))
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> DVector<f64> {
        let f = &self.factors[class];
        let z = DVector::from_fn(f.ncols(), |_, _| StandardNormal.sample(rng));
        f * z
    }

    /// Dimension of every class image and of every pairwise intersection.
    pub fn geometry_summary(&self, tol: RankTolerance) -> Result<Vec<PairSubspaceGeometry>> {
        let images = self
            .covariances
            .iter()
            .map(|c| Ok(SpectralDecomposition::new(c)?.image_basis(tol)))
            .collect::<Result<Vec<_>>>()?;
        let l = self.num_classes();
        let mut out = Vec::with_capacity(l * (l - 1) / 2);
        for i in 0..l {
            for j in (i + 1)..l {
                out.push(pair_subspace_geometry(i, j, &images[i], &images[j], tol)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairSubspaceGeometry {
    pub i: usize,
    pub j: usize,
    pub dim_i: usize,
    pub dim_j: usize,
    pub dim_intersection: usize,
    /// `dim R_i + dim R_j − 2 dim(R_i ∩ R_j)`.
    pub rank_gap: usize,
}

pub fn pair_subspace_geometry(
    i: usize,
    j: usize,
    image_i: &DMatrix<f64>,
    image_j: &DMatrix<f64>,
    tol: RankTolerance,
) -> Result<PairSubspaceGeometry> {
    let dim_intersection = subspace_intersection_dim(image_i, image_j, tol)?;
    let (dim_i, dim_j) = (image_i.ncols(), image_j.ncols());
    Ok(PairSubspaceGeometry {
        i,
        j,
        dim_i,
        dim_j,
        dim_intersection,
        rank_gap: dim_i + dim_j - 2 * dim_intersection,
    })
}

fn modal(values: &[usize]) -> usize {
    let mut best = (0usize, 0usize);
    for &v in values {
        let count = values.iter().filter(|&&w| w == v).count();
        // ties resolve to the smaller rank
        if count > best.1 || (count == best.1 && v < best.0) {
            best = (v, count);
        }
    }
    best.0
}

/// Labeled samples; labels are 0-based class indices.
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    dim: usize,
    samples: Vec<(usize, DVector<f64>)>,
}

impl LabeledDataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            samples: Vec::new(),
        }
    }

    pub fn from_samples(dim: usize, samples: Vec<(usize, DVector<f64>)>) -> Result<Self> {
        let mut ds = Self::new(dim);
        for (label, x) in samples {
            ds.push(label, x)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, label: usize, x: DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.samples.push((label, x));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(usize, DVector<f64>)] {
        &self.samples
    }

    pub fn class_counts(&self, l: usize) -> Vec<usize> {
        let mut counts = vec![0; l];
        for (label, _) in &self.samples {
            if *label < l {
                counts[*label] += 1;
            }
        }
        counts
    }
}

/// Maximum-likelihood fit of the zero-mean model: `p̂_i = n_i / n` and
/// `Σ̂_i = (1/n_i) Σ x xᵀ + ridge·I` (no mean subtraction).
pub fn fit_ml(data: &LabeledDataset, l: usize, n: usize, ridge: f64, tol: RankTolerance) -> Result<SourceModel> {
    if data.is_empty() {
        return Err(Error::validation("cannot fit a model to an empty dataset"));
    }
    if data.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: data.dim(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::validation(format!("ridge must be nonnegative, got {ridge}")));
    }
    if let Some((label, _)) = data.samples().iter().find(|(label, _)| *label >= l) {
        return Err(Error::validation(format!(
            "label {} out of range 1..={l}",
            label + 1
        )));
    }
    let counts = data.class_counts(l);
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!(
            "class {} has no samples",
            missing + 1
        )));
    }
    let mut sums = vec![DMatrix::<f64>::zeros(n, n); l];
    for (label, x) in data.samples() {
        sums[*label].ger(1.0, x, x, 1.0);
    }
    let total = data.len() as f64;
    let priors = counts.iter().map(|&c| c as f64 / total).collect::<Vec<_>>();
    let covariances = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            let mut cov = s / c as f64;
            for k in 0..n {
                cov[(k, k)] += ridge;
            }
            cov
        })
        .collect();
    SourceModel::new(normalize_priors(priors), covariances, tol)
}

fn normalize_priors(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}
