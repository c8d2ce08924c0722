//! Union-Bhattacharyya bound on the MAP misclassification probability and
//! its low-noise expansion `P̄_e = g (σ²)^d + o((σ²)^d)`.
//!
//! All quantities are computed from the spectra of the projected
//! covariances `S_i = ΦΣ_iΦᵀ` and `S_ij = Φ(Σ_i + Σ_j)Φᵀ`. Zero eigenvalues
//! are separated out so that the `(σ²)^{r_i + r_j − 2r_ij}` factor is handled
//! symbolically and nothing underflows as σ² → 0.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::MeasurementKernel;
use crate::error::{Error, Result};
use crate::ip::{check_target, rank_gap};
use crate::model::SourceModel;
use crate::numerics::{spectral_norm_squared, RankTolerance, SpectralDecomposition};

/// Significant spectrum of one projected covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSpectrum {
    eigenvalues: Vec<f64>,
}

impl ProjectedSpectrum {
    /// Keeps eigenvalues above `tol · scale`, where `scale` is the natural
    /// magnitude of the projection (not its own largest eigenvalue, which may
    /// itself be rounding residue).
    pub fn new(matrix: &DMatrix<f64>, tol: RankTolerance, scale: f64) -> Result<Self> {
        let sd = SpectralDecomposition::new(matrix)?;
        Ok(Self::from_eigenvalues(sd.eigenvalues.as_slice(), tol, scale))
    }

    fn from_eigenvalues(eigenvalues: &[f64], tol: RankTolerance, scale: f64) -> Self {
        let eigenvalues = match tol.cutoff(scale) {
            Some(cut) => eigenvalues.iter().copied().filter(|&l| l > cut).collect(),
            None => Vec::new(),
        };
        Self { eigenvalues }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn log_pdet(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln()).sum()
    }

    fn log_shifted(&self, shift: f64) -> f64 {
        self.eigenvalues.iter().map(|l| (l + shift).ln()).sum()
    }
}

/// Ranks and volumes of one class pair under a kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairGeometry {
    pub i: usize,
    pub j: usize,
    pub r_i: usize,
    pub r_j: usize,
    pub r_ij: usize,
    pub log_v_i: f64,
    pub log_v_j: f64,
    pub log_v_ij: f64,
}

impl PairGeometry {
    /// `4 d(i,j) = 2r_ij − r_i − r_j`, exact.
    pub fn exponent_quarters(&self) -> i64 {
        2 * self.r_ij as i64 - self.r_i as i64 - self.r_j as i64
    }

    pub fn exponent(&self) -> f64 {
        self.exponent_quarters() as f64 / 4.0
    }

    pub fn v_i(&self) -> f64 {
        self.log_v_i.exp()
    }

    pub fn v_j(&self) -> f64 {
        self.log_v_j.exp()
    }

    pub fn v_ij(&self) -> f64 {
        self.log_v_ij.exp()
    }
}

#[derive(Debug, Clone)]
struct PairSpectra {
    si: ProjectedSpectrum,
    sj: ProjectedSpectrum,
    sij: ProjectedSpectrum,
}

impl PairSpectra {
    fn new(kernel: &MeasurementKernel, sigma_i: &DMatrix<f64>, sigma_j: &DMatrix<f64>, tol: RankTolerance) -> Result<Self> {
        check_kernel_dims(kernel, sigma_i)?;
        check_kernel_dims(kernel, sigma_j)?;
        let gain = kernel_gain(kernel);
        let scale = gain * lambda_max(sigma_i)?.max(lambda_max(sigma_j)?);
        Ok(Self {
            si: ProjectedSpectrum::new(&kernel.project(sigma_i), tol, scale)?,
            sj: ProjectedSpectrum::new(&kernel.project(sigma_j), tol, scale)?,
            sij: ProjectedSpectrum::new(&kernel.project(&(sigma_i + sigma_j)), tol, scale)?,
        })
    }

    fn geometry(&self, i: usize, j: usize) -> PairGeometry {
        PairGeometry {
            i,
            j,
            r_i: self.si.rank(),
            r_j: self.sj.rank(),
            r_ij: self.sij.rank(),
            log_v_i: self.si.log_pdet(),
            log_v_j: self.sj.log_pdet(),
            log_v_ij: self.sij.log_pdet(),
        }
    }

    /// Factored Bhattacharyya exponent.
    fn k(&self, sigma2: f64) -> f64 {
        let (ri, rj, rij) = (self.si.rank() as f64, self.sj.rank() as f64, self.sij.rank() as f64);
        let log_ratio = -2.0 * rij * std::f64::consts::LN_2
            + (ri + rj - 2.0 * rij) * sigma2.ln()
            + 2.0 * self.sij.log_shifted(2.0 * sigma2)
            - self.si.log_shifted(sigma2)
            - self.sj.log_shifted(sigma2);
        // nonnegative in exact arithmetic; clip rounding residue
        (0.25 * log_ratio).max(0.0)
    }
}

/// `‖Φ‖₂²`.
fn kernel_gain(kernel: &MeasurementKernel) -> f64 {
    spectral_norm_squared(kernel.matrix())
}

fn lambda_max(sigma: &DMatrix<f64>) -> Result<f64> {
    Ok(SpectralDecomposition::new(sigma)?.lambda_max())
}

fn check_kernel_dims(kernel: &MeasurementKernel, sigma: &DMatrix<f64>) -> Result<()> {
    if sigma.nrows() != kernel.cols() {
        return Err(Error::DimensionMismatch {
            expected: kernel.cols(),
            got: sigma.nrows(),
        });
    }
    Ok(())
}

fn check_noise(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::validation(format!("noise variance must be > 0, got {sigma2}")));
    }
    Ok(())
}

/// `K_ij` at noise variance σ².
pub fn bhattacharyya_exponent(
    kernel: &MeasurementKernel,
    sigma_i: &DMatrix<f64>,
    sigma_j: &DMatrix<f64>,
    sigma2: f64,
    tol: RankTolerance,
) -> Result<f64> {
    check_noise(sigma2)?;
    Ok(PairSpectra::new(kernel, sigma_i, sigma_j, tol)?.k(sigma2))
}

pub fn pairwise_exponent(
    kernel: &MeasurementKernel,
    sigma_i: &DMatrix<f64>,
    sigma_j: &DMatrix<f64>,
    tol: RankTolerance,
) -> Result<PairGeometry> {
    Ok(PairSpectra::new(kernel, sigma_i, sigma_j, tol)?.geometry(0, 1))
}

/// Linear and log value of the union bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    pub value: f64,
    pub log_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentReport {
    pub d: f64,
    pub g: f64,
    /// Ordered pairs `(i, j)`, `i ≠ j`, attaining `d`.
    pub minimizing_pairs: Vec<(usize, usize)>,
    pub pairs: Vec<PairGeometry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corollary1Verdict {
    /// Some pair has `r_i + r_j = 2 r_ij`: the bound tends to `g > 0`.
    Floor,
    /// Every pair has `r_i + r_j < 2 r_ij`: the bound tends to zero.
    Vanishes,
}

impl std::fmt::Display for Corollary1Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Corollary1Verdict::Floor => "floor",
            Corollary1Verdict::Vanishes => "vanishes",
        })
    }
}

/// Precomputed pairwise spectra for one (model, kernel) combination.
#[derive(Debug, Clone)]
pub struct KernelAnalysis {
    priors: Vec<f64>,
    /// Unordered pairs `i < j`, row-major.
    pairs: Vec<((usize, usize), PairSpectra)>,
}

impl KernelAnalysis {
    pub fn new(model: &SourceModel, kernel: &MeasurementKernel, tol: RankTolerance) -> Result<Self> {
        if kernel.cols() != model.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.ambient_dim(),
                got: kernel.cols(),
            });
        }
        let l = model.num_classes();
        let gain = kernel_gain(kernel);
        let mut class_eigs = Vec::with_capacity(l);
        let mut class_max = Vec::with_capacity(l);
        for c in model.covariances() {
            class_eigs.push(SpectralDecomposition::new(&kernel.project(c))?.eigenvalues);
            class_max.push(lambda_max(c)?);
        }
        let mut pairs = Vec::with_capacity(l * l.saturating_sub(1) / 2);
        for i in 0..l {
            for j in (i + 1)..l {
                let sum = model.covariance(i) + model.covariance(j);
                let scale = gain * class_max[i].max(class_max[j]);
                pairs.push((
                    (i, j),
                    PairSpectra {
                        si: ProjectedSpectrum::from_eigenvalues(class_eigs[i].as_slice(), tol, scale),
                        sj: ProjectedSpectrum::from_eigenvalues(class_eigs[j].as_slice(), tol, scale),
                        sij: ProjectedSpectrum::new(&kernel.project(&sum), tol, scale)?,
                    },
                ));
            }
        }
        Ok(Self {
            priors: model.priors().to_vec(),
            pairs,
        })
    }

    pub fn pair_geometries(&self) -> Vec<PairGeometry> {
        self.pairs.iter().map(|&((i, j), ref s)| s.geometry(i, j)).collect()
    }

    /// Union-Bhattacharyya bound summed over ordered pairs `i ≠ j`.
    pub fn union_bound(&self, sigma2: f64) -> Result<BoundValue> {
        check_noise(sigma2)?;
        let terms: Vec<f64> = self
            .pairs
            .iter()
            .filter(|((i, j), _)| self.priors[*i] > 0.0 && self.priors[*j] > 0.0)
            .map(|((i, j), s)| 0.5 * (self.priors[*i].ln() + self.priors[*j].ln()) - s.k(sigma2))
            .collect();
        // each unordered pair appears twice in the ordered sum
        let log_value = log_sum_exp(&terms) + std::f64::consts::LN_2;
        Ok(if terms.is_empty() {
            BoundValue {
                value: 0.0,
                log_value: f64::NEG_INFINITY,
            }
        } else {
            BoundValue {
                value: log_value.exp(),
                log_value,
            }
        })
    }

    pub fn exponent_report(&self) -> Result<ExponentReport> {
        let geoms = self.pair_geometries();
        let Some(min_q) = geoms.iter().map(PairGeometry::exponent_quarters).min() else {
            return Err(Error::validation("decay exponent needs at least two classes"));
        };
        let mut minimizing_pairs = Vec::new();
        let mut log_terms = Vec::new();
        for g in geoms.iter().filter(|g| g.exponent_quarters() == min_q) {
            minimizing_pairs.push((g.i, g.j));
            minimizing_pairs.push((g.j, g.i));
            let (pi, pj) = (self.priors[g.i], self.priors[g.j]);
            if pi > 0.0 && pj > 0.0 {
                let t = 0.5 * (pi.ln() + pj.ln())
                    + 0.5 * g.r_ij as f64 * std::f64::consts::LN_2
                    + 0.5 * (0.5 * (g.log_v_i + g.log_v_j) - g.log_v_ij);
                // (i, j) and (j, i) contribute equally
                log_terms.push(t + std::f64::consts::LN_2);
            }
        }
        minimizing_pairs.sort_unstable();
        let g = if log_terms.is_empty() {
            0.0
        } else {
            log_sum_exp(&log_terms).exp()
        };
        Ok(ExponentReport {
            d: min_q as f64 / 4.0,
            g,
            minimizing_pairs,
            pairs: geoms,
        })
    }

    pub fn corollary1(&self) -> Corollary1Verdict {
        if self.pairs.iter().any(|(_, s)| s.si.rank() + s.sj.rank() == 2 * s.sij.rank()) {
            Corollary1Verdict::Floor
        } else {
            Corollary1Verdict::Vanishes
        }
    }

    /// `d > 0`, i.e. the bound vanishes as σ² → 0.
    pub fn exponent_positive(&self) -> bool {
        self.corollary1() == Corollary1Verdict::Vanishes
    }
}

pub fn union_bhattacharyya_bound(
    model: &SourceModel,
    kernel: &MeasurementKernel,
    sigma2: f64,
    tol: RankTolerance,
) -> Result<BoundValue> {
    check_noise(sigma2)?;
    KernelAnalysis::new(model, kernel, tol)?.union_bound(sigma2)
}

pub fn expansion_constant(model: &SourceModel, kernel: &MeasurementKernel, tol: RankTolerance) -> Result<ExponentReport> {
    KernelAnalysis::new(model, kernel, tol)?.exponent_report()
}

pub fn check_corollary1(model: &SourceModel, kernel: &MeasurementKernel, tol: RankTolerance) -> Result<Corollary1Verdict> {
    Ok(KernelAnalysis::new(model, kernel, tol)?.corollary1())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Random kernel, vanishing error.
    RandomPt,
    /// Random kernel, exponent above `d₀`.
    RandomRate,
    /// Two classes, designed, vanishing error.
    TwoclassPt,
    /// Two classes, designed, exponent above `d₀`.
    TwoclassRate,
    /// One-vs-all design, vanishing error.
    MulticlassPt,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::validation(format!("unknown regime '{s}'")))
    }
}

/// Closed-form measurement counts.
pub fn predicted_measurements(regime: Regime, l: usize, r_sigma: usize, n: usize, d0: f64) -> Result<usize> {
    match regime {
        Regime::RandomPt => Ok(r_sigma + 1),
        Regime::TwoclassPt => Ok(1),
        Regime::MulticlassPt => Ok((l.saturating_sub(1)).min(r_sigma + 1)),
        Regime::RandomRate => {
            check_target(n, r_sigma, d0)?;
            Ok((2.0 * d0 + r_sigma as f64).floor() as usize + 1)
        }
        Regime::TwoclassRate => {
            check_target(n, r_sigma, d0)?;
            Ok((4.0 * d0).floor() as usize + 1)
        }
    }
}

/// Generic-position prediction of `dim(Im Φᵀ ∩ N_i)` for a kernel with
/// `M_i` rows drawn from `N_i` and `M` rows in total.
pub fn predicted_class_null_overlap(m: usize, m_i: usize, r_sigma: usize) -> usize {
    (m as i64 - r_sigma as i64).max(m_i as i64) as usize
}

/// Generic-position prediction of `dim(Im Φᵀ ∩ N_i ∩ N_j)`; requires `N > 2 r_Σ`.
pub fn predicted_pair_null_overlap(m: usize, m_i: usize, m_j: usize, r_sigma: usize) -> usize {
    let r = r_sigma as i64;
    [m as i64 - 2 * r, m_i as i64 - r, m_j as i64 - r, 0]
        .into_iter()
        .max()
        .unwrap_or(0) as usize
}

/// Maximum exponent `R/4` attainable by any kernel for the given geometry.
pub fn exponent_ceiling(n: usize, r_sigma: usize) -> f64 {
    rank_gap(n, r_sigma) as f64 / 4.0
}
