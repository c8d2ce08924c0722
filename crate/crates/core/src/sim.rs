//! Seeded Monte Carlo estimation of the misclassification probability.
//!
//! Trial `t` of a run with master seed `s` draws everything from a ChaCha8
//! stream keyed by `(s, t)`, so results do not depend on scheduling or on
//! the number of worker threads.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::KernelAnalysis;
use crate::classifier::ClassifierContext;
use crate::design::{design_prop5, random_kernel, MeasurementKernel};
use crate::error::{Error, Result};
use crate::model::{LabeledDataset, SourceModel};
use crate::numerics::RankTolerance;

/// `σ² = 10^(dB/10)`, so −60 dB is `1e-6`.
pub fn noise_db_to_variance(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn variance_to_noise_db(sigma2: f64) -> f64 {
    10.0 * sigma2.log10()
}

/// SplitMix64 finalizer; derives independent sub-seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeEstimate {
    pub pe: f64,
    /// `√(P̂(1−P̂)/trials)`, or the one-sided 95% bound `3/trials` when no
    /// error was observed.
    pub se: f64,
    pub errors: u64,
    pub trials: u64,
}

impl PeEstimate {
    pub fn from_counts(errors: u64, trials: u64) -> Self {
        let n = trials as f64;
        let pe = errors as f64 / n;
        let se = if errors == 0 {
            3.0 / n
        } else {
            (pe * (1.0 - pe) / n).sqrt()
        };
        Self {
            pe,
            se,
            errors,
            trials,
        }
    }
}

/// Where test vectors come from.
#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    /// Fresh draws from the classifier's own model.
    Model,
    /// Held-out labeled vectors; trial `t` uses sample `t mod n`.
    Dataset(&'a LabeledDataset),
}

/// Fraction of trials where `classify(Φx + n) ≠ label`.
pub fn estimate_pe(
    model: &SourceModel,
    kernel: &MeasurementKernel,
    sigma2: f64,
    trials: u64,
    seed: u64,
) -> Result<PeEstimate> {
    estimate_pe_from(model, kernel, sigma2, trials, seed, SampleSource::Model)
}

pub fn estimate_pe_from(
    model: &SourceModel,
    kernel: &MeasurementKernel,
    sigma2: f64,
    trials: u64,
    seed: u64,
    source: SampleSource<'_>,
) -> Result<PeEstimate> {
    if trials == 0 {
        return Err(Error::validation("at least one trial is required"));
    }
    let ctx = ClassifierContext::new(model, kernel, sigma2)?;
    if let SampleSource::Dataset(ds) = source {
        if ds.is_empty() {
            return Err(Error::validation("held-out dataset is empty"));
        }
        if ds.dim() != model.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.ambient_dim(),
                got: ds.dim(),
            });
        }
    }
    let phi = kernel.matrix();
    let sigma = sigma2.sqrt();
    let m = kernel.rows();
    let errors = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = trial_rng(seed, t);
            let (label, x) = match source {
                SampleSource::Model => model.sample(&mut rng),
                SampleSource::Dataset(ds) => {
                    let (label, x) = &ds.samples()[(t % ds.len() as u64) as usize];
                    (*label, x.clone())
                }
            };
            let noise = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            let y = phi * x + noise * sigma;
            ctx.classify(&y) != label
        })
        .count() as u64;
    Ok(PeEstimate::from_counts(errors, trials))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NoiseDb,
    Measurements,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub pe: f64,
    pub se: f64,
    pub bound: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub trials: u64,
    pub master_seed: u64,
}

/// One estimate per noise level, annotated with the union bound and the
/// decay exponent. Every level reuses the master seed, so the signal draws
/// are shared across levels.
pub fn sweep_noise(
    model: &SourceModel,
    kernel: &MeasurementKernel,
    noise_db: &[f64],
    trials: u64,
    seed: u64,
    tol: RankTolerance,
) -> Result<SweepResult> {
    sweep_noise_from(model, kernel, noise_db, trials, seed, tol, SampleSource::Model)
}

pub fn sweep_noise_from(
    model: &SourceModel,
    kernel: &MeasurementKernel,
    noise_db: &[f64],
    trials: u64,
    seed: u64,
    tol: RankTolerance,
    source: SampleSource<'_>,
) -> Result<SweepResult> {
    if noise_db.is_empty() {
        return Err(Error::validation("noise grid is empty"));
    }
    let analysis = KernelAnalysis::new(model, kernel, tol)?;
    let d = exponent_or_nan(&analysis)?;
    let mut levels = noise_db.to_vec();
    levels.sort_by(f64::total_cmp);
    let points = levels
        .iter()
        .map(|&db| {
            let sigma2 = noise_db_to_variance(db);
            let est = estimate_pe_from(model, kernel, sigma2, trials, seed, source)?;
            Ok(SweepPoint {
                axis_value: db,
                pe: est.pe,
                se: est.se,
                bound: analysis.union_bound(sigma2)?.value,
                d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::NoiseDb,
        points,
        trials,
        master_seed: seed,
    })
}

fn exponent_or_nan(analysis: &KernelAnalysis) -> Result<f64> {
    match analysis.exponent_report() {
        Ok(r) => Ok(r.d),
        Err(Error::Validation(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepDesign {
    Random,
    Prop5,
}

impl std::str::FromStr for SweepDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SweepDesign::Random),
            "prop5" => Ok(SweepDesign::Prop5),
            other => Err(Error::validation(format!(
                "measurement sweeps support random or prop5, got '{other}'"
            ))),
        }
    }
}

/// Kernel used at measurement count `m` of a sweep or transition search.
pub fn kernel_for(
    model: &SourceModel,
    design: SweepDesign,
    m: usize,
    seed: u64,
    tol: RankTolerance,
) -> Result<MeasurementKernel> {
    let kseed = derive_seed(seed, m as u64);
    match design {
        SweepDesign::Random => random_kernel(m, model.ambient_dim(), kseed),
        SweepDesign::Prop5 => design_prop5(model, m, kseed, tol),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sweep_measurements(
    model: &SourceModel,
    design: SweepDesign,
    m_list: &[usize],
    sigma2: f64,
    trials: u64,
    seed: u64,
    tol: RankTolerance,
    source: SampleSource<'_>,
) -> Result<SweepResult> {
    if m_list.is_empty() {
        return Err(Error::validation("measurement grid is empty"));
    }
    if m_list.contains(&0) {
        return Err(Error::validation("measurement counts must be >= 1"));
    }
    let mut ms = m_list.to_vec();
    ms.sort_unstable();
    let points = ms
        .iter()
        .map(|&m| {
            let kernel = kernel_for(model, design, m, seed, tol)?;
            let analysis = KernelAnalysis::new(model, &kernel, tol)?;
            let est = estimate_pe_from(model, &kernel, sigma2, trials, derive_seed(seed, 1 << 32 | m as u64), source)?;
            Ok(SweepPoint {
                axis_value: m as f64,
                pe: est.pe,
                se: est.se,
                bound: analysis.union_bound(sigma2)?.value,
                d: exponent_or_nan(&analysis)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::Measurements,
        points,
        trials,
        master_seed: seed,
    })
}

/// Decay rate `−slope` of the least-squares line through
/// `(log(1/σ²), log value)`.
pub fn empirical_slope(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::validation("slope needs at least two points"));
    }
    if curve.iter().any(|&(s2, v)| !(s2 > 0.0 && v > 0.0)) {
        return Err(Error::validation("slope needs positive noise levels and values"));
    }
    let xs: Vec<f64> = curve.iter().map(|&(s2, _)| -s2.ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|&(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::validation("slope needs at least two distinct noise levels"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(-(sxy / sxx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionCriterion {
    /// `d > 0`, decided from ranks alone.
    ExponentPositive,
    /// Monte Carlo `P̂_e` below the threshold.
    PeBelow { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    /// Smallest `M` meeting the criterion, `None` if none up to `m_max`.
    pub m: Option<usize>,
    pub m_max: usize,
    pub criterion: TransitionCriterion,
    pub design: SweepDesign,
}

#[allow(clippy::too_many_arguments)]
pub fn find_transition(
    model: &SourceModel,
    design: SweepDesign,
    m_max: usize,
    criterion: TransitionCriterion,
    sigma2: f64,
    trials: u64,
    seed: u64,
    tol: RankTolerance,
) -> Result<TransitionReport> {
    let upper = match design {
        SweepDesign::Random => m_max,
        SweepDesign::Prop5 => m_max.min(model.num_classes()),
    };
    for m in 1..=upper {
        let kernel = kernel_for(model, design, m, seed, tol)?;
        let met = match criterion {
            TransitionCriterion::ExponentPositive => KernelAnalysis::new(model, &kernel, tol)?.exponent_positive(),
            TransitionCriterion::PeBelow { threshold } => {
                estimate_pe(model, &kernel, sigma2, trials, derive_seed(seed, m as u64))?.pe < threshold
            }
        };
        if met {
            return Ok(TransitionReport {
                m: Some(m),
                m_max,
                criterion,
                design,
            });
        }
    }
    Ok(TransitionReport {
        m: None,
        m_max,
        criterion,
        design,
    })
}
