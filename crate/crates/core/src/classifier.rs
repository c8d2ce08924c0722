//! MAP classifier on compressive measurements `y = Φx + n`.

use nalgebra::{DMatrix, DVector};

use crate::design::MeasurementKernel;
use crate::error::{Error, Result};
use crate::model::SourceModel;
use crate::numerics::SpectralDecomposition;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
struct ClassDensity {
    /// `diag(1/√(λ_k+σ²)) Uᵀ`; whitens `y` under this class.
    whitener: DMatrix<f64>,
    /// `−½ Σ log(λ_k+σ²) − (M/2) log 2π`.
    log_norm: f64,
    log_prior: f64,
}

/// Per-class Gaussian densities of `y`, covariance `ΦΣ_iΦᵀ + σ²I`.
#[derive(Debug, Clone)]
pub struct ClassifierContext {
    classes: Vec<ClassDensity>,
    sigma2: f64,
    m: usize,
}

impl ClassifierContext {
    pub fn new(model: &SourceModel, kernel: &MeasurementKernel, sigma2: f64) -> Result<Self> {
        if kernel.cols() != model.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.ambient_dim(),
                got: kernel.cols(),
            });
        }
        let projected: Vec<_> = model.covariances().iter().map(|c| kernel.project(c)).collect();
        Self::from_projected(model.priors(), &projected, sigma2)
    }

    /// Builds the context directly from `ΦΣ_iΦᵀ` matrices.
    pub fn from_projected(priors: &[f64], projected: &[DMatrix<f64>], sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::validation(format!("noise variance must be > 0, got {sigma2}")));
        }
        if priors.len() != projected.len() || priors.is_empty() {
            return Err(Error::validation("one prior per projected covariance is required"));
        }
        let m = projected[0].nrows();
        let mut classes = Vec::with_capacity(priors.len());
        for (s, &p) in projected.iter().zip(priors) {
            if s.nrows() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: s.nrows(),
                });
            }
            let sd = SpectralDecomposition::new(s)?;
            let shifted: Vec<f64> = sd.eigenvalues.iter().map(|l| l.max(0.0) + sigma2).collect();
            let mut whitener = sd.eigenvectors.transpose();
            for (k, mut row) in whitener.row_iter_mut().enumerate() {
                row /= shifted[k].sqrt();
            }
            let log_norm = -0.5 * shifted.iter().map(|v| v.ln()).sum::<f64>() - 0.5 * m as f64 * LN_2PI;
            classes.push(ClassDensity {
                whitener,
                log_norm,
                log_prior: p.ln(),
            });
        }
        Ok(Self { classes, sigma2, m })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn measurements(&self) -> usize {
        self.m
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn log_likelihood(&self, y: &DVector<f64>, class: usize) -> Result<f64> {
        if y.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: y.len(),
            });
        }
        let c = self.classes.get(class).ok_or_else(|| {
            Error::validation(format!("class index {} out of range", class + 1))
        })?;
        Ok(self.class_log_likelihood(c, y))
    }

    fn class_log_likelihood(&self, c: &ClassDensity, y: &DVector<f64>) -> f64 {
        c.log_norm - 0.5 * (&c.whitener * y).norm_squared()
    }

    /// `argmax_i log p_i + log p(y | i)`; ties go to the lowest index.
    pub fn classify(&self, y: &DVector<f64>) -> usize {
        debug_assert_eq!(y.len(), self.m);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in self.classes.iter().enumerate() {
            if c.log_prior == f64::NEG_INFINITY {
                continue;
            }
            let score = c.log_prior + self.class_log_likelihood(c, y);
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    }
}
