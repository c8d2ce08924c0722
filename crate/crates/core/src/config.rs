//! Experiment configuration and its resolution into a model, a kernel and a
//! sweep.
//!
//! ```json
//! {
//!   "model": { "synthetic": { "n": 64, "l": 11, "r": 14, "seed": 1 } },
//!   "design": { "kind": "prop5", "m": 10, "seed": 3 },
//!   "noise_db": [-10, -20, -30],
//!   "trials": 10000,
//!   "seed": 7,
//!   "output": "curve.csv"
//! }
//! ```
//!
//! Setting `m_grid` turns the sweep into a measurement sweep at the single
//! noise level in `noise_db`; the design must then be `random` or `prop5`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{
    design_prop3, design_prop4, design_prop5, random_kernel, DesignTag, MeasurementKernel,
};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{fit_ml, LabeledDataset, SourceModel};
use crate::numerics::{EigenSpectrum, RankTolerance};
use crate::sim::{noise_db_to_variance, sweep_measurements, sweep_noise_from, SampleSource, SweepDesign, SweepResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Synthetic {
        n: usize,
        l: usize,
        r: usize,
        #[serde(default)]
        eig_spec: EigenSpectrum,
        seed: u64,
    },
    /// Fit on the training side of a stratified split; held-out rows drive
    /// the error estimate.
    Dataset {
        path: PathBuf,
        l: usize,
        split: f64,
        split_seed: u64,
        #[serde(default)]
        ridge: f64,
    },
    ModelFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub kind: DesignTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    pub seed: u64,
    /// Kernel file for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub design: DesignSpec,
    pub noise_db: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_grid: Option<Vec<usize>>,
    pub trials: u64,
    /// Monte Carlo master seed.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_tolerance")]
    pub rank_tolerance: f64,
}

fn default_tolerance() -> f64 {
    RankTolerance::default().relative_threshold()
}

/// A model ready for analysis, plus held-out rows when it was fitted.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub model: SourceModel,
    pub test: Option<LabeledDataset>,
}

impl ResolvedModel {
    pub fn source(&self) -> SampleSource<'_> {
        match &self.test {
            Some(ds) => SampleSource::Dataset(ds),
            None => SampleSource::Model,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn hash(&self) -> Result<String> {
        io::config_hash(self)
    }

    pub fn tolerance(&self) -> Result<RankTolerance> {
        RankTolerance::new(self.rank_tolerance)
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerance()?;
        if let ModelSource::Dataset { split, .. } = &self.model {
            if !(*split > 0.0 && *split < 1.0) {
                return Err(Error::validation(format!("split fraction must lie in (0, 1), got {split}")));
            }
        }
        if self.noise_db.is_empty() {
            return Err(Error::validation("noise grid is empty"));
        }
        if let Some(v) = self.noise_db.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("noise level {v} dB is not finite")));
        }
        if self.trials == 0 {
            return Err(Error::validation("trials must be >= 1"));
        }
        if let Some(grid) = &self.m_grid {
            if self.noise_db.len() != 1 {
                return Err(Error::validation("a measurement sweep takes exactly one noise level"));
            }
            if grid.is_empty() {
                return Err(Error::validation("measurement grid is empty"));
            }
            SweepDesign::try_from(self.design.kind)?;
        }
        Ok(())
    }

    pub fn resolve_model(&self) -> Result<ResolvedModel> {
        let tol = self.tolerance()?;
        match &self.model {
            ModelSource::Synthetic { n, l, r, eig_spec, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let model = SourceModel::synthetic(*n, *l, *r, *eig_spec, tol, &mut rng)?;
                Ok(ResolvedModel { model, test: None })
            }
            ModelSource::Dataset {
                path,
                l,
                split,
                split_seed,
                ridge,
            } => {
                let ds = io::read_dataset(path, Some(*l))?;
                let (train, test) = io::stratified_split(&ds, *l, *split, *split_seed)?;
                let model = fit_ml(&train, *l, ds.dim(), *ridge, tol)?;
                Ok(ResolvedModel {
                    model,
                    test: Some(test),
                })
            }
            ModelSource::ModelFile { path } => {
                let (model, _) = io::read_model(path, tol)?;
                Ok(ResolvedModel { model, test: None })
            }
        }
    }

    pub fn run_sweep(&self, resolved: &ResolvedModel) -> Result<SweepResult> {
        let tol = self.tolerance()?;
        let model = &resolved.model;
        match &self.m_grid {
            Some(grid) => sweep_measurements(
                model,
                SweepDesign::try_from(self.design.kind)?,
                grid,
                noise_db_to_variance(self.noise_db[0]),
                self.trials,
                self.seed,
                tol,
                resolved.source(),
            ),
            None => {
                let kernel = build_kernel(&self.design, model, tol)?;
                sweep_noise_from(model, &kernel, &self.noise_db, self.trials, self.seed, tol, resolved.source())
            }
        }
    }
}

impl TryFrom<DesignTag> for SweepDesign {
    type Error = Error;

    fn try_from(tag: DesignTag) -> Result<Self> {
        tag.as_str().parse()
    }
}

/// Builds the kernel a design spec describes.
pub fn build_kernel(spec: &DesignSpec, model: &SourceModel, tol: RankTolerance) -> Result<MeasurementKernel> {
    let need_m = || {
        spec.m
            .ok_or_else(|| Error::validation(format!("design {} requires m", spec.kind)))
    };
    match spec.kind {
        DesignTag::Random => random_kernel(need_m()?, model.ambient_dim(), spec.seed),
        DesignTag::Prop3 => design_prop3(model, spec.seed, tol),
        DesignTag::Prop4 => {
            let d0 = spec
                .d0
                .ok_or_else(|| Error::validation("design prop4 requires d0"))?;
            design_prop4(model, d0, spec.seed, tol)
        }
        DesignTag::Prop5 => design_prop5(model, need_m()?, spec.seed, tol),
        DesignTag::Custom => {
            let path = spec
                .kernel_path
                .as_ref()
                .ok_or_else(|| Error::validation("design custom requires kernel_path"))?;
            let (kernel, _) = io::read_kernel(path)?;
            if kernel.cols() != model.ambient_dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.ambient_dim(),
                    got: kernel.cols(),
                });
            }
            Ok(kernel)
        }
    }
}
