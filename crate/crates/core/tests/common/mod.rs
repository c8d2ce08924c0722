#![allow(dead_code)]

use compclass::design::MeasurementKernel;
use compclass::model::SourceModel;
use compclass::numerics::RankTolerance;
use nalgebra::DMatrix;

pub fn tol() -> RankTolerance {
    RankTolerance::default()
}

/// Two classes in `R²` seen through one row: `y ~ N(0, v_k)` under class `k`.
pub struct ScalarPair {
    pub model: SourceModel,
    pub kernel: MeasurementKernel,
}

impl ScalarPair {
    pub fn new(a: f64, b: f64, row: [f64; 2], priors: [f64; 2]) -> Self {
        let s1 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![a, 0.0]));
        let s2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, b]));
        let model = SourceModel::new(priors.to_vec(), vec![s1, s2], tol()).unwrap();
        let kernel = MeasurementKernel::custom(DMatrix::from_row_slice(1, 2, &row)).unwrap();
        Self { model, kernel }
    }

    pub fn variances(&self, sigma2: f64) -> [f64; 2] {
        let p = |k: usize| self.kernel.project(self.model.covariance(k))[(0, 0)] + sigma2;
        [p(0), p(1)]
    }

    /// `∫ min_k p_k f_k(y) dy` by composite Simpson on a wide symmetric grid.
    pub fn quadrature_pe(&self, sigma2: f64) -> f64 {
        let v = self.variances(sigma2);
        let pr = self.model.priors();
        let dens = |y: f64, k: usize| {
            pr[k] * (-0.5 * y * y / v[k]).exp() / (2.0 * std::f64::consts::PI * v[k]).sqrt()
        };
        let half = 40.0 * v[0].max(v[1]).sqrt();
        let steps = 400_000usize;
        let h = 2.0 * half / steps as f64;
        let f = |y: f64| dens(y, 0).min(dens(y, 1));
        let mut acc = f(-half) + f(half);
        for s in 1..steps {
            let y = -half + s as f64 * h;
            acc += if s % 2 == 1 { 4.0 } else { 2.0 } * f(y);
        }
        acc * h / 3.0
    }
}
