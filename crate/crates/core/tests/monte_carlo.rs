mod common;

use common::{tol, ScalarPair};
use compclass::analysis::KernelAnalysis;
use compclass::design::{design_prop5, random_kernel};
use compclass::model::{fit_ml, LabeledDataset, SourceModel};
use compclass::numerics::EigenSpectrum;
use compclass::sim::{estimate_pe, sweep_noise};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn quadrature_oracle_on_equal_classes_is_half() {
    let pair = ScalarPair::new(1.0, 1.0, [1.0, 1.0], [0.5, 0.5]);
    assert!((pair.quadrature_pe(0.3) - 0.5).abs() < 1e-9);
}

#[test]
fn quadrature_oracle_matches_closed_form() {
    // equal priors: error region is |y| beyond t with t² = ln(v2/v1)·v1v2/(v2−v1)
    let pair = ScalarPair::new(1.0, 4.0, [0.6, 0.8], [0.5, 0.5]);
    let sigma2 = 0.1;
    let [v1, v2] = pair.variances(sigma2);
    let t = ((v2 / v1).ln() * v1 * v2 / (v2 - v1)).sqrt();
    let phi = |z: f64| 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let closed = 0.5 * 2.0 * (1.0 - phi(t / v1.sqrt())) + 0.5 * (2.0 * phi(t / v2.sqrt()) - 1.0);
    assert!((pair.quadrature_pe(sigma2) - closed).abs() < 1e-6, "{} vs {closed}", pair.quadrature_pe(sigma2));
}

/// Complementary error function, Numerical Recipes erfcc (|rel err| < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[test]
fn standard_error_covers_quadrature() {
    let pair = ScalarPair::new(1.0, 4.0, [0.6, 0.8], [0.4, 0.6]);
    let sigma2 = 0.1;
    let truth = pair.quadrature_pe(sigma2);
    let runs = 200;
    let covered = (0..runs)
        .filter(|&seed| {
            let est = estimate_pe(&pair.model, &pair.kernel, sigma2, 2000, seed).unwrap();
            (est.pe - truth).abs() <= 3.0 * est.se
        })
        .count();
    assert!(covered as f64 >= 0.99 * runs as f64, "{covered}/{runs}");
}

#[test]
fn doubling_trials_stays_within_six_se() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = SourceModel::synthetic(16, 4, 4, EigenSpectrum::default(), tol(), &mut rng).unwrap();
    let kernel = random_kernel(4, 16, 9).unwrap();
    for seed in 0..5 {
        let mut prev = estimate_pe(&model, &kernel, 1e-2, 1000, seed).unwrap();
        for trials in [2000, 4000, 8000] {
            let next = estimate_pe(&model, &kernel, 1e-2, trials, seed).unwrap();
            assert!((next.pe - prev.pe).abs() <= 6.0 * prev.se, "{prev:?} -> {next:?}");
            prev = next;
        }
    }
}

#[test]
fn pe_decreases_along_a_decade_sweep_when_exponent_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = SourceModel::synthetic(20, 5, 4, EigenSpectrum::default(), tol(), &mut rng).unwrap();
    let kernel = design_prop5(&model, 5, 1, tol()).unwrap();
    assert!(KernelAnalysis::new(&model, &kernel, tol()).unwrap().exponent_positive());
    let grid: Vec<f64> = (0..8).map(|k| -10.0 * k as f64).collect();
    let res = sweep_noise(&model, &kernel, &grid, 4000, 2, tol()).unwrap();
    // points run from the lowest noise level upward
    for w in res.points.windows(2) {
        let slack = 3.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        assert!(w[0].pe <= w[1].pe + slack, "{w:?}");
    }
    for p in &res.points {
        assert!(p.pe <= p.bound + 3.0 * p.se);
    }
}

#[test]
fn fit_converges_with_sample_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = SourceModel::new(
        vec![0.3, 0.7],
        SourceModel::synthetic(6, 2, 2, EigenSpectrum::default(), tol(), &mut rng)
            .unwrap()
            .covariances()
            .to_vec(),
        tol(),
    )
    .unwrap();
    let errors = |n: usize| {
        let mut g = ChaCha8Rng::seed_from_u64(n as u64);
        let ds = LabeledDataset::from_samples(6, (0..n).map(|_| truth.sample(&mut g)).collect()).unwrap();
        let fit = fit_ml(&ds, 2, 6, 0.0, tol()).unwrap();
        let prior_err = (fit.priors()[0] - 0.3).abs();
        let cov_err: f64 = (0..2).map(|k| (fit.covariance(k) - truth.covariance(k)).norm()).sum();
        (prior_err, cov_err)
    };
    let (p_small, c_small) = errors(500);
    let (p_big, c_big) = errors(50_000);
    assert!(p_small <= 5.0 * (0.21f64 / 500.0).sqrt());
    assert!(p_big <= 5.0 * (0.21f64 / 50_000.0).sqrt());
    assert!(c_big < c_small, "{c_big} vs {c_small}");
    // fitted ranks recover the true subspace dimension
    let mut g = ChaCha8Rng::seed_from_u64(1);
    let ds = LabeledDataset::from_samples(6, (0..200).map(|_| truth.sample(&mut g)).collect()).unwrap();
    assert_eq!(fit_ml(&ds, 2, 6, 0.0, tol()).unwrap().class_ranks(), &[2, 2]);
}

#[test]
fn samples_are_zero_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = SourceModel::synthetic(10, 3, 3, EigenSpectrum::default(), tol(), &mut rng).unwrap();
    let n = 20_000;
    for class in 0..3 {
        let mut mean = DVector::zeros(10);
        for _ in 0..n {
            mean += model.sample_class(class, &mut rng);
        }
        mean /= n as f64;
        let bound = 5.0 * (model.covariance(class).trace() / n as f64).sqrt();
        assert!(mean.norm() <= bound, "class {class}: {} > {bound}", mean.norm());
    }
}
