use proptest::prelude::*;

use dbk_core::correction::CorrectionStats;
use dbk_core::data::{gen_step1d, load_csv, partition, split_sizes, write_csv, Dataset, NormStats};
use dbk_core::dense::{rbf_ard, RbfArdParams};
use dbk_core::eval::metrics;
use dbk_core::exact::LowRankPosterior;
use dbk_core::predictive::PredictiveDistribution;
use dbk_core::rng::Rng;
use dbk_core::{Matrix, NoiseParam};

fn features(seed: u64, n: usize, r: usize) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(n, r, |_, _| rng.normal())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_never_exceeds_rmse(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = Rng::new(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let pred = PredictiveDistribution {
            mean: (0..n).map(|_| 2.0 * rng.normal()).collect(),
            variance: (0..n).map(|_| rng.uniform_range(1e-3, 5.0)).collect(),
        };
        let m = metrics(&pred, &y).unwrap();
        prop_assert!(m.mae <= m.rmse);
        prop_assert!(m.nll.is_finite());
    }

    #[test]
    fn normalization_maps_inputs_to_unit_box_and_inverts(seed in any::<u64>(), n in 2usize..80) {
        let d = gen_step1d(n, 0.05, seed);
        let stats = NormStats::fit(&d).unwrap();
        let t = stats.apply(&d).unwrap();
        for v in t.x.as_slice() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(v));
        }
        let mean = t.y.iter().sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-10);
        for (a, b) in d.y.iter().zip(&t.y) {
            prop_assert!((stats.inverse_y(*b) - a).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive(seed in any::<u64>(), n in 3usize..200) {
        let mut d = gen_step1d(n, 0.0, 0);
        d.y = (0..n).map(|i| i as f64).collect();
        let (tr, va, te) = partition(&d, (0.7, 0.1, 0.2), seed).unwrap();
        let (a, b, c) = split_sizes(n, (0.7, 0.1, 0.2)).unwrap();
        prop_assert_eq!((tr.len(), va.len(), te.len()), (a, b, c));
        let mut all: Vec<usize> = tr.y.iter().chain(&va.y).chain(&te.y).map(|v| *v as usize).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), n in 1usize..40) {
        let d = gen_step1d(n, 0.3, seed);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&d, &p).unwrap();
        let back = load_csv(&p, "y").unwrap();
        prop_assert_eq!(back.x, d.x);
        prop_assert_eq!(back.y, d.y);
        prop_assert_eq!(back.truth, d.truth);
    }

    #[test]
    fn corrected_variance_dominates_exact(seed in any::<u64>(), n in 2usize..60, r in 1usize..8, nv in 1e-3f64..1.0) {
        let phi = features(seed, n, r);
        let y: Vec<f64> = features(seed ^ 1, n, 1).into_vec();
        let stats = CorrectionStats::from_features(&phi);
        let exact = LowRankPosterior::exact(&phi, &y, nv).unwrap();
        let corr = LowRankPosterior::corrected(&phi, &y, nv, &stats).unwrap();
        let star = features(seed ^ 2, 6, r);
        for i in 0..6 {
            let (_, ve) = exact.predict_row(star.row(i)).unwrap();
            let (_, vc) = corr.predict_row(star.row(i)).unwrap();
            prop_assert!(ve >= nv * (1.0 - 1e-12));
            prop_assert!(vc >= ve * (1.0 - 1e-10));
        }
    }

    #[test]
    fn corrected_prior_diagonal_is_flat_on_training_rows(seed in any::<u64>(), n in 1usize..80, r in 1usize..10) {
        let phi = features(seed, n, r);
        let stats = CorrectionStats::from_features(&phi);
        for s in phi.row_sq_norms() {
            prop_assert!((s + stats.c(s) - stats.train_max_sq_norm).abs() <= 1e-12 * stats.train_max_sq_norm.max(1.0));
        }
    }

    #[test]
    fn rbf_gram_is_symmetric_with_outputscale_diagonal(seed in any::<u64>(), n in 1usize..30, d in 1usize..4, ls in -1.0f64..1.0, os in -1.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let x = Matrix::from_fn(n, d, |_, _| rng.uniform_range(-1.0, 1.0));
        let p = RbfArdParams { log_lengthscales: vec![ls; d], log_outputscale: os, noise: NoiseParam::default() };
        let k = rbf_ard(&x, &x, &p).unwrap();
        for i in 0..n {
            prop_assert!((k[(i, i)] - p.outputscale()).abs() < 1e-14);
            for j in 0..n {
                prop_assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
    }
}

#[test]
fn dataset_rejects_mismatched_rows() {
    assert!(Dataset::new(Matrix::zeros(3, 1), vec![0.0; 2]).is_err());
}
