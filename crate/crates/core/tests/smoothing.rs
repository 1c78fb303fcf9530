use projsmooth::classifier::{train, Activation, MlpClassifier, TrainConfig};
use projsmooth::data::{gen_lowrank_split, GenParams};
use projsmooth::projection::identity_slice;
use projsmooth::rng::stream;
use projsmooth::smoothing::{
    clopper_pearson_lower, clopper_pearson_upper, normal_quantile, project_certify, sample_counts, smooth_certify,
    smooth_predict, FnClassifier, Prediction, SmoothOutcome, SmoothingParams,
};
use proptest::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF, Normal};

#[test]
fn quantile_examples() {
    assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() <= 1e-9);
    assert!((normal_quantile(0.841344746).unwrap() - 1.0).abs() <= 1e-6);
    assert!(normal_quantile(0.0).is_err());
    assert!(normal_quantile(1.0).is_err());
}

#[test]
fn quantile_matches_statrs() {
    let n = Normal::new(0.0, 1.0).unwrap();
    for i in 1..1000 {
        let q = i as f64 / 1000.0;
        assert!((normal_quantile(q).unwrap() - n.inverse_cdf(q)).abs() <= 1e-9, "q={q}");
    }
}

#[test]
fn clopper_pearson_solves_the_beta_equation() {
    let lo = clopper_pearson_lower(50, 100, 0.05).unwrap();
    let beta = Beta::new(50.0, 51.0).unwrap();
    assert!((beta.cdf(lo) - 0.05).abs() <= 1e-9);
    assert!(lo < 0.5);
    for (k, n, alpha) in [(1u64, 10u64, 0.01), (999, 1000, 0.001), (9_990, 10_000, 0.001), (3, 7, 0.2)] {
        let lo = clopper_pearson_lower(k, n, alpha).unwrap();
        let beta = Beta::new(k as f64, (n - k + 1) as f64).unwrap();
        assert!((beta.cdf(lo) - alpha).abs() <= 1e-9, "k={k} n={n}");
    }
}

#[test]
fn clopper_pearson_edge_closed_form() {
    for n in [1u64, 10, 1000, 100_000] {
        let lo = clopper_pearson_lower(n, n, 0.001).unwrap();
        assert!((lo - 0.001f64.powf(1.0 / n as f64)).abs() <= 1e-14);
        assert_eq!(clopper_pearson_upper(0, n, 0.001).unwrap(), 1.0 - lo);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clopper_pearson_is_monotone(n in 1u64..500, kf in 0.0f64..1.0, alpha in 0.001f64..0.5) {
        let k = ((n as f64) * kf) as u64;
        let lo = clopper_pearson_lower(k, n, alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(lo <= k as f64 / n as f64 + 1e-12);
        if k < n {
            prop_assert!(clopper_pearson_lower(k + 1, n, alpha).unwrap() >= lo);
        }
        prop_assert!(clopper_pearson_lower(k, n, alpha * 1.5).unwrap() >= lo - 1e-12);
    }
}

fn params(sigma: f64, n: usize, alpha: f64, seed: u64) -> SmoothingParams {
    SmoothingParams { sigma, n0: 100, n, alpha, seed }
}

#[test]
fn constant_classifier_radius() {
    let f = FnClassifier::new(3, 2, |_| 1);
    match smooth_certify(&f, &[0.0; 3], &params(1.0, 100, 0.001, 0)).unwrap() {
        SmoothOutcome::Certified(c) => {
            assert_eq!(c.class, 1);
            let expected = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.001f64.powf(0.01));
            assert!((c.radius - expected).abs() <= 1e-9);
            assert!((c.radius - 1.5006).abs() <= 1e-3, "{}", c.radius);
        }
        SmoothOutcome::Abstain => panic!("constant classifier abstained"),
    }
}

#[test]
fn coin_flip_classifier_abstains() {
    // At x = 0 the sign of the first noise coordinate is a fair coin.
    let f = FnClassifier::new(2, 2, |x: &[f64]| usize::from(x[0] > 0.0));
    let mut predict_abstain = 0;
    let mut certify_abstain = 0;
    for seed in 0..100 {
        let prm = params(0.5, 1000, 0.001, seed);
        if smooth_predict(&f, &[0.0, 0.0], &prm).unwrap() == Prediction::Abstain {
            predict_abstain += 1;
        }
        if smooth_certify(&f, &[0.0, 0.0], &prm).unwrap().is_abstain() {
            certify_abstain += 1;
        }
    }
    assert!(predict_abstain >= 90, "{predict_abstain}");
    assert!(certify_abstain >= 99, "{certify_abstain}");
}

#[test]
fn radius_scales_with_sigma() {
    // Class depends only on the direction of the noise, so counts do not change with sigma.
    let f = FnClassifier::new(2, 2, |x: &[f64]| usize::from(x[0] + 0.3 * x[1] < 0.8 * x[1].abs()));
    let base = smooth_certify(&f, &[0.0, 0.0], &params(0.5, 5000, 0.001, 7)).unwrap();
    let scaled = smooth_certify(&f, &[0.0, 0.0], &params(1.5, 5000, 0.001, 7)).unwrap();
    let (a, b) = (base.certified().unwrap(), scaled.certified().unwrap());
    assert_eq!(a.p_lower, b.p_lower);
    assert!((b.radius - 3.0 * a.radius).abs() <= 1e-12 * b.radius);
}

#[test]
fn certification_is_deterministic() {
    let f = FnClassifier::new(4, 3, |x: &[f64]| {
        if x[0] > 0.2 {
            2
        } else if x[1] > 0.0 {
            1
        } else {
            0
        }
    });
    let prm = params(0.3, 2000, 0.01, 21);
    let x = [0.1, 0.4, -0.2, 0.0];
    assert_eq!(smooth_certify(&f, &x, &prm).unwrap(), smooth_certify(&f, &x, &prm).unwrap());
}

#[test]
fn counts_do_not_depend_on_thread_count() {
    let f = FnClassifier::new(3, 3, |x: &[f64]| (x.iter().sum::<f64>() * 3.0).rem_euclid(3.0) as usize);
    let x = [0.1, 0.2, 0.3];
    let default = sample_counts(&f, &x, 0.4, 20_000, 5, stream::SMOOTH_ESTIMATE);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| sample_counts(&f, &x, 0.4, 20_000, 5, stream::SMOOTH_ESTIMATE));
    assert_eq!(default, single);
}

#[test]
fn full_rank_projection_matches_ambient_smoothing() {
    let (tr, te) = gen_lowrank_split(
        &GenParams { d: 6, intrinsic_dim: 2, classes: 3, n: 0, seed: 2, ..GenParams::default() },
        600,
        20,
    )
    .unwrap();
    let model = train(
        &MlpClassifier::new(&[6, 12, 3], Activation::Tanh, 0).unwrap(),
        &tr,
        &TrainConfig { epochs: 3, learning_rate: 0.05, ..TrainConfig::default() },
    )
    .unwrap();
    let basis = identity_slice(6, 6).unwrap();
    let prm = params(0.25, 1000, 0.001, 3);
    for i in 0..te.len() {
        let x = te.row(i);
        let projected = project_certify(&model, &basis, x, &prm).unwrap();
        let ambient = smooth_certify(&model, x, &prm).unwrap();
        assert_eq!(projected, ambient, "input {i}");
    }
}

#[test]
fn trained_model_is_mostly_certified() {
    let (tr, te) = gen_lowrank_split(
        &GenParams { d: 16, intrinsic_dim: 4, classes: 3, n: 0, seed: 5, ..GenParams::default() },
        2000,
        50,
    )
    .unwrap();
    let model = train(
        &MlpClassifier::new(&[16, 32, 3], Activation::Tanh, 0).unwrap(),
        &tr,
        &TrainConfig { epochs: 10, learning_rate: 0.05, noise_sigma: 0.15, ..TrainConfig::default() },
    )
    .unwrap();
    let prm = params(0.15, 10_000, 0.001, 1);
    let certified = (0..te.len()).filter(|&i| !smooth_certify(&model, te.row(i), &prm).unwrap().is_abstain()).count();
    assert!(certified >= 40, "{certified}/50");
}

#[test]
fn invalid_parameters_are_rejected() {
    let f = FnClassifier::new(1, 2, |_| 0);
    assert!(smooth_certify(&f, &[0.0], &params(0.0, 10, 0.1, 0)).is_err());
    assert!(smooth_certify(&f, &[0.0], &params(1.0, 10, 1.0, 0)).is_err());
    assert!(smooth_certify(&f, &[0.0, 1.0], &params(1.0, 10, 0.1, 0)).is_err());
}
