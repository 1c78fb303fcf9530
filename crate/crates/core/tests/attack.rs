use nalgebra::{DMatrix, DVector};
use projsmooth::attack::{
    attack_sweep, pgd, rand_max, rand_uniform, subspace_pgd, AttackConfig, AttackFamily, SweepConfig,
};
use projsmooth::certgeom::region_contains;
use projsmooth::classifier::{train, Activation, MlpClassifier, TrainConfig};
use projsmooth::data::{gen_lowrank_split, Dataset, GenParams};
use projsmooth::projection::{fit_pca, identity_slice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained(seed: u64) -> (MlpClassifier, Dataset, Dataset) {
    let (tr, te) = gen_lowrank_split(
        &GenParams { d: 24, intrinsic_dim: 4, classes: 3, n: 0, seed, ..GenParams::default() },
        1500,
        200,
    )
    .unwrap();
    let model = train(
        &MlpClassifier::new(&[24, 32, 3], Activation::Tanh, seed).unwrap(),
        &tr,
        &TrainConfig { epochs: 8, learning_rate: 0.05, ..TrainConfig::default() },
    )
    .unwrap();
    (model, tr, te)
}

#[test]
fn one_pgd_step_on_a_linear_model_follows_the_gradient_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(2, |_, _| rng.random_range(-0.1..0.1));
    let model = MlpClassifier::linear(w.clone(), b.clone()).unwrap();
    let x: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
    let y = 0;
    let alpha = 0.01;
    // Closed form: grad_x CE = W^T (softmax(Wx + b) - e_y).
    let z = &w * DVector::from_column_slice(&x) + &b;
    let e = z.map(|v| (v - z.max()).exp());
    let mut p = &e / e.sum();
    p[y] -= 1.0;
    let g = w.transpose() * p;
    let cfg = AttackConfig { epsilon: 0.1, steps: 1, step_size: alpha, family: AttackFamily::Pgd, seed: 0 };
    let r = pgd(&model, &x, y, &cfg).unwrap();
    for i in 0..6 {
        assert!((r.delta[i] - alpha * g[i].signum()).abs() <= 1e-15, "coordinate {i}");
    }
}

#[test]
fn random_attacks_respect_the_constraints() {
    let (model, _, te) = trained(2);
    let eps = 16.0 / 255.0;
    for i in 0..50 {
        let x = te.row(i);
        let y = te.label(i);
        let rm = rand_max(&model, x, y, eps, i as u64).unwrap();
        let ru = rand_uniform(&model, x, y, eps, i as u64).unwrap();
        for r in [&rm, &ru] {
            assert!(r.linf_residual <= 1e-15);
            assert!(r.cube_residual <= 1e-15);
        }
        for (j, d) in rm.delta.iter().enumerate() {
            let unclipped = (x[j] + eps).abs() <= 0.5 && (x[j] - eps).abs() <= 0.5;
            if unclipped {
                assert!((d.abs() - eps).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn uniform_noise_has_the_right_spread() {
    let model = MlpClassifier::zeros(&[2000, 2], Activation::Tanh).unwrap();
    let x = vec![0.0; 2000];
    let eps = 0.1;
    let r = rand_uniform(&model, &x, 0, eps, 9).unwrap();
    let mean = r.delta.mean();
    let var = r.delta.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2000.0;
    assert!(mean.abs() <= 0.005, "{mean}");
    assert!((var - eps * eps / 3.0).abs() <= 0.1 * eps * eps / 3.0, "{var}");
}

#[test]
fn subspace_perturbations_stay_in_every_certified_region() {
    let (model, tr, te) = trained(3);
    let basis = fit_pca(&tr.to_matrix(), 4).unwrap();
    for i in 0..30 {
        let r =
            subspace_pgd(&model, &basis, te.row(i), te.label(i), &AttackConfig::subspace_pgd(32.0 / 255.0)).unwrap();
        assert!(r.linf_residual <= 1e-6 && r.cube_residual <= 1e-6);
        assert!(r.nullspace_residual.unwrap() <= 1e-8);
        for radius in [0.0, 1e-6, 0.1] {
            assert!(region_contains(&basis, radius, r.delta.as_slice()).unwrap());
        }
    }
}

#[test]
fn nullspace_orthogonal_to_the_decision_cannot_flip_it() {
    // The model reads only the first coordinate; the nullspace of the basis
    // is the last coordinate, which it ignores.
    let mut w = DMatrix::zeros(2, 4);
    w[(0, 0)] = 5.0;
    w[(1, 0)] = -5.0;
    let model = MlpClassifier::linear(w, DVector::zeros(2)).unwrap();
    let basis = identity_slice(4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut clean_errors = 0;
    let mut successes = 0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-0.4..0.4)).collect();
        let y = usize::from(x[0] < 0.1);
        if model.predict(&x).unwrap() != y {
            clean_errors += 1;
        }
        let r = subspace_pgd(&model, &basis, &x, y, &AttackConfig::subspace_pgd(0.1)).unwrap();
        successes += usize::from(r.success);
    }
    assert_eq!(successes, clean_errors);
}

#[test]
fn tiny_budget_success_equals_clean_error() {
    let (model, _, te) = trained(4);
    let eps = 1e-9;
    let mut errors = 0;
    let mut successes = 0;
    for i in 0..100 {
        let (x, y) = (te.row(i), te.label(i));
        errors += usize::from(model.predict(x).unwrap() != y);
        let cfg = AttackConfig { epsilon: eps, steps: 5, step_size: eps / 2.0, family: AttackFamily::Pgd, seed: 0 };
        successes += usize::from(pgd(&model, x, y, &cfg).unwrap().success);
    }
    assert_eq!(successes, errors);
}

#[test]
fn sweep_is_monotone_and_ordered() {
    let (model, tr, te) = trained(6);
    let basis = fit_pca(&tr.to_matrix(), 4).unwrap();
    let cfg = SweepConfig { max_inputs: 100, seed: 1, ..SweepConfig::default() };
    let rows = attack_sweep(&model, &basis, &te, &cfg).unwrap();
    assert_eq!(rows.len(), 4 * cfg.epsilons.len());
    let rate = |f: AttackFamily, e: f64| rows.iter().find(|r| r.family == f && r.epsilon == e).unwrap().success_rate;
    for &f in &AttackFamily::ALL {
        for w in cfg.epsilons.windows(2) {
            assert!(rate(f, w[1]) >= rate(f, w[0]) - 0.02, "{f} not monotone at {}", w[1]);
        }
    }
    for &e in &cfg.epsilons {
        assert!(rate(AttackFamily::Pgd, e) >= rate(AttackFamily::SubspacePgd, e));
        assert!(rate(AttackFamily::Pgd, e) >= rate(AttackFamily::RandUniform, e));
    }
    assert_eq!(rows, attack_sweep(&model, &basis, &te, &cfg).unwrap());
}

#[test]
fn invalid_budgets_are_rejected() {
    let model = MlpClassifier::zeros(&[2, 2], Activation::Tanh).unwrap();
    assert!(pgd(&model, &[0.0, 0.0], 0, &AttackConfig::pgd(0.0)).is_err());
    assert!(pgd(&model, &[0.0, 0.0], 0, &AttackConfig::pgd(1.5)).is_err());
    assert!(pgd(&model, &[0.0, 0.9], 0, &AttackConfig::pgd(0.1)).is_err());
}
