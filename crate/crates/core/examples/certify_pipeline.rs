//! End to end: data, training, PCA basis, finetuning on reconstructions, and
//! projected certification with volume bounds next to the ambient baseline.

use projsmooth::certgeom::{l2_ball_volume_log10, project_certify_volume};
use projsmooth::classifier::{finetune_on_reconstruction, train, Activation, MlpClassifier, TrainConfig};
use projsmooth::data::{gen_lowrank_split, GenParams};
use projsmooth::projection::fit_pca;
use projsmooth::smoothing::{smooth_certify, SmoothingParams};

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> projsmooth::Result<()> {
    let d = 64;
    let p = 8;
    let params = GenParams { d, intrinsic_dim: 8, classes: 4, seed: 5, ..GenParams::default() };
    let (train_set, test_set) = gen_lowrank_split(&params, 3000, 40)?;

    let sigma = 0.25;
    let noisy = TrainConfig { epochs: 10, learning_rate: 0.05, noise_sigma: sigma, ..TrainConfig::default() };
    let model = train(&MlpClassifier::new(&[d, 64, 4], Activation::Tanh, 0)?, &train_set, &noisy)?;
    let basis = fit_pca(&train_set.to_matrix(), p)?;
    let tuned = finetune_on_reconstruction(&model, &basis, &train_set, &TrainConfig { epochs: 3, ..noisy })?;

    let prm = SmoothingParams { sigma, n0: 100, n: 2000, alpha: 0.001, seed: 9 };
    let mut projected = Vec::new();
    let mut ambient = Vec::new();
    let mut correct = (0, 0);
    for i in 0..test_set.len() {
        let (x, y) = (test_set.row(i), test_set.label(i));
        let c = project_certify_volume(&tuned, &basis, x, i, &prm)?;
        if c.class == Some(y) {
            correct.0 += 1;
            projected.push(c.log10_volume);
        }
        if let Some(a) = smooth_certify(&model, x, &prm)?.certified().filter(|a| a.class == y) {
            correct.1 += 1;
            ambient.push(l2_ball_volume_log10(d, a.radius));
        }
    }
    let n = test_set.len();
    println!("{n} inputs, d = {d}, p = {p}, sigma = {sigma}");
    println!(
        "projected: certified accuracy {:.2}, median log10 volume {:.2}",
        correct.0 as f64 / n as f64,
        median(projected)
    );
    println!(
        "ambient:   certified accuracy {:.2}, median log10 volume {:.2}",
        correct.1 as f64 / n as f64,
        median(ambient)
    );
    Ok(())
}
