//! PCA against a random orthonormal basis of the same dimension.

use projsmooth::classifier::{finetune_on_reconstruction, train, Activation, MlpClassifier, TrainConfig};
use projsmooth::data::{gen_lowrank_split, GenParams};
use projsmooth::projection::{fit_pca, random_basis, ProjectionBasis};
use projsmooth::smoothing::{project_certify, SmoothingParams};

fn certified_accuracy(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    data: &projsmooth::data::Dataset,
    prm: &SmoothingParams,
) -> projsmooth::Result<f64> {
    let mut hits = 0;
    for i in 0..data.len() {
        if project_certify(model, basis, data.row(i), prm)?.certified().is_some_and(|c| c.class == data.label(i)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

fn main() -> projsmooth::Result<()> {
    let params = GenParams { d: 64, intrinsic_dim: 8, classes: 4, seed: 2, ..GenParams::default() };
    let (train_set, test_set) = gen_lowrank_split(&params, 3000, 50)?;
    let cfg = TrainConfig { epochs: 8, learning_rate: 0.05, noise_sigma: 0.25, ..TrainConfig::default() };
    let model = train(&MlpClassifier::new(&[64, 64, 4], Activation::Tanh, 0)?, &train_set, &cfg)?;
    let prm = SmoothingParams { sigma: 0.25, n0: 100, n: 1000, alpha: 0.001, seed: 4 };
    let tune = TrainConfig { epochs: 3, ..cfg };

    for p in [4, 8, 16] {
        let pca = fit_pca(&train_set.to_matrix(), p)?;
        let rnd = random_basis(64, p, 17)?;
        let a =
            certified_accuracy(&finetune_on_reconstruction(&model, &pca, &train_set, &tune)?, &pca, &test_set, &prm)?;
        let b =
            certified_accuracy(&finetune_on_reconstruction(&model, &rnd, &train_set, &tune)?, &rnd, &test_set, &prm)?;
        println!("p = {p:>2}: pca {a:.2}  random {b:.2}");
    }
    Ok(())
}
