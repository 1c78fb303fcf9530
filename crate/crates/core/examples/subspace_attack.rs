//! Attack a trained model with PGD, nullspace-restricted PGD and random noise.

use projsmooth::attack::{attack_sweep, SweepConfig};
use projsmooth::classifier::{train, Activation, MlpClassifier, TrainConfig};
use projsmooth::data::{gen_lowrank_split, GenParams};
use projsmooth::projection::fit_pca_variance;

fn main() -> projsmooth::Result<()> {
    let params = GenParams { d: 64, intrinsic_dim: 8, classes: 4, seed: 11, ..GenParams::default() };
    let (train_set, test_set) = gen_lowrank_split(&params, 3000, 300)?;
    let model = train(
        &MlpClassifier::new(&[64, 64, 4], Activation::Tanh, 0)?,
        &train_set,
        &TrainConfig { epochs: 10, learning_rate: 0.05, ..TrainConfig::default() },
    )?;
    println!("clean test accuracy {:.3}", model.accuracy(&test_set)?);

    let basis = fit_pca_variance(&train_set.to_matrix(), 0.99)?;
    println!("basis keeps p = {} of d = 64", basis.projected_dim());

    let cfg = SweepConfig { max_inputs: 200, seed: 1, ..SweepConfig::default() };
    let rows = attack_sweep(&model, &basis, &test_set, &cfg)?;
    println!("{:>12} {:>8} {:>8} {:>10}", "family", "eps*255", "success", "|U^T d|");
    for r in rows {
        let null = r.mean_nullspace_residual.map_or("-".to_string(), |v| format!("{v:.1e}"));
        println!("{:>12} {:>8.0} {:>8.3} {:>10}", r.family.name(), r.epsilon * 255.0, r.success_rate, null);
    }
    Ok(())
}
