//! Fit PCA and random bases to low-rank data and compare reconstruction error.

use projsmooth::data::{gen_lowrank, GenParams};
use projsmooth::projection::{components_for_variance, fit_pca, fit_pca_variance, random_basis, ProjectionBasis};

fn mean_residual(basis: &ProjectionBasis, rows: &[Vec<f64>]) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|x| {
            let r = basis.project_reconstruct(x).unwrap();
            x.iter().zip(r.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .sum();
    total / rows.len() as f64
}

fn main() -> projsmooth::Result<()> {
    let data = gen_lowrank(&GenParams { d: 64, intrinsic_dim: 6, n: 2000, seed: 1, ..GenParams::default() })?;
    let matrix = data.to_matrix();
    let rows: Vec<Vec<f64>> = data.rows().map(<[f64]>::to_vec).collect();

    let pca = fit_pca_variance(&matrix, 0.99)?;
    println!("99% of the variance needs p = {}", pca.projected_dim());
    println!("p for 90%: {}", components_for_variance(pca.eigenvalues(), 0.90));

    println!("{:>4} {:>12} {:>12}", "p", "pca", "random");
    for p in [1, 2, 4, 6, 8, 16] {
        let a = mean_residual(&fit_pca(&matrix, p)?, &rows);
        let b = mean_residual(&random_basis(64, p, 7)?, &rows);
        println!("{p:>4} {a:>12.5} {b:>12.5}");
    }
    Ok(())
}
