//! Distance from a point to the cube boundary along an affine slice:
//! `t = min_alpha |x + V alpha|_inf`, solved as a linear program.

use nalgebra::DMatrix;
use projsmooth::certgeom::linf_distance;
use projsmooth::optim::{simplex_solve, LpProblem};
use projsmooth::projection::random_basis;

fn main() -> projsmooth::Result<()> {
    let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let r = linf_distance(&[0.3, 0.4], &v)?;
    println!("x = (0.3, 0.4), V = e_1: t = {:.6}, alpha = {:.6}", r.t, r.alpha[0]);

    let basis = random_basis(10, 4, 2)?;
    let x: Vec<f64> = (0..10).map(|i| 0.45 * ((i as f64) * 1.7).sin()).collect();
    let r = linf_distance(&x, basis.v())?;
    let x_inf = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    println!("d = 10, d - p = 6: |x|_inf = {x_inf:.4}, t = {:.6}, duality gap {:.2e}", r.t, r.gap);

    // The solver is general: minimize -x - y subject to x + 2y <= 4, 3x + y <= 6.
    let lp = LpProblem::new(vec![-1.0, -1.0], vec![vec![1.0, 2.0], vec![3.0, 1.0]], vec![4.0, 6.0])?;
    let sol = simplex_solve(&lp);
    println!("LP: status {:?}, x = {:?}, objective {:.4}, gap {:.1e}", sol.status, sol.x, sol.objective, sol.gap());
    Ok(())
}
