//! Randomized smoothing of a hand-written classifier: predict and certify.

use projsmooth::smoothing::{smooth_certify, smooth_predict, FnClassifier, SmoothOutcome, SmoothingParams};

fn main() -> projsmooth::Result<()> {
    // Two half-planes split at x_0 = 0.
    let f = FnClassifier::new(2, 2, |x: &[f64]| usize::from(x[0] > 0.0));
    let prm = SmoothingParams { sigma: 0.25, n0: 100, n: 10_000, alpha: 0.001, seed: 3 };

    println!("{:>6} {:>10} {:>8} {:>10}", "x_0", "predict", "class", "radius");
    for x0 in [-0.4, -0.2, -0.05, 0.0, 0.05, 0.2, 0.4] {
        let x = [x0, 0.0];
        let pred = smooth_predict(&f, &x, &prm)?;
        match smooth_certify(&f, &x, &prm)? {
            SmoothOutcome::Certified(c) => {
                println!("{x0:>6.2} {:>10} {:>8} {:>10.4}", format!("{pred:?}"), c.class, c.radius)
            }
            SmoothOutcome::Abstain => println!("{x0:>6.2} {:>10} {:>8} {:>10}", format!("{pred:?}"), "-", "abstain"),
        }
    }
    println!("|x_0| is the exact distance to the decision boundary");
    Ok(())
}
