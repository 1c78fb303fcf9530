//! Log-volume of the projected certified region against an l2 ball of the same radius.

use projsmooth::certgeom::{l2_ball_volume_log10, optimal_radius, projected_volume_bound, volume_ratio_log10};

fn main() -> projsmooth::Result<()> {
    let (d, p, radius, t) = (3072, 450, 0.5, 0.4);
    let bound = projected_volume_bound(d, p, radius, t)?;
    println!("d = {d}, p = {p}, R = {radius}, t = {t}");
    println!("  r* = {:.6} (clamped: {})", bound.r_star, bound.clamped);
    println!("  log10 projected volume >= {:.2}", bound.log10_volume);
    println!("  log10 l2 ball volume    = {:.2}", l2_ball_volume_log10(d, radius));

    println!("\nlog10 ratio, R = 0.5, t = 0.4");
    let ps = [32, 64, 100, 450];
    print!("{:>6}", "d/p");
    for p in ps {
        print!("{p:>10}");
    }
    println!();
    for m in [2, 4, 8, 16] {
        print!("{m:>6}");
        for p in ps {
            print!("{:>10.1}", volume_ratio_log10(m * p, p, 0.5, 0.4, 0.5)?);
        }
        println!();
    }

    println!("\noptimal radius caps R at p (1 - 2t) / (2d):");
    for r in [0.001, 0.01, 0.1] {
        println!("  R = {r:<6} -> r* = {:.6}", optimal_radius(r, 8, 64, 0.1)?);
    }
    Ok(())
}
