use nalgebra::{DMatrix, DVector};
use projsmooth::certgeom::linf_distance;
use projsmooth::optim::{box_intersection_project, simplex_solve, LpProblem, LpStatus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves the square system `A x = b` by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot = a[col].clone();
        for r in col + 1..n {
            let f = a[r][col] / pivot[col];
            for (dst, src) in a[r][col..].iter_mut().zip(&pivot[col..]) {
                *dst -= f * src;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum of `c^T x` over `A x <= b, x >= 0` by enumerating every vertex.
/// `None` when no vertex is feasible.
fn vertex_enumeration(c: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Option<f64> {
    let n = c.len();
    let mut all_rows: Vec<Vec<f64>> = rows.to_vec();
    let mut all_rhs = rhs.to_vec();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = -1.0;
        all_rows.push(e);
        all_rhs.push(0.0);
    }
    let mut best: Option<f64> = None;
    for active in combinations(all_rows.len(), n) {
        let a: Vec<Vec<f64>> = active.iter().map(|&i| all_rows[i].clone()).collect();
        let b: Vec<f64> = active.iter().map(|&i| all_rhs[i]).collect();
        let Some(x) = solve_square(a, b) else { continue };
        let feasible =
            all_rows.iter().zip(&all_rhs).all(|(r, bi)| r.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() <= bi + 1e-9);
        if feasible {
            let val: f64 = c.iter().zip(&x).map(|(u, v)| u * v).sum();
            best = Some(best.map_or(val, |b: f64| b.min(val)));
        }
    }
    best
}

/// Random bounded LP: `n` variables in `[0, 10]` plus `m` random rows, `n + m <= 12`.
fn random_lp(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=12 - n);
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for _ in 0..m {
        rows.push((0..n).map(|_| rng.random_range(-3.0..3.0)).collect());
        rhs.push(rng.random_range(-2.0..8.0));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push(e);
        rhs.push(10.0);
    }
    (c, rows, rhs)
}

#[test]
fn lower_bound_constraint() {
    // minimize x subject to x >= 3
    let lp = LpProblem::new(vec![1.0], vec![vec![-1.0]], vec![-3.0]).unwrap();
    let sol = simplex_solve(&lp);
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.x[0] - 3.0).abs() <= 1e-9);
    assert!((sol.objective - 3.0).abs() <= 1e-9);
}

#[test]
fn infeasible_and_unbounded_are_reported() {
    let lp = LpProblem::new(vec![1.0], vec![vec![1.0]], vec![-1.0]).unwrap();
    assert_eq!(simplex_solve(&lp).status, LpStatus::Infeasible);
    let lp = LpProblem::new(vec![-1.0], vec![vec![-1.0]], vec![0.0]).unwrap();
    assert_eq!(simplex_solve(&lp).status, LpStatus::Unbounded);
}

#[test]
fn matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut optimal = 0;
    for case in 0..1000 {
        let (c, rows, rhs) = random_lp(&mut rng);
        let lp = LpProblem::new(c.clone(), rows.clone(), rhs.clone()).unwrap();
        let sol = simplex_solve(&lp);
        match vertex_enumeration(&c, &rows, &rhs) {
            Some(best) => {
                optimal += 1;
                assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
                assert!(
                    (sol.objective - best).abs() <= 1e-6 * best.abs().max(1.0),
                    "case {case}: simplex {} vs enumeration {best}",
                    sol.objective
                );
                assert!(lp.primal_residual(&sol.x) <= 1e-8, "case {case}");
                assert!(sol.complementary_slackness(&lp) <= 1e-7, "case {case}");
                assert!(sol.gap().abs() <= 1e-7, "case {case}: gap {}", sol.gap());
                assert!(sol.duals.iter().all(|&y| y >= -1e-12));
            }
            None => assert_eq!(sol.status, LpStatus::Infeasible, "case {case}"),
        }
    }
    assert!(optimal > 300, "only {optimal} feasible instances");
}

#[test]
fn free_variables() {
    // minimize s subject to |a - 2| <= s, s free, a free
    let lp = LpProblem::new(vec![0.0, 1.0], vec![vec![1.0, -1.0], vec![-1.0, -1.0]], vec![2.0, -2.0])
        .unwrap()
        .with_free([0, 1]);
    let sol = simplex_solve(&lp);
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.x[0] - 2.0).abs() <= 1e-9);
    assert!(sol.objective.abs() <= 1e-9);
}

#[test]
fn linf_small_example() {
    let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let r = linf_distance(&[0.3, 0.4], &v).unwrap();
    assert!((r.t - 0.4).abs() <= 1e-9);
}

#[test]
fn linf_full_span_and_empty_span() {
    let x = [0.3, -0.2, 0.45];
    let full = linf_distance(&x, &DMatrix::identity(3, 3)).unwrap();
    assert!(full.t <= 1e-9);
    let empty = linf_distance(&x, &DMatrix::zeros(3, 0)).unwrap();
    assert_eq!(empty.t, 0.45);
}

/// Grid over a single nullspace coordinate.
fn linf_grid_1d(x: &[f64], v: &DMatrix<f64>) -> f64 {
    let steps = 400_000;
    (0..=steps)
        .map(|i| {
            let a = -2.0 + 4.0 * i as f64 / steps as f64;
            x.iter().enumerate().map(|(j, xi)| (xi + a * v[(j, 0)]).abs()).fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn linf_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let d = rng.random_range(2..=4);
        let mut col = DVector::<f64>::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        col /= col.norm();
        let v = DMatrix::from_column_slice(d, 1, col.as_slice());
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let t = linf_distance(&x, &v).unwrap().t;
        let grid = linf_grid_1d(&x, &v);
        // The grid step bounds the discretization error by 1e-5 per unit of |v|_inf <= 1.
        assert!(t <= grid + 1e-9, "LP {t} above grid {grid}");
        assert!(grid - t <= 1e-5, "LP {t} vs grid {grid}");
    }
}

/// Golden-section minimization of a convex function on `[lo, hi]`.
fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn qp_matches_one_dimensional_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..200 {
        let mut col = DVector::<f64>::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        col /= col.norm();
        let v = DMatrix::from_column_slice(3, 1, col.as_slice());
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-0.45..0.45)).collect();
        let eps: f64 = rng.random_range(0.01..0.2);
        let target = DVector::from_element(1, rng.random_range(-1.0..1.0));
        // Feasible b form an interval: each coordinate bounds b * v_i.
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..3 {
            let (l, h) = ((-eps).max(-0.5 - x[i]), eps.min(0.5 - x[i]));
            let vi = v[(i, 0)];
            if vi.abs() < 1e-15 {
                continue;
            }
            let (a, b) = if vi > 0.0 { (l / vi, h / vi) } else { (h / vi, l / vi) };
            lo = lo.max(a);
            hi = hi.min(b);
        }
        let t = target[0];
        let oracle = golden(|b| (b - t) * (b - t), lo, hi);
        let got = box_intersection_project(&v, &target, eps, &x).unwrap();
        assert!((got[0] - oracle).abs() <= 1e-6, "case {case}: {} vs {oracle}", got[0]);
    }
}

#[test]
fn qp_returns_feasible_target_unchanged() {
    let v = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let target = DVector::from_vec(vec![0.01, -0.02]);
    let got = box_intersection_project(&v, &target, 0.1, &[0.0, 0.0, 0.0]).unwrap();
    assert!((got - target).amax() <= 1e-12);
}

#[test]
fn qp_all_infeasible_directions_give_zero() {
    // x sits on the cube boundary in both coordinates V touches, with opposite
    // signs of V, so b = 0 is the only feasible point.
    let v = DMatrix::from_column_slice(3, 1, &[std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2, 0.0]);
    let x = [0.5, 0.5, 0.0];
    let target = DVector::from_element(1, 0.3);
    let got = box_intersection_project(&v, &target, 0.1, &x).unwrap();
    assert!(got[0].abs() <= 1e-9, "{}", got[0]);
    let got = box_intersection_project(&v, &(-target), 0.1, &[-0.5, 0.5, 0.0]).unwrap();
    // Feasible set is b >= 0 here, so -0.3 projects to 0.
    assert!(got[0].abs() <= 1e-9, "{}", got[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_output_is_feasible_and_optimal(
        seed in any::<u64>(),
        eps in 0.005f64..0.3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 6;
        let k = 3;
        let basis = projsmooth::projection::random_basis(d, d - k, seed).unwrap();
        let v = basis.v().clone();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let target = DVector::from_fn(k, |_, _| rng.random_range(-0.5..0.5));
        let b = box_intersection_project(&v, &target, eps, &x).unwrap();
        let delta = &v * &b;
        for i in 0..d {
            prop_assert!(delta[i].abs() <= eps + 1e-6);
            prop_assert!((x[i] + delta[i]).abs() <= 0.5 + 1e-6);
        }
        // Variational inequality against random feasible points (scaled copies of b stay feasible).
        for _ in 0..50 {
            let s = rng.random_range(0.0..1.0);
            let z = &b * s;
            let ip = (&target - &b).dot(&(&z - &b));
            prop_assert!(ip <= 1e-6, "inner product {}", ip);
        }
    }

    #[test]
    fn linf_respects_trivial_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..8);
        let p = rng.random_range(1..d);
        let basis = projsmooth::projection::random_basis(d, p, seed).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let r = linf_distance(&x, basis.v()).unwrap();
        let xinf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(r.t >= -1e-12 && r.t <= xinf + 1e-12);
        prop_assert!(r.gap <= 1e-7);
        for _ in 0..100 {
            let a = DVector::from_fn(d - p, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_column_slice(&x) + basis.v() * a;
            prop_assert!(r.t <= y.amax() + 1e-9);
        }
    }
}
