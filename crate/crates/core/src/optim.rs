//! Dense optimization kernels shared by the certificate and attack code.
//!
//! [`simplex_solve`] is a textbook two-phase primal simplex on a dense
//! tableau with Bland's rule. [`box_intersection_project`] computes the
//! Euclidean projection onto `span(V)` intersected with a coordinate box via
//! Dykstra's alternating projections.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Every numerical tolerance used by the solvers.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Smallest admissible pivot magnitude.
    pub pivot: f64,
    /// Reduced costs above `-cost` count as nonnegative.
    pub cost: f64,
    /// Phase-1 objective below this means feasible.
    pub feasibility: f64,
    pub max_pivots: usize,
    pub qp_max_iter: usize,
    /// Dykstra stops once an iteration moves the point less than this (inf-norm).
    pub qp_step: f64,
    /// Orthonormality checks on bases.
    pub orthonormal: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    pivot: 1e-11,
    cost: 1e-11,
    feasibility: 1e-9,
    max_pivots: 100_000,
    qp_max_iter: 10_000,
    qp_step: 1e-12,
    orthonormal: 1e-8,
};

/// `minimize c^T z  subject to  A z <= b`, with `z_j >= 0` unless `j` is free.
#[derive(Debug, Clone)]
pub struct LpProblem {
    objective: Vec<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    free: Vec<bool>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>, rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self> {
        let n = objective.len();
        if n == 0 {
            return Err(Error::Dimension("LP needs at least one variable".into()));
        }
        if rows.len() != rhs.len() {
            return Err(Error::Dimension(format!(
                "LP has {} constraint rows but {} right-hand sides",
                rows.len(),
                rhs.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!("LP row {i} has {} coefficients, expected {n}", row.len())));
            }
        }
        let finite = objective.iter().chain(rhs.iter()).chain(rows.iter().flatten());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("LP data must be finite".into()));
        }
        Ok(Self { objective, rows, rhs, free: vec![false; n] })
    }

    /// Marks variables as unrestricted in sign.
    pub fn with_free(mut self, vars: impl IntoIterator<Item = usize>) -> Self {
        for j in vars {
            self.free[j] = true;
        }
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn is_free(&self, j: usize) -> bool {
        self.free[j]
    }

    /// `max_i max(0, (A z - b)_i)` together with sign violations.
    pub fn primal_residual(&self, z: &[f64]) -> f64 {
        let rows = self.rows.iter().zip(&self.rhs).map(|(row, b)| {
            let lhs: f64 = row.iter().zip(z).map(|(a, x)| a * x).sum();
            (lhs - b).max(0.0)
        });
        let signs = z.iter().zip(&self.free).map(|(&x, &free)| if free { 0.0 } else { (-x).max(0.0) });
        rows.chain(signs).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers `y >= 0` of `A z <= b`; the dual objective is `-b^T y`.
    pub duals: Vec<f64>,
    pub dual_objective: f64,
    pub pivots: usize,
}

impl LpSolution {
    /// Primal minus dual objective. Nonnegative up to rounding at an optimum.
    pub fn gap(&self) -> f64 {
        self.objective - self.dual_objective
    }

    /// `max_i y_i * slack_i`.
    pub fn complementary_slackness(&self, lp: &LpProblem) -> f64 {
        lp.rows
            .iter()
            .zip(&lp.rhs)
            .zip(&self.duals)
            .map(|((row, b), y)| {
                let lhs: f64 = row.iter().zip(&self.x).map(|(a, x)| a * x).sum();
                (y * (b - lhs)).abs()
            })
            .fold(0.0, f64::max)
    }

    fn non_optimal(status: LpStatus, n: usize, m: usize, pivots: usize) -> Self {
        Self {
            status,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            duals: vec![f64::NAN; m],
            dual_objective: f64::NAN,
            pivots,
        }
    }
}

struct Tableau {
    m: usize,
    /// Columns excluding the right-hand side.
    cols: usize,
    /// Row-major `m x (cols + 1)`; the last entry of each row is the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
    /// Reduced costs, plus the negated objective value in the last slot.
    cost_row: Vec<f64>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.cols + 1) + self.cols]
    }

    fn price(&mut self, costs: &[f64]) {
        let w = self.cols + 1;
        self.cost_row.clear();
        self.cost_row.extend_from_slice(costs);
        self.cost_row.push(0.0);
        for i in 0..self.m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * w..(i + 1) * w];
                for (r, a) in self.cost_row.iter_mut().zip(row) {
                    *r -= cb * a;
                }
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.cols + 1;
        let p = self.t[row * w + col];
        for v in &mut self.t[row * w..(row + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[row * w..(row + 1) * w].to_vec();
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let f = self.t[i * w + col];
            if f != 0.0 {
                for (v, pr) in self.t[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                self.t[i * w + col] = 0.0;
            }
        }
        let f = self.cost_row[col];
        if f != 0.0 {
            for (v, pr) in self.cost_row.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            self.cost_row[col] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs primal simplex with Bland's rule over the allowed columns.
    fn run(&mut self, allowed: &[bool], tol: &Tolerances) -> LpStatus {
        loop {
            if self.pivots >= tol.max_pivots {
                return LpStatus::IterationCap;
            }
            let entering = (0..self.cols).find(|&j| allowed[j] && self.cost_row[j] < -tol.cost);
            let Some(col) = entering else {
                return LpStatus::Optimal;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, col);
                if a > tol.pivot {
                    let ratio = self.rhs(i).max(0.0) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return LpStatus::Unbounded,
                Some((row, _)) => self.pivot(row, col),
            }
        }
    }
}

/// Solves an [`LpProblem`] by the two-phase primal simplex method.
///
/// Non-optimal outcomes are reported through [`LpSolution::status`].
pub fn simplex_solve(lp: &LpProblem) -> LpSolution {
    simplex_solve_with(lp, &TOLERANCES)
}

pub fn simplex_solve_with(lp: &LpProblem, tol: &Tolerances) -> LpSolution {
    let n = lp.num_vars();
    let m = lp.num_constraints();

    // Structural columns: one per nonnegative variable, two per free one.
    let mut col_of: Vec<(usize, Option<usize>)> = Vec::with_capacity(n);
    let mut n_struct = 0;
    for j in 0..n {
        if lp.free[j] {
            col_of.push((n_struct, Some(n_struct + 1)));
            n_struct += 2;
        } else {
            col_of.push((n_struct, None));
            n_struct += 1;
        }
    }
    let slack0 = n_struct;
    let negated: Vec<bool> = lp.rhs.iter().map(|&b| b < 0.0).collect();
    let n_art = negated.iter().filter(|&&neg| neg).count();
    let art0 = slack0 + m;
    let cols = art0 + n_art;
    let w = cols + 1;

    let mut t = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let mut next_art = art0;
    for i in 0..m {
        let s = if negated[i] { -1.0 } else { 1.0 };
        let row = &mut t[i * w..(i + 1) * w];
        for (j, &(pos, neg)) in col_of.iter().enumerate() {
            row[pos] = s * lp.rows[i][j];
            if let Some(neg) = neg {
                row[neg] = -s * lp.rows[i][j];
            }
        }
        row[slack0 + i] = s;
        row[cols] = s * lp.rhs[i];
        if negated[i] {
            row[next_art] = 1.0;
            basis[i] = next_art;
            next_art += 1;
        } else {
            basis[i] = slack0 + i;
        }
    }
    let mut tab = Tableau { m, cols, t, basis, cost_row: Vec::with_capacity(w), pivots: 0 };

    let mut allowed = vec![true; cols];
    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        phase1[art0..].iter_mut().for_each(|c| *c = 1.0);
        tab.price(&phase1);
        match tab.run(&allowed, tol) {
            LpStatus::Optimal => {}
            LpStatus::IterationCap => return LpSolution::non_optimal(LpStatus::IterationCap, n, m, tab.pivots),
            // Phase 1 is bounded below by zero.
            LpStatus::Unbounded | LpStatus::Infeasible => unreachable!(),
        }
        let infeasibility = -tab.cost_row[cols];
        let scale = 1.0 + lp.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if infeasibility > tol.feasibility * scale {
            return LpSolution::non_optimal(LpStatus::Infeasible, n, m, tab.pivots);
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= art0 {
                if let Some(j) = (0..art0).find(|&j| tab.at(i, j).abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
        allowed[art0..].iter_mut().for_each(|a| *a = false);
    }

    let mut costs = vec![0.0; cols];
    for (j, &(pos, neg)) in col_of.iter().enumerate() {
        costs[pos] = lp.objective[j];
        if let Some(neg) = neg {
            costs[neg] = -lp.objective[j];
        }
    }
    tab.price(&costs);
    let status = tab.run(&allowed, tol);
    if status != LpStatus::Optimal {
        return LpSolution::non_optimal(status, n, m, tab.pivots);
    }

    let mut values = vec![0.0; cols];
    for i in 0..m {
        values[tab.basis[i]] = tab.rhs(i);
    }
    let x: Vec<f64> = col_of.iter().map(|&(pos, neg)| values[pos] - neg.map_or(0.0, |k| values[k])).collect();
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let duals: Vec<f64> = (0..m).map(|i| tab.cost_row[slack0 + i].max(0.0)).collect();
    let dual_objective = -lp.rhs.iter().zip(&duals).map(|(b, y)| b * y).sum::<f64>();
    LpSolution { status, x, objective, duals, dual_objective, pivots: tab.pivots }
}

/// Euclidean projection of `V target` onto `span(V) ∩ {delta : lo <= delta <= hi}`,
/// returned in the coordinates of `V`.
///
/// `V` must have orthonormal columns and the box must contain the origin. The
/// returned point satisfies the box exactly: the converged Dykstra iterate is
/// scaled toward the origin by the (tiny) factor needed to remove rounding
/// violations.
pub fn box_subspace_project(
    v: &DMatrix<f64>,
    target: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    let d = v.nrows();
    crate::error::check_len("subspace target", target.len(), v.ncols())?;
    crate::error::check_len("box lower bound", lo.len(), d)?;
    crate::error::check_len("box upper bound", hi.len(), d)?;
    if lo.iter().zip(hi).any(|(l, h)| !(*l <= 0.0 && 0.0 <= *h)) {
        return Err(Error::InvalidParameter("box must contain the origin".into()));
    }
    if v.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }

    let inside = |z: &DVector<f64>| z.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| l <= x && x <= h);
    let start = v * target;
    if inside(&start) {
        return Ok(target.clone());
    }

    let clip = |z: &DVector<f64>| {
        DVector::from_iterator(d, z.iter().zip(lo.iter().zip(hi)).map(|(x, (l, h))| x.clamp(*l, *h)))
    };
    let mut coords = target.clone();
    let mut point = start;
    let mut correction = DVector::<f64>::zeros(d);
    let mut converged = false;
    for _ in 0..tol.qp_max_iter {
        let shifted = &point + &correction;
        let boxed = clip(&shifted);
        correction = shifted - &boxed;
        let new_coords = v.tr_mul(&boxed);
        let new_point = v * &new_coords;
        let step = (&new_point - &point).amax();
        coords = new_coords;
        point = new_point;
        if step <= tol.qp_step {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "box/subspace projection did not converge in {} iterations",
            tol.qp_max_iter
        )));
    }

    // Largest theta in [0, 1] with theta * point inside the box.
    let mut theta = 1.0_f64;
    for (x, (l, h)) in point.iter().zip(lo.iter().zip(hi)) {
        if *x > *h {
            theta = theta.min(h / x);
        } else if *x < *l {
            theta = theta.min(l / x);
        }
    }
    let mut out = coords * theta;
    // Rounding in V * out may still nudge a coordinate past a bound; shrink until it does not.
    for _ in 0..8 {
        if inside(&(v * &out)) {
            return Ok(out);
        }
        out *= 1.0 - 1e-12;
    }
    if inside(&(v * &out)) {
        Ok(out)
    } else {
        Err(Error::Numerical("box/subspace projection left the box".into()))
    }
}

/// Projection used by the subspace attack: the box is
/// `{delta : |delta|_inf <= epsilon, |x + delta|_inf <= 1/2}`.
pub fn box_intersection_project(
    v: &DMatrix<f64>,
    target: &DVector<f64>,
    epsilon: f64,
    x: &[f64],
) -> Result<DVector<f64>> {
    crate::error::check_len("input", x.len(), v.nrows())?;
    let lo: Vec<f64> = x.iter().map(|xi| (-epsilon).max(-0.5 - xi)).collect();
    let hi: Vec<f64> = x.iter().map(|xi| epsilon.min(0.5 - xi)).collect();
    box_subspace_project(v, target, &lo, &hi, &TOLERANCES)
}
