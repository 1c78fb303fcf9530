//! Geometry of the projected certified region.
//!
//! If the smoothed classifier is certified with radius `R` at `U^T x`, the
//! prediction is constant on `x + Omega_R` where
//! `Omega_R = {delta : |U^T delta| <= R}`, a `p`-ball extruded along the
//! nullspace of `U^T`. Its volume inside the cube `C^d = [-1/2, 1/2]^d` is
//! bounded below by
//!
//! ```text
//! pi^(p/2) / Gamma(p/2 + 1) * r^p * (1 - 2r - 2t)^(d-p),   r = min(R, p(1 - 2t) / (2d))
//! ```
//!
//! where `t` is the smallest `l_inf` norm on the affine slice `x + span(V)`.
//! Everything volumetric is carried in `log10`.

use std::f64::consts::{LN_10, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::classifier::MlpClassifier;
use crate::error::check_len;
use crate::optim::{simplex_solve, LpProblem, LpStatus};
use crate::projection::ProjectionBasis;
use crate::rng::{self, stream};
use crate::smoothing::{self, clopper_pearson_lower, clopper_pearson_upper, SmoothOutcome, SmoothingParams};
use crate::special::ln_gamma_unchecked;
use crate::{Error, Result};

pub use crate::special::log_gamma;

/// Slack added to the radius in [`region_contains`], relative to `max(1, |delta|)`.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Offset subtracted from `1/2 - t` when clamping an over-large radius.
pub const RADIUS_CLAMP_MARGIN: f64 = 1e-12;

/// `|U^T delta| <= R`.
pub fn region_contains(basis: &ProjectionBasis, radius: f64, delta: &[f64]) -> Result<bool> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be >= 0, got {radius}")));
    }
    let z = basis.project(delta)?;
    let scale = delta.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    Ok(z.norm() <= radius + MEMBERSHIP_SLACK * scale)
}

/// Solution of `min_alpha |x + V alpha|_inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinfDistance {
    /// `|x + V alpha|_inf` at the returned `alpha`: an upper bound on the minimum.
    pub t: f64,
    pub alpha: DVector<f64>,
    /// `t` minus the LP dual bound; the true minimum lies in `[t - gap, t]`.
    pub gap: f64,
}

/// Minimal `l_inf` norm over the affine slice `x + span(V)`, via the epigraph LP.
pub fn linf_distance(x: &[f64], v: &DMatrix<f64>) -> Result<LinfDistance> {
    let d = v.nrows();
    check_len("input", x.len(), d)?;
    let k = v.ncols();
    let x_inf = x.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    if k == 0 {
        return Ok(LinfDistance { t: x_inf, alpha: DVector::zeros(0), gap: 0.0 });
    }

    // Variables (alpha, s') with s = s' + |x|_inf, so that alpha = 0, s' = 0 is
    // feasible and every right-hand side is nonnegative.
    //   V_i alpha - s' <= |x|_inf - x_i
    //  -V_i alpha - s' <= |x|_inf + x_i
    let mut rows = Vec::with_capacity(2 * d);
    let mut rhs = Vec::with_capacity(2 * d);
    for (vrow, &xi) in v.row_iter().zip(x) {
        let vi: Vec<f64> = vrow.iter().copied().collect();
        let mut up = vi.clone();
        up.push(-1.0);
        rows.push(up);
        rhs.push(x_inf - xi);
        let mut down: Vec<f64> = vi.iter().map(|a| -a).collect();
        down.push(-1.0);
        rows.push(down);
        rhs.push(x_inf + xi);
    }
    let mut objective = vec![0.0; k + 1];
    objective[k] = 1.0;
    let lp = LpProblem::new(objective, rows, rhs)?.with_free(0..=k);
    let sol = simplex_solve(&lp);
    if sol.status != LpStatus::Optimal {
        return Err(Error::Numerical(format!("l_inf regression LP ended with status {:?}", sol.status)));
    }
    let alpha = DVector::from_column_slice(&sol.x[..k]);
    let point = DVector::from_column_slice(x) + v * &alpha;
    let t = point.amax();
    let lower = sol.dual_objective + x_inf;
    Ok(LinfDistance { t, alpha, gap: (t - lower).max(0.0) })
}

fn check_dims(d: usize, p: usize) -> Result<()> {
    if p == 0 || p > d {
        Err(Error::Dimension(format!("need 1 <= p <= d, got p={p}, d={d}")))
    } else {
        Ok(())
    }
}

/// `min{R, p (1 - 2t) / (2d)}`, the maximizer of the volume bound over radii in `[0, R]`.
pub fn optimal_radius(radius: f64, p: usize, d: usize, t: f64) -> Result<f64> {
    check_dims(d, p)?;
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be >= 0, got {radius}")));
    }
    if !(0.0..0.5).contains(&t) {
        return Err(Error::InvalidParameter(format!("t must be in [0, 1/2), got {t}")));
    }
    Ok(radius.min(p as f64 * (1.0 - 2.0 * t) / (2.0 * d as f64)))
}

/// `log10` of the volume of a `d`-dimensional Euclidean ball of radius `r`.
pub fn l2_ball_volume_log10(d: usize, radius: f64) -> f64 {
    if radius <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let half = d as f64 / 2.0;
    half * PI.log10() - ln_gamma_unchecked(half + 1.0) / LN_10 + d as f64 * radius.log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeBound {
    pub log10_volume: f64,
    pub r_star: f64,
    /// The raw radius exceeded `1/2 - t` and was clamped.
    pub clamped: bool,
    /// `t >= 1/2`: the bound is vacuous.
    pub degenerate: bool,
}

/// Volume lower bound with its optimal radius and clamping flags.
pub fn projected_volume_bound(d: usize, p: usize, radius: f64, t: f64) -> Result<VolumeBound> {
    check_dims(d, p)?;
    if !(radius >= 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("need R >= 0 and t >= 0, got R={radius}, t={t}")));
    }
    if t >= 0.5 {
        return Ok(VolumeBound { log10_volume: f64::NEG_INFINITY, r_star: 0.0, clamped: false, degenerate: true });
    }
    let limit = 0.5 - t;
    let clamped = radius > limit;
    let radius = if clamped { (limit - RADIUS_CLAMP_MARGIN).max(0.0) } else { radius };
    let r_star = optimal_radius(radius, p, d, t)?;
    let k = d - p;
    let slack = 1.0 - 2.0 * r_star - 2.0 * t;
    let log10_volume = if r_star <= 0.0 || (k > 0 && slack <= 0.0) {
        f64::NEG_INFINITY
    } else {
        let extrusion = if k == 0 { 0.0 } else { k as f64 * slack.log10() };
        l2_ball_volume_log10(p, r_star) + extrusion
    };
    Ok(VolumeBound { log10_volume, r_star, clamped, degenerate: false })
}

/// `log10` lower bound on `Vol_d(C^d ∩ (x + Omega_R))`.
pub fn projected_volume_log10(d: usize, p: usize, radius: f64, t: f64) -> Result<f64> {
    Ok(projected_volume_bound(d, p, radius, t)?.log10_volume)
}

/// `log10` of (projected bound) / (`d`-ball volume of radius `radius_ball`).
pub fn volume_ratio_log10(d: usize, p: usize, radius_proj: f64, t: f64, radius_ball: f64) -> Result<f64> {
    let proj = projected_volume_log10(d, p, radius_proj, t)?;
    let ball = l2_ball_volume_log10(d, radius_ball);
    Ok(if proj == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if ball == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        proj - ball
    })
}

/// Monte Carlo volume estimate with an exact two-sided 99% binomial interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// `max(estimate - lower, upper - estimate)`.
    pub half_width: f64,
    pub hits: u64,
    pub samples: u64,
}

impl McEstimate {
    fn from_hits(hits: u64, samples: u64, scale: f64) -> Result<Self> {
        let frac = hits as f64 / samples as f64;
        let lo = clopper_pearson_lower(hits, samples, 0.005)?;
        let hi = clopper_pearson_upper(hits, samples, 0.005)?;
        Ok(Self {
            estimate: frac * scale,
            lower: lo * scale,
            upper: hi * scale,
            half_width: (frac - lo).max(hi - frac) * scale,
            hits,
            samples,
        })
    }
}

const MC_CHUNK: usize = 4096;

fn count_hits(samples: usize, seed: u64, hit: impl Fn(&mut rand_chacha::ChaCha8Rng) -> bool + Sync) -> u64 {
    let chunks = samples.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::keyed(seed, stream::MC_VOLUME, c as u64);
            let len = MC_CHUNK.min(samples - c * MC_CHUNK);
            (0..len).filter(|_| hit(&mut rng)).count() as u64
        })
        .sum()
}

/// Fraction of uniform samples `y` from `C^d` with `y - x` in `Omega_R`.
pub fn mc_volume_estimate(
    basis: &ProjectionBasis,
    radius: f64,
    x: &[f64],
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let d = basis.dim();
    check_len("input", x.len(), d)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let u = basis.u();
    let r2 = radius * radius;
    let hits = count_hits(samples, seed, |rng| {
        let delta: Vec<f64> = x.iter().map(|xi| rng.random::<f64>() - 0.5 - xi).collect();
        let norm2: f64 = u.column_iter().map(|c| c.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum();
        norm2 <= r2
    });
    McEstimate::from_hits(hits, samples as u64, 1.0)
}

/// Monte Carlo estimate of the `k`-dimensional volume of
/// `(side * C^d) ∩ (offset + span(V))` for `V` with orthonormal columns.
pub fn slice_volume_estimate(
    v: &DMatrix<f64>,
    offset: &[f64],
    side: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (d, k) = v.shape();
    check_len("offset", offset.len(), d)?;
    if k == 0 || samples == 0 || !(side > 0.0) {
        return Err(Error::InvalidParameter("need k >= 1, samples >= 1 and side > 0".into()));
    }
    // Slice points are x_perp + V b; the cube forces |b|^2 <= d side^2 / 4 - |x_perp|^2.
    let x = DVector::from_column_slice(offset);
    let x_perp = &x - v * v.tr_mul(&x);
    let rho2 = d as f64 * side * side / 4.0 - x_perp.norm_squared();
    if rho2 <= 0.0 {
        return McEstimate::from_hits(0, samples as u64, 0.0);
    }
    let rho = rho2.sqrt();
    let half = side / 2.0;
    let hits = count_hits(samples, seed, |rng| {
        let b = DVector::from_fn(k, |_, _| rng.random_range(-rho..=rho));
        let point = &x_perp + v * b;
        point.iter().all(|c| c.abs() <= half)
    });
    McEstimate::from_hits(hits, samples as u64, (2.0 * rho).powi(k as i32))
}

/// Per-input result of projected certification.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub input_id: usize,
    /// `None` when the smoothing step abstained.
    pub class: Option<usize>,
    pub p_lower: f64,
    pub radius_raw: f64,
    pub radius_clamped: bool,
    pub t: f64,
    pub lp_gap: f64,
    pub r_star: f64,
    pub log10_volume: f64,
    pub log10_l2_ball_volume: f64,
    pub log10_ratio: f64,
}

impl Certificate {
    pub fn abstain(input_id: usize) -> Self {
        Self {
            input_id,
            class: None,
            p_lower: f64::NAN,
            radius_raw: 0.0,
            radius_clamped: false,
            t: f64::NAN,
            lp_gap: f64::NAN,
            r_star: 0.0,
            log10_volume: f64::NEG_INFINITY,
            log10_l2_ball_volume: f64::NEG_INFINITY,
            log10_ratio: f64::NAN,
        }
    }

    pub fn is_abstain(&self) -> bool {
        self.class.is_none()
    }
}

/// Completes a projected-space certificate with `t`, `r*` and the volume bounds.
pub fn certificate_from_radius(
    basis: &ProjectionBasis,
    x: &[f64],
    input_id: usize,
    class: usize,
    radius: f64,
    p_lower: f64,
) -> Result<Certificate> {
    let (d, p) = (basis.dim(), basis.projected_dim());
    let dist = linf_distance(x, basis.v())?;
    let bound = projected_volume_bound(d, p, radius, dist.t)?;
    let ball = l2_ball_volume_log10(d, radius);
    Ok(Certificate {
        input_id,
        class: Some(class),
        p_lower,
        radius_raw: radius,
        radius_clamped: bound.clamped,
        t: dist.t,
        lp_gap: dist.gap,
        r_star: bound.r_star,
        log10_volume: bound.log10_volume,
        log10_l2_ball_volume: ball,
        log10_ratio: volume_ratio_log10(d, p, radius, dist.t, radius)?,
    })
}

/// Full projected certification: smoothing in `R^p`, then the `l_inf`
/// regression, radius adjustment and volume bound.
pub fn project_certify_volume(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    x: &[f64],
    input_id: usize,
    prm: &SmoothingParams,
) -> Result<Certificate> {
    match smoothing::project_certify(model, basis, x, prm)? {
        SmoothOutcome::Abstain => Ok(Certificate::abstain(input_id)),
        SmoothOutcome::Certified(c) => certificate_from_radius(basis, x, input_id, c.class, c.radius, c.p_lower),
    }
}
