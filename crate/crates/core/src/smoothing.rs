//! Monte Carlo randomized smoothing.
//!
//! `predict` and `certify` follow the usual two-sample-set recipe: a small
//! batch of `n0` noisy draws guesses the top class, `n` fresh draws bound its
//! probability from below with a one-sided Clopper-Pearson interval, and the
//! certified `l2` radius is `sigma * Phi^-1(p_lower)`. Draw `i` for input `id`
//! always uses the generator keyed by `(seed, id, i)`, so counts do not depend
//! on the parallel schedule.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::MlpClassifier;
use crate::error::check_len;
use crate::projection::ProjectionBasis;
use crate::rng::{self, stream};
use crate::special;
use crate::{Error, Result};

pub use crate::special::normal_quantile;

/// A hard classifier that can be queried at noisy inputs.
pub trait BaseClassifier: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Predicted class for `x` (length [`input_dim`](Self::input_dim)).
    fn classify(&self, x: &[f64]) -> usize;
}

impl BaseClassifier for MlpClassifier {
    fn input_dim(&self) -> usize {
        MlpClassifier::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        MlpClassifier::num_classes(self)
    }

    fn classify(&self, x: &[f64]) -> usize {
        self.predict_unchecked(x)
    }
}

/// `f o P~`: the base model applied to the reconstruction `U z` of a point `z` in `R^p`.
#[derive(Debug, Clone, Copy)]
pub struct Reconstructed<'a> {
    pub model: &'a MlpClassifier,
    pub basis: &'a ProjectionBasis,
}

impl<'a> Reconstructed<'a> {
    pub fn new(model: &'a MlpClassifier, basis: &'a ProjectionBasis) -> Result<Self> {
        check_len("model input", model.input_dim(), basis.dim())?;
        Ok(Self { model, basis })
    }
}

impl BaseClassifier for Reconstructed<'_> {
    fn input_dim(&self) -> usize {
        self.basis.projected_dim()
    }

    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn classify(&self, z: &[f64]) -> usize {
        let x = self.basis.reconstruct_unchecked(z);
        self.model.predict_unchecked(x.as_slice())
    }
}

/// Wraps a closure as a [`BaseClassifier`].
pub struct FnClassifier<F> {
    dim: usize,
    classes: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> usize + Sync> FnClassifier<F> {
    pub fn new(dim: usize, classes: usize, f: F) -> Self {
        Self { dim, classes, f }
    }
}

impl<F: Fn(&[f64]) -> usize + Sync> BaseClassifier for FnClassifier<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn classify(&self, x: &[f64]) -> usize {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingParams {
    pub sigma: f64,
    pub n0: usize,
    pub n: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self { sigma: 0.25, n0: 100, n: 10_000, alpha: 0.001, seed: 0 }
    }
}

impl SmoothingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.n0 == 0 || self.n == 0 {
            return Err(Error::InvalidParameter("n0 and n must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certified {
    pub class: usize,
    /// Certified `l2` radius in the smoothing space.
    pub radius: f64,
    pub p_lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothOutcome {
    Abstain,
    Certified(Certified),
}

impl SmoothOutcome {
    pub fn certified(&self) -> Option<&Certified> {
        match self {
            SmoothOutcome::Certified(c) => Some(c),
            SmoothOutcome::Abstain => None,
        }
    }

    pub fn is_abstain(&self) -> bool {
        matches!(self, SmoothOutcome::Abstain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Abstain,
    Class(usize),
}

/// One-sided `(1 - alpha)` lower confidence bound on a binomial proportion:
/// the `alpha` quantile of `Beta(k, n - k + 1)`.
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::InvalidParameter(format!("need 0 <= k <= n and n >= 1, got k={k}, n={n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(if k == 0 {
        0.0
    } else if k == n {
        alpha.powf(1.0 / n as f64)
    } else {
        special::beta_quantile(k as f64, (n - k + 1) as f64, alpha)
    })
}

/// One-sided `(1 - alpha)` upper confidence bound.
pub fn clopper_pearson_upper(k: u64, n: u64, alpha: f64) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidParameter(format!("need k <= n, got k={k}, n={n}")));
    }
    Ok(1.0 - clopper_pearson_lower(n - k, n, alpha)?)
}

/// Class counts of `f(x + sigma * eps_i)` for draws `i in 0..n`.
pub fn sample_counts<C: BaseClassifier + ?Sized>(
    f: &C,
    x: &[f64],
    sigma: f64,
    n: usize,
    seed: u64,
    stream_tag: u64,
) -> Vec<u64> {
    let classes = f.num_classes();
    let dim = x.len();
    (0..n)
        .into_par_iter()
        .fold(
            || (vec![0u64; classes], vec![0.0; dim]),
            |(mut counts, mut buf), i| {
                let mut rng = rng::keyed(seed, stream_tag, i as u64);
                for (b, xi) in buf.iter_mut().zip(x) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *b = xi + sigma * z;
                }
                counts[f.classify(&buf)] += 1;
                (counts, buf)
            },
        )
        .map(|(counts, _)| counts)
        .reduce(
            || vec![0u64; classes],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

fn top_two(counts: &[u64]) -> (usize, u64, u64) {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    let runner_up = counts.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, &c)| c).max().unwrap_or(0);
    (best, counts[best], runner_up)
}

/// Smoothed prediction; abstains unless a two-sided exact binomial test of
/// the top two counts rejects equality at level `alpha`.
pub fn smooth_predict<C: BaseClassifier + ?Sized>(f: &C, x: &[f64], prm: &SmoothingParams) -> Result<Prediction> {
    prm.validate()?;
    check_len("input", x.len(), f.input_dim())?;
    let counts = sample_counts(f, x, prm.sigma, prm.n, prm.seed, stream::SMOOTH_PREDICT);
    let (top, n_a, n_b) = top_two(&counts);
    if special::binomial_test_half(n_a, n_a + n_b) > prm.alpha {
        Ok(Prediction::Abstain)
    } else {
        Ok(Prediction::Class(top))
    }
}

/// Smoothed certification with an `l2` radius in the input space of `f`.
pub fn smooth_certify<C: BaseClassifier + ?Sized>(f: &C, x: &[f64], prm: &SmoothingParams) -> Result<SmoothOutcome> {
    prm.validate()?;
    check_len("input", x.len(), f.input_dim())?;
    let guess = sample_counts(f, x, prm.sigma, prm.n0, prm.seed, stream::SMOOTH_GUESS);
    let (class, _, _) = top_two(&guess);
    let counts = sample_counts(f, x, prm.sigma, prm.n, prm.seed, stream::SMOOTH_ESTIMATE);
    let p_lower = clopper_pearson_lower(counts[class], prm.n as u64, prm.alpha)?;
    if p_lower > 0.5 {
        let radius = prm.sigma * normal_quantile(p_lower)?;
        Ok(SmoothOutcome::Certified(Certified { class, radius, p_lower }))
    } else {
        Ok(SmoothOutcome::Abstain)
    }
}

/// Certifies `f o P~` at `U^T x` with `p`-dimensional noise.
pub fn project_certify(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    x: &[f64],
    prm: &SmoothingParams,
) -> Result<SmoothOutcome> {
    let f = Reconstructed::new(model, basis)?;
    let z = basis.project(x)?;
    smooth_certify(&f, z.as_slice(), prm)
}

pub fn project_predict(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    x: &[f64],
    prm: &SmoothingParams,
) -> Result<Prediction> {
    let f = Reconstructed::new(model, basis)?;
    let z = basis.project(x)?;
    smooth_predict(&f, z.as_slice(), prm)
}
