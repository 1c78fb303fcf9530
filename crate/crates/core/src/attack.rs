//! `l_inf` attacks on the unprotected base model.
//!
//! [`subspace_pgd`] restricts the perturbation to the nullspace of `U^T`,
//! which the projected smoothed classifier ignores by construction: every
//! perturbation it returns lies in the certified region for any radius.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::MlpClassifier;
use crate::data::Dataset;
use crate::error::check_len;
use crate::optim;
use crate::projection::ProjectionBasis;
use crate::rng::{self, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackFamily {
    #[serde(rename = "PGD")]
    Pgd,
    #[serde(rename = "SubspacePGD")]
    SubspacePgd,
    RandMax,
    RandUniform,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 4] =
        [AttackFamily::Pgd, AttackFamily::SubspacePgd, AttackFamily::RandMax, AttackFamily::RandUniform];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Pgd => "PGD",
            AttackFamily::SubspacePgd => "SubspacePGD",
            AttackFamily::RandMax => "RandMax",
            AttackFamily::RandUniform => "RandUniform",
        }
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub family: AttackFamily,
    pub seed: u64,
}

impl AttackConfig {
    /// 40 steps of size 2/255.
    pub fn pgd(epsilon: f64) -> Self {
        Self { epsilon, steps: 40, step_size: 2.0 / 255.0, family: AttackFamily::Pgd, seed: 0 }
    }

    /// 5 steps of size `epsilon / 4`.
    pub fn subspace_pgd(epsilon: f64) -> Self {
        Self { epsilon, steps: 5, step_size: epsilon / 4.0, family: AttackFamily::SubspacePgd, seed: 0 }
    }

    pub fn random(family: AttackFamily, epsilon: f64, seed: u64) -> Self {
        Self { epsilon, steps: 1, step_size: epsilon, family, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be in (0, 1], got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("attack needs at least one step".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be > 0, got {}", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub family: AttackFamily,
    pub delta: DVector<f64>,
    /// The attacked model's prediction on `x + delta` differs from the label.
    pub success: bool,
    /// `max(0, |delta|_inf - epsilon)`.
    pub linf_residual: f64,
    /// `max(0, |x + delta|_inf - 1/2)`.
    pub cube_residual: f64,
    /// `|U^T delta|`, for [`AttackFamily::SubspacePgd`] only.
    pub nullspace_residual: Option<f64>,
}

fn finish(
    family: AttackFamily,
    model: &MlpClassifier,
    x: &[f64],
    y: usize,
    delta: DVector<f64>,
    epsilon: f64,
    basis: Option<&ProjectionBasis>,
) -> AttackResult {
    let adv: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
    let success = model.predict_unchecked(&adv) != y;
    let linf_residual = (delta.amax() - epsilon).max(0.0);
    let cube_residual = (adv.iter().fold(0.0_f64, |m, v| m.max(v.abs())) - 0.5).max(0.0);
    let nullspace_residual = basis.map(|b| b.project_unchecked(delta.as_slice()).norm());
    AttackResult { family, delta, success, linf_residual, cube_residual, nullspace_residual }
}

fn check_input(model: &MlpClassifier, x: &[f64], y: usize) -> Result<()> {
    check_len("input", x.len(), model.input_dim())?;
    if y >= model.num_classes() {
        return Err(Error::InvalidParameter(format!("label {y} out of range")));
    }
    if x.iter().any(|v| !(v.abs() <= 0.5)) {
        return Err(Error::InvalidParameter("attack input must lie in [-1/2, 1/2]^d".into()));
    }
    Ok(())
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign-gradient ascent on the cross-entropy, clipped to the `epsilon` box
/// around `x` and to the cube after every step. Starts at `x`.
pub fn pgd(model: &MlpClassifier, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, x, y)?;
    let eps = cfg.epsilon;
    let mut adv = x.to_vec();
    for _ in 0..cfg.steps {
        let g = model.input_gradient(&adv, y)?;
        for (i, a) in adv.iter_mut().enumerate() {
            let stepped = *a + cfg.step_size * sign(g[i]);
            let delta = (stepped - x[i]).clamp(-eps, eps);
            *a = (x[i] + delta).clamp(-0.5, 0.5);
        }
    }
    let delta = DVector::from_iterator(x.len(), adv.iter().zip(x).map(|(a, b)| a - b));
    Ok(finish(AttackFamily::Pgd, model, x, y, delta, eps, None))
}

/// Projection onto `{b : |V b|_inf <= epsilon, |x + V b|_inf <= 1/2}` in the
/// coordinates of `V`, i.e. `argmin |b - target|^2` over that set.
pub fn qp_project(v: &DMatrix<f64>, target: &DVector<f64>, epsilon: f64, x: &[f64]) -> Result<DVector<f64>> {
    optim::box_intersection_project(v, target, epsilon, x)
}

/// PGD in the coordinates of the nullspace basis `V`, with each iterate
/// projected back onto the feasible set by [`qp_project`].
pub fn subspace_pgd(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_input(model, x, y)?;
    check_len("basis dimension", basis.dim(), x.len())?;
    let v = basis.v();
    let mut coords = DVector::<f64>::zeros(v.ncols());
    let mut point = vec![0.0; x.len()];
    for _ in 0..cfg.steps {
        let delta = v * &coords;
        for ((p, xi), di) in point.iter_mut().zip(x).zip(delta.iter()) {
            *p = xi + di;
        }
        let g = model.input_gradient(&point, y)?;
        let g_v = v.tr_mul(&g);
        let target = &coords + g_v.map(|c| cfg.step_size * sign(c));
        coords = qp_project(v, &target, cfg.epsilon, x)?;
    }
    let delta = v * coords;
    Ok(finish(AttackFamily::SubspacePgd, model, x, y, delta, cfg.epsilon, Some(basis)))
}

fn clip_to_cube(x: &[f64], delta: impl Iterator<Item = f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().zip(delta).map(|(xi, di)| (xi + di).clamp(-0.5, 0.5) - xi))
}

/// Every coordinate `+-epsilon` with equal probability, then clipped to the cube.
pub fn rand_max(model: &MlpClassifier, x: &[f64], y: usize, epsilon: f64, seed: u64) -> Result<AttackResult> {
    AttackConfig::random(AttackFamily::RandMax, epsilon, seed).validate()?;
    check_input(model, x, y)?;
    let mut rng = rng::keyed(seed, stream::ATTACK, 0);
    let delta = clip_to_cube(x, (0..x.len()).map(|_| if rng.random::<bool>() { epsilon } else { -epsilon }));
    Ok(finish(AttackFamily::RandMax, model, x, y, delta, epsilon, None))
}

/// Uniform in `[-epsilon, epsilon]^d`, then clipped to the cube.
pub fn rand_uniform(model: &MlpClassifier, x: &[f64], y: usize, epsilon: f64, seed: u64) -> Result<AttackResult> {
    AttackConfig::random(AttackFamily::RandUniform, epsilon, seed).validate()?;
    check_input(model, x, y)?;
    let mut rng = rng::keyed(seed, stream::ATTACK, 0);
    let delta = clip_to_cube(x, (0..x.len()).map(|_| rng.random_range(-epsilon..=epsilon)));
    Ok(finish(AttackFamily::RandUniform, model, x, y, delta, epsilon, None))
}

/// Dispatches on `cfg.family`. `basis` is required for [`AttackFamily::SubspacePgd`].
pub fn run_attack(
    model: &MlpClassifier,
    basis: Option<&ProjectionBasis>,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    match cfg.family {
        AttackFamily::Pgd => pgd(model, x, y, cfg),
        AttackFamily::SubspacePgd => {
            let basis = basis.ok_or_else(|| Error::InvalidParameter("SubspacePGD needs a basis".into()))?;
            subspace_pgd(model, basis, x, y, cfg)
        }
        AttackFamily::RandMax => rand_max(model, x, y, cfg.epsilon, cfg.seed),
        AttackFamily::RandUniform => rand_uniform(model, x, y, cfg.epsilon, cfg.seed),
    }
}

/// Settings for [`attack_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub families: Vec<AttackFamily>,
    pub pgd_steps: usize,
    pub pgd_step_size: f64,
    pub subspace_steps: usize,
    /// SubspacePGD step size as a fraction of epsilon.
    pub subspace_step_fraction: f64,
    /// Attack at most this many correctly classified inputs.
    pub max_inputs: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0, 32.0 / 255.0],
            families: AttackFamily::ALL.to_vec(),
            pgd_steps: 40,
            pgd_step_size: 2.0 / 255.0,
            subspace_steps: 5,
            subspace_step_fraction: 0.25,
            max_inputs: 100,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn attack_config(&self, family: AttackFamily, epsilon: f64, input_id: usize) -> AttackConfig {
        let seed = rng::derive(self.seed, stream::ATTACK, input_id as u64);
        match family {
            AttackFamily::Pgd => {
                AttackConfig { epsilon, steps: self.pgd_steps, step_size: self.pgd_step_size, family, seed }
            }
            AttackFamily::SubspacePgd => AttackConfig {
                epsilon,
                steps: self.subspace_steps,
                step_size: self.subspace_step_fraction * epsilon,
                family,
                seed,
            },
            AttackFamily::RandMax | AttackFamily::RandUniform => AttackConfig::random(family, epsilon, seed),
        }
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family: AttackFamily,
    pub epsilon: f64,
    pub n_inputs: usize,
    pub success_rate: f64,
    pub mean_linf_residual: f64,
    pub mean_cube_residual: f64,
    /// Empty for families without a nullspace constraint.
    pub mean_nullspace_residual: Option<f64>,
}

/// Indices of the first `max` inputs the model classifies correctly.
pub fn correctly_classified(model: &MlpClassifier, data: &Dataset, max: usize) -> Vec<usize> {
    (0..data.len()).filter(|&i| model.predict_unchecked(data.row(i)) == data.label(i)).take(max).collect()
}

/// Success rate of every family at every epsilon over correctly classified inputs.
pub fn attack_sweep(
    model: &MlpClassifier,
    basis: &ProjectionBasis,
    data: &Dataset,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    check_len("dataset dimension", data.dim(), model.input_dim())?;
    let inputs = correctly_classified(model, data, cfg.max_inputs);
    let mut rows = Vec::new();
    for &family in &cfg.families {
        for &eps in &cfg.epsilons {
            let results = inputs
                .par_iter()
                .map(|&i| {
                    let acfg = cfg.attack_config(family, eps, i);
                    run_attack(model, Some(basis), data.row(i), data.label(i), &acfg)
                })
                .collect::<Result<Vec<_>>>()?;
            let n = results.len();
            let mean = |f: &dyn Fn(&AttackResult) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    results.iter().map(f).sum::<f64>() / n as f64
                }
            };
            rows.push(SweepRow {
                family,
                epsilon: eps,
                n_inputs: n,
                success_rate: mean(&|r| if r.success { 1.0 } else { 0.0 }),
                mean_linf_residual: mean(&|r| r.linf_residual),
                mean_cube_residual: mean(&|r| r.cube_residual),
                mean_nullspace_residual: (family == AttackFamily::SubspacePgd)
                    .then(|| mean(&|r| r.nullspace_residual.unwrap_or(0.0))),
            });
        }
    }
    Ok(rows)
}

/// Writes the sweep table as CSV.
pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "family",
        "epsilon",
        "n_inputs",
        "success_rate",
        "mean_linf_residual",
        "mean_cube_residual",
        "mean_nullspace_residual",
    ])?;
    for r in rows {
        w.write_record([
            r.family.name().to_string(),
            format!("{:?}", r.epsilon),
            r.n_inputs.to_string(),
            format!("{:?}", r.success_rate),
            format!("{:?}", r.mean_linf_residual),
            format!("{:?}", r.mean_cube_residual),
            r.mean_nullspace_residual.map_or(String::new(), |v| format!("{v:?}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Activation;

    #[test]
    fn config_validation() {
        assert!(AttackConfig::pgd(0.0).validate().is_err());
        assert!(AttackConfig::pgd(1.5).validate().is_err());
        assert!(AttackConfig { steps: 0, ..AttackConfig::pgd(0.1) }.validate().is_err());
        assert!(AttackConfig::subspace_pgd(0.1).validate().is_ok());
    }

    #[test]
    fn rejects_inputs_outside_cube() {
        let m = MlpClassifier::new(&[2, 2], Activation::Tanh, 0).unwrap();
        assert!(pgd(&m, &[0.7, 0.0], 0, &AttackConfig::pgd(0.1)).is_err());
        assert!(rand_max(&m, &[0.1, 0.0], 5, 0.1, 0).is_err());
    }

    #[test]
    fn subspace_pgd_requires_basis() {
        let m = MlpClassifier::new(&[2, 2], Activation::Tanh, 0).unwrap();
        let cfg = AttackConfig::subspace_pgd(0.1);
        assert!(run_attack(&m, None, &[0.0, 0.0], 0, &cfg).is_err());
    }
}
