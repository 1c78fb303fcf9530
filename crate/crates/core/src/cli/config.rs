use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::SweepConfig;
use crate::classifier::{Activation, TrainConfig};
use crate::data::GenParams;
use crate::smoothing::SmoothingParams;
use crate::{Error, Result};

/// A complete experiment description, read from TOML.
///
/// Component seeds (`train.seed`, `smoothing.seed`, `attack.seed`, ...) are
/// overwritten by values derived from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub basis: BasisConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub smoothing: SmoothingParams,
    pub certify: CertifyConfig,
    pub attack: SweepConfig,
    pub volume_sweep: VolumeSweepConfig,
    pub ratio_sweep: RatioSweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            basis: BasisConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig { noise_sigma: 0.25, ..TrainConfig::default() },
            finetune: FinetuneConfig::default(),
            smoothing: SmoothingParams::default(),
            certify: CertifyConfig::default(),
            attack: SweepConfig::default(),
            volume_sweep: VolumeSweepConfig::default(),
            ratio_sweep: RatioSweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub d: usize,
    pub intrinsic_dim: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_std: f64,
    pub class_sep: f64,
    pub cluster_std: f64,
    /// Load these CSV files instead of generating synthetic data.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Map out-of-cube CSV values into the cube instead of rejecting them.
    pub rescale: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenParams::default();
        Self {
            d: g.d,
            intrinsic_dim: g.intrinsic_dim,
            classes: g.classes,
            n_train: 4000,
            n_test: 1000,
            noise_std: g.noise_std,
            class_sep: g.class_sep,
            cluster_std: g.cluster_std,
            train_path: None,
            test_path: None,
            rescale: false,
        }
    }
}

impl DataConfig {
    pub fn gen_params(&self, seed: u64) -> GenParams {
        GenParams {
            d: self.d,
            intrinsic_dim: self.intrinsic_dim,
            classes: self.classes,
            n: self.n_train + self.n_test,
            noise_std: self.noise_std,
            class_sep: self.class_sep,
            cluster_std: self.cluster_std,
            seed,
        }
    }

    pub fn is_file_backed(&self) -> bool {
        self.train_path.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisChoice {
    Pca,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: BasisChoice,
    /// Projected dimension; when absent, the smallest PCA dimension reaching `variance`.
    pub p: Option<usize>,
    pub variance: f64,
    /// Fraction of the training set the PCA is fit on.
    pub subset_fraction: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { kind: BasisChoice::Pca, p: None, variance: 0.99, subset_fraction: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], activation: Activation::Tanh }
    }
}

/// Finetuning of the base model on reconstructions; same knobs as [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_per_epoch: f64,
    /// Noise std in the input space before projection; `None` uses `smoothing.sigma`.
    pub noise_sigma: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            enabled: true,
            epochs: 5,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            lr_decay_per_epoch: t.lr_decay_per_epoch,
            noise_sigma: None,
        }
    }
}

impl FinetuneConfig {
    pub fn train_config(&self, sigma: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_decay_per_epoch: self.lr_decay_per_epoch,
            noise_sigma: self.noise_sigma.unwrap_or(sigma),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    /// Certify the first `n_inputs` test points.
    pub n_inputs: usize,
    /// Also certify the ambient smoothed classifier as a baseline.
    pub ambient_baseline: bool,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { n_inputs: 200, ambient_baseline: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeSweepConfig {
    pub p_values: Vec<usize>,
}

impl Default for VolumeSweepConfig {
    fn default() -> Self {
        Self { p_values: vec![2, 4, 8, 16, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatioSweepConfig {
    pub p_values: Vec<usize>,
    pub d_multipliers: Vec<usize>,
    pub radius: f64,
    pub t: f64,
}

impl Default for RatioSweepConfig {
    fn default() -> Self {
        Self { p_values: vec![8, 16, 32, 64, 100, 450], d_multipliers: vec![2, 4, 8, 16], radius: 0.5, t: 0.4 }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(bad(key, "must be >= 1"))
    } else {
        Ok(())
    }
}

fn in_unit(key: &str, v: f64, closed_top: bool) -> Result<()> {
    let ok = v > 0.0 && (v < 1.0 || (closed_top && v == 1.0));
    if ok {
        Ok(())
    } else {
        Err(bad(key, format!("must be in (0, 1{}, got {v}", if closed_top { "]" } else { ")" })))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be finite and >= 0, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field before any compute; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.test_path.is_some() != d.train_path.is_some() {
            return Err(bad("data.test_path", "train_path and test_path must be given together"));
        }
        if !d.is_file_backed() {
            if d.d < 2 {
                return Err(bad("data.d", format!("must be >= 2, got {}", d.d)));
            }
            if d.intrinsic_dim == 0 || d.intrinsic_dim > d.d {
                return Err(bad("data.intrinsic_dim", format!("must be in 1..={}, got {}", d.d, d.intrinsic_dim)));
            }
            if d.classes < 2 {
                return Err(bad("data.classes", "must be >= 2"));
            }
            positive("data.n_train", d.n_train)?;
            positive("data.n_test", d.n_test)?;
            non_negative("data.noise_std", d.noise_std)?;
            non_negative("data.class_sep", d.class_sep)?;
            non_negative("data.cluster_std", d.cluster_std)?;
        }

        let b = &self.basis;
        if let Some(p) = b.p {
            positive("basis.p", p)?;
            if !d.is_file_backed() && p >= d.d {
                return Err(bad("basis.p", format!("must be < data.d = {}, got {p}", d.d)));
            }
        }
        in_unit("basis.variance", b.variance, true)?;
        in_unit("basis.subset_fraction", b.subset_fraction, true)?;
        if b.p.is_none() && b.kind == BasisChoice::Random {
            return Err(bad("basis.p", "a random basis needs an explicit p"));
        }

        if self.model.hidden.contains(&0) {
            return Err(bad("model.hidden", "layer widths must be >= 1"));
        }

        self.train.validate().map_err(|e| bad("train", e))?;
        let ft = self.finetune.train_config(self.smoothing.sigma, 0);
        ft.validate().map_err(|e| bad("finetune", e))?;

        let s = &self.smoothing;
        if !(s.sigma > 0.0 && s.sigma.is_finite()) {
            return Err(bad("smoothing.sigma", format!("must be > 0, got {}", s.sigma)));
        }
        positive("smoothing.n0", s.n0)?;
        positive("smoothing.n", s.n)?;
        in_unit("smoothing.alpha", s.alpha, false)?;

        positive("certify.n_inputs", self.certify.n_inputs)?;

        let a = &self.attack;
        if a.epsilons.is_empty() {
            return Err(bad("attack.epsilons", "must not be empty"));
        }
        for &e in &a.epsilons {
            in_unit("attack.epsilons", e, true)?;
        }
        if a.families.is_empty() {
            return Err(bad("attack.families", "must not be empty"));
        }
        positive("attack.pgd_steps", a.pgd_steps)?;
        positive("attack.subspace_steps", a.subspace_steps)?;
        positive("attack.max_inputs", a.max_inputs)?;
        if !(a.pgd_step_size > 0.0) {
            return Err(bad("attack.pgd_step_size", "must be > 0"));
        }
        if !(a.subspace_step_fraction > 0.0) {
            return Err(bad("attack.subspace_step_fraction", "must be > 0"));
        }

        if self.volume_sweep.p_values.is_empty() {
            return Err(bad("volume_sweep.p_values", "must not be empty"));
        }
        for &p in &self.volume_sweep.p_values {
            positive("volume_sweep.p_values", p)?;
            if !d.is_file_backed() && p >= d.d {
                return Err(bad("volume_sweep.p_values", format!("{p} is not below data.d = {}", d.d)));
            }
        }

        let r = &self.ratio_sweep;
        if r.p_values.is_empty() || r.d_multipliers.is_empty() {
            return Err(bad("ratio_sweep", "p_values and d_multipliers must not be empty"));
        }
        for &p in &r.p_values {
            positive("ratio_sweep.p_values", p)?;
        }
        for &m in &r.d_multipliers {
            if m < 1 {
                return Err(bad("ratio_sweep.d_multipliers", "multipliers must be >= 1"));
            }
        }
        if !(r.t >= 0.0 && r.t < 0.5) {
            return Err(bad("ratio_sweep.t", format!("must be in [0, 1/2), got {}", r.t)));
        }
        non_negative("ratio_sweep.radius", r.radius)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = RunConfig::from_toml_str("[data]\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("bogus")), "{err}");
    }

    #[test]
    fn validation_names_the_key() {
        let err = RunConfig::from_toml_str("[smoothing]\nalpha = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("smoothing.alpha"), "{err}");
        let err = RunConfig::from_toml_str("[basis]\np = 64\n").unwrap_err();
        assert!(err.to_string().contains("basis.p"), "{err}");
    }
}
