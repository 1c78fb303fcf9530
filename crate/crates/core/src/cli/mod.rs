//! Reproducible experiment driver.
//!
//! Every command reads a [`RunConfig`], rebuilds whatever it needs (data,
//! basis, models) deterministically from the seed, and writes CSV tables,
//! gnuplot stubs and a `manifest.json` with the config hash and output
//! hashes into the run directory.

mod config;
mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{
    BasisChoice, BasisConfig, CertifyConfig, DataConfig, FinetuneConfig, ModelConfig, RatioSweepConfig, RunConfig,
    VolumeSweepConfig,
};

use crate::attack;
use crate::certgeom::{self, Certificate};
use crate::classifier::{self, MlpClassifier};
use crate::data::{self, Dataset};
use crate::projection::{self, ProjectionBasis};
use crate::rng::{self, stream};
use crate::smoothing::{self, SmoothOutcome, SmoothingParams};
use crate::{Error, Result};
use output::{gnuplot_curves, num, Manifest, RunDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate (or load and normalize) the train/test split.
    GenData,
    /// Train the base model, fit the basis and finetune on reconstructions.
    Train,
    /// Projected and ambient certification with volume bounds.
    Certify,
    /// Attack success rate per family and epsilon.
    AttackSweep,
    /// Certified accuracy against log-volume for several projected dimensions.
    VolumeSweep,
    /// Log ratio of the projected bound to the l2-ball volume over (d, p).
    RatioSweep,
    /// PCA basis against a random orthonormal basis.
    Ablation,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Certify => "certify",
            Command::AttackSweep => "attack-sweep",
            Command::VolumeSweep => "volume-sweep",
            Command::RatioSweep => "ratio-sweep",
            Command::Ablation => "ablation",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "projsmooth", version, about = "Projected randomized smoothing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// solver failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    };
    match cfg.and_then(|cfg| run(cli.command, &cfg, &cli.out, cli.seed)) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs `command` and returns the written files.
pub fn run(command: Command, cfg: &RunConfig, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let exp = Experiment::new(cfg);
    let mut dir = RunDir::create(out)?;
    let d = match command {
        Command::GenData => exp.gen_data(&mut dir)?,
        Command::Train => exp.train(&mut dir)?,
        Command::Certify => exp.certify(&mut dir)?,
        Command::AttackSweep => exp.attack_sweep(&mut dir)?,
        Command::VolumeSweep => exp.volume_sweep(&mut dir)?,
        Command::RatioSweep => exp.ratio_sweep(&mut dir)?,
        Command::Ablation => exp.ablation(&mut dir)?,
    };
    dir.finish(Manifest {
        command: command.name(),
        seed: exp.cfg.seed,
        config_toml: exp.cfg.to_toml_string(),
        input_dim: d,
        log10_unit_ball_volume: certgeom::l2_ball_volume_log10(d, 1.0),
    })
}

/// Certified accuracy at `threshold`: correct, not abstained and
/// `log10_volume >= threshold`, over all evaluated inputs.
pub fn certified_accuracy(records: &[Evaluated], threshold: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records.iter().filter(|r| r.correct() && r.log10_volume >= threshold).count();
    hits as f64 / records.len() as f64
}

/// Median log10 volume over correctly classified, certified inputs
/// (`-inf` when there are none).
pub fn median_log10_volume(records: &[Evaluated]) -> f64 {
    let mut v: Vec<f64> = records.iter().filter(|r| r.correct()).map(|r| r.log10_volume).collect();
    if v.is_empty() {
        return f64::NEG_INFINITY;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Smoothed prediction and certified log-volume of one test input.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub input_id: usize,
    pub label: usize,
    pub class: Option<usize>,
    pub p_lower: f64,
    pub radius: f64,
    pub log10_volume: f64,
}

impl Evaluated {
    pub fn correct(&self) -> bool {
        self.class == Some(self.label)
    }
}

/// Exact certified-accuracy step curve: one point per distinct volume of a
/// correct input, plus the `-inf` point.
pub fn accuracy_curve(records: &[Evaluated]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> =
        records.iter().filter(|r| r.correct() && r.log10_volume.is_finite()).map(|r| r.log10_volume).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    std::iter::once(f64::NEG_INFINITY).chain(thresholds).map(|t| (t, certified_accuracy(records, t))).collect()
}

fn clean_accuracy(records: &[Evaluated]) -> f64 {
    certified_accuracy(records, f64::NEG_INFINITY)
}

fn input_seed(seed: u64, id: usize) -> u64 {
    rng::derive(seed, stream::SMOOTH_ESTIMATE, id as u64)
}

fn opt_class(c: Option<usize>) -> String {
    c.map_or(String::new(), |c| c.to_string())
}

struct Experiment {
    cfg: RunConfig,
}

impl Experiment {
    fn new(mut cfg: RunConfig) -> Self {
        let s = cfg.seed;
        cfg.train.seed = s;
        cfg.smoothing.seed = s;
        cfg.attack.seed = s;
        Self { cfg }
    }

    fn data(&self) -> Result<(Dataset, Dataset)> {
        let dc = &self.cfg.data;
        let (train, test) = match (&dc.train_path, &dc.test_path) {
            (Some(tr), Some(te)) => (data::load_csv(tr, dc.rescale)?, data::load_csv(te, dc.rescale)?),
            _ => {
                let params = dc.gen_params(rng::derive(self.cfg.seed, stream::DATA, 0));
                data::gen_lowrank_split(&params, dc.n_train, dc.n_test)?
            }
        };
        if train.dim() != test.dim() {
            return Err(Error::Data(format!("train has {} features but test has {}", train.dim(), test.dim())));
        }
        if test.classes() > train.classes() {
            return Err(Error::Data("test set contains labels never seen in training".into()));
        }
        Ok((train, test))
    }

    fn basis(&self, train: &Dataset, kind: BasisChoice, p: Option<usize>) -> Result<ProjectionBasis> {
        let bc = &self.cfg.basis;
        let d = train.dim();
        let x = train.to_matrix();
        let p = match p.or(bc.p) {
            Some(p) => p,
            None => {
                let full = projection::fit_pca(&x, d - 1)?;
                projection::components_for_variance(full.eigenvalues(), bc.variance).min(d - 1)
            }
        };
        if p >= d {
            return Err(Error::Config(format!("basis.p: must be < input dimension {d}, got {p}")));
        }
        let seed = rng::derive(self.cfg.seed, stream::BASIS, 0);
        match kind {
            BasisChoice::Pca => projection::fit_pca_subset(&x, p, bc.subset_fraction, seed),
            BasisChoice::Random => projection::random_basis(d, p, seed),
        }
    }

    fn base_model(&self, train: &Dataset) -> Result<MlpClassifier> {
        let mut dims = vec![train.dim()];
        dims.extend(&self.cfg.model.hidden);
        dims.push(train.classes());
        let init = MlpClassifier::new(&dims, self.cfg.model.activation, self.cfg.seed)?;
        classifier::train(&init, train, &self.cfg.train)
    }

    fn finetuned(&self, base: &MlpClassifier, basis: &ProjectionBasis, train: &Dataset) -> Result<MlpClassifier> {
        if !self.cfg.finetune.enabled {
            return Ok(base.clone());
        }
        let seed = rng::derive(self.cfg.seed, stream::TRAIN_NOISE, basis.projected_dim() as u64);
        let tc = self.cfg.finetune.train_config(self.cfg.smoothing.sigma, seed);
        classifier::finetune_on_reconstruction(base, basis, train, &tc)
    }

    fn inputs(&self, test: &Dataset) -> Dataset {
        test.slice(0..self.cfg.certify.n_inputs.min(test.len()))
    }

    fn smoothing_for(&self, id: usize) -> SmoothingParams {
        SmoothingParams { seed: input_seed(self.cfg.seed, id), ..self.cfg.smoothing.clone() }
    }

    fn projected_certificates(
        &self,
        model: &MlpClassifier,
        basis: &ProjectionBasis,
        inputs: &Dataset,
    ) -> Result<Vec<Certificate>> {
        (0..inputs.len())
            .map(|i| certgeom::project_certify_volume(model, basis, inputs.row(i), i, &self.smoothing_for(i)))
            .collect()
    }

    fn ambient_outcomes(&self, model: &MlpClassifier, inputs: &Dataset) -> Result<Vec<SmoothOutcome>> {
        (0..inputs.len()).map(|i| smoothing::smooth_certify(model, inputs.row(i), &self.smoothing_for(i))).collect()
    }

    fn gen_data(&self, dir: &mut RunDir) -> Result<usize> {
        let (train, test) = self.data()?;
        data::save_csv(&train, dir.file("train.csv"))?;
        data::save_csv(&test, dir.file("test.csv"))?;
        data::write_metadata(&train, dir.file("train.json"))?;
        data::write_metadata(&test, dir.file("test.json"))?;
        Ok(train.dim())
    }

    fn train(&self, dir: &mut RunDir) -> Result<usize> {
        let (train, test) = self.data()?;
        let mut dims = vec![train.dim()];
        dims.extend(&self.cfg.model.hidden);
        dims.push(train.classes());
        let init = MlpClassifier::new(&dims, self.cfg.model.activation, self.cfg.seed)?;
        let (base, hist) = classifier::train_with_history(&init, &train, &self.cfg.train)?;
        base.save(dir.file("model.bin"))?;
        let basis = self.basis(&train, self.cfg.basis.kind, None)?;
        basis.save(dir.file("basis.bin"))?;
        let mut rows: Vec<Vec<String>> = hist
            .epoch_loss
            .iter()
            .enumerate()
            .map(|(e, l)| vec!["base".into(), (e + 1).to_string(), num(*l)])
            .collect();
        let mut acc = vec![vec!["base".to_string(), num(base.accuracy(&test)?)]];
        if self.cfg.finetune.enabled {
            let seed = rng::derive(self.cfg.seed, stream::TRAIN_NOISE, basis.projected_dim() as u64);
            let tc = self.cfg.finetune.train_config(self.cfg.smoothing.sigma, seed);
            let (ft, fhist) = classifier::finetune_with_history(&base, &basis, &train, &tc)?;
            ft.save(dir.file("model_finetuned.bin"))?;
            rows.extend(
                fhist
                    .epoch_loss
                    .iter()
                    .enumerate()
                    .map(|(e, l)| vec!["finetuned".into(), (e + 1).to_string(), num(*l)]),
            );
            let recon =
                test.map_rows(|x| basis.project_reconstruct(x).expect("dims").as_slice().to_vec(), "U U^T x")?;
            acc.push(vec!["finetuned_on_reconstruction".to_string(), num(ft.accuracy(&recon)?)]);
        }
        dir.csv("train_history.csv", &["model", "epoch", "mean_loss"], &rows)?;
        dir.csv("test_accuracy.csv", &["model", "accuracy"], &acc)?;
        Ok(train.dim())
    }

    fn certify(&self, dir: &mut RunDir) -> Result<usize> {
        let (train, test) = self.data()?;
        let base = self.base_model(&train)?;
        let basis = self.basis(&train, self.cfg.basis.kind, None)?;
        basis.save(dir.file("basis.bin"))?;
        let model = self.finetuned(&base, &basis, &train)?;
        let inputs = self.inputs(&test);
        let certs = self.projected_certificates(&model, &basis, &inputs)?;
        let sm = &self.cfg.smoothing;

        let cert_rows: Vec<Vec<String>> = certs
            .iter()
            .map(|c| {
                vec![
                    c.input_id.to_string(),
                    opt_class(c.class),
                    num(c.radius_raw),
                    c.radius_clamped.to_string(),
                    num(c.t),
                    num(c.lp_gap),
                    num(c.r_star),
                    num(c.log10_volume),
                    num(c.log10_l2_ball_volume),
                    num(c.log10_ratio),
                ]
            })
            .collect();
        dir.csv(
            "certificates.csv",
            &[
                "input_id",
                "class",
                "radius_raw",
                "radius_clamped",
                "t",
                "lp_gap",
                "r_star",
                "log10_volume",
                "log10_l2_ball_volume",
                "log10_ratio",
            ],
            &cert_rows,
        )?;

        let projected: Vec<Evaluated> = certs
            .iter()
            .map(|c| Evaluated {
                input_id: c.input_id,
                label: inputs.label(c.input_id),
                class: c.class,
                p_lower: c.p_lower,
                radius: c.radius_raw,
                log10_volume: c.log10_volume,
            })
            .collect();
        let mut series = vec![("projected".to_string(), projected)];

        if self.cfg.certify.ambient_baseline {
            let d = inputs.dim();
            let ambient = self
                .ambient_outcomes(&base, &inputs)?
                .into_iter()
                .enumerate()
                .map(|(i, o)| match o {
                    SmoothOutcome::Abstain => Evaluated {
                        input_id: i,
                        label: inputs.label(i),
                        class: None,
                        p_lower: f64::NAN,
                        radius: 0.0,
                        log10_volume: f64::NEG_INFINITY,
                    },
                    SmoothOutcome::Certified(c) => Evaluated {
                        input_id: i,
                        label: inputs.label(i),
                        class: Some(c.class),
                        p_lower: c.p_lower,
                        radius: c.radius,
                        log10_volume: certgeom::l2_ball_volume_log10(d, c.radius),
                    },
                })
                .collect();
            series.push(("ambient".to_string(), ambient));
        }

        let mut log_rows = Vec::new();
        for (method, recs) in &series {
            for r in recs {
                log_rows.push(vec![
                    method.clone(),
                    r.input_id.to_string(),
                    r.label.to_string(),
                    opt_class(r.class),
                    r.class.is_none().to_string(),
                    num(r.p_lower),
                    num(r.radius),
                    num(r.log10_volume),
                    num(sm.sigma),
                    sm.n.to_string(),
                    num(sm.alpha),
                    input_seed(self.cfg.seed, r.input_id).to_string(),
                ]);
            }
        }
        dir.csv(
            "certification_log.csv",
            &[
                "method",
                "input_id",
                "label",
                "class",
                "abstain",
                "p_lower",
                "radius",
                "log10_volume",
                "sigma",
                "n",
                "alpha",
                "seed",
            ],
            &log_rows,
        )?;
        self.write_curves(dir, "method", &series)?;
        Ok(inputs.dim())
    }

    fn write_curves(&self, dir: &mut RunDir, series_name: &str, series: &[(String, Vec<Evaluated>)]) -> Result<()> {
        let mut curve = Vec::new();
        let mut summary = Vec::new();
        for (name, recs) in series {
            for (t, a) in accuracy_curve(recs) {
                curve.push(vec![name.clone(), num(t), num(a)]);
            }
            summary.push(vec![
                name.clone(),
                recs.len().to_string(),
                num(clean_accuracy(recs)),
                recs.iter().filter(|r| r.class.is_none()).count().to_string(),
                num(median_log10_volume(recs)),
            ]);
        }
        dir.csv("curves.csv", &[series_name, "log10_volume_threshold", "certified_accuracy"], &curve)?;
        dir.csv(
            "summary.csv",
            &[series_name, "n_inputs", "clean_accuracy", "abstains", "median_log10_volume"],
            &summary,
        )?;
        dir.write("curves.gp", &gnuplot_curves("curves.csv", 1, "certified accuracy against volume"))
    }

    fn attack_sweep(&self, dir: &mut RunDir) -> Result<usize> {
        let (train, test) = self.data()?;
        let base = self.base_model(&train)?;
        let basis = self.basis(&train, self.cfg.basis.kind, None)?;
        basis.save(dir.file("basis.bin"))?;
        let rows = attack::attack_sweep(&base, &basis, &test, &self.cfg.attack)?;
        attack::write_sweep_csv(&rows, dir.file("attack_sweep.csv"))?;
        dir.write(
            "attack_sweep.gp",
            "set datafile separator ','\n\
             set key autotitle columnhead\n\
             set xlabel 'epsilon'\n\
             set ylabel 'success rate'\n\
             plot for [f in 'PGD SubspacePGD RandMax RandUniform'] \\\n    \
             'attack_sweep.csv' using (strcol(1) eq f ? $2 : 1/0):4 with linespoints title f\n",
        )?;
        Ok(train.dim())
    }

    fn volume_sweep(&self, dir: &mut RunDir) -> Result<usize> {
        let (train, test) = self.data()?;
        let base = self.base_model(&train)?;
        let inputs = self.inputs(&test);
        let mut series = Vec::new();
        for &p in &self.cfg.volume_sweep.p_values {
            let basis = self.basis(&train, self.cfg.basis.kind, Some(p))?;
            let model = self.finetuned(&base, &basis, &train)?;
            let certs = self.projected_certificates(&model, &basis, &inputs)?;
            series.push((p.to_string(), evaluated(&certs, &inputs)));
        }
        self.write_curves(dir, "p", &series)?;
        Ok(train.dim())
    }

    fn ablation(&self, dir: &mut RunDir) -> Result<usize> {
        let (train, test) = self.data()?;
        let base = self.base_model(&train)?;
        let inputs = self.inputs(&test);
        let pca = self.basis(&train, BasisChoice::Pca, None)?;
        let p = pca.projected_dim();
        let random = self.basis(&train, BasisChoice::Random, Some(p))?;
        let mut series = Vec::new();
        for (name, basis) in [("pca", &pca), ("random", &random)] {
            let model = self.finetuned(&base, basis, &train)?;
            let certs = self.projected_certificates(&model, basis, &inputs)?;
            series.push((name.to_string(), evaluated(&certs, &inputs)));
        }
        self.write_curves(dir, "basis", &series)?;
        Ok(train.dim())
    }

    fn ratio_sweep(&self, dir: &mut RunDir) -> Result<usize> {
        let rc = &self.cfg.ratio_sweep;
        let mut rows = Vec::new();
        let mut max_d = 1;
        for &p in &rc.p_values {
            for &m in &rc.d_multipliers {
                let d = m * p;
                max_d = max_d.max(d);
                let bound = certgeom::projected_volume_bound(d, p, rc.radius, rc.t)?;
                let ball = certgeom::l2_ball_volume_log10(d, rc.radius);
                let ratio = certgeom::volume_ratio_log10(d, p, rc.radius, rc.t, rc.radius)?;
                rows.push(vec![
                    p.to_string(),
                    d.to_string(),
                    num(rc.radius),
                    num(rc.t),
                    num(bound.r_star),
                    bound.clamped.to_string(),
                    num(bound.log10_volume),
                    num(ball),
                    num(ratio),
                ]);
            }
        }
        dir.csv(
            "ratio_sweep.csv",
            &[
                "p",
                "d",
                "radius",
                "t",
                "r_star",
                "radius_clamped",
                "log10_volume",
                "log10_l2_ball_volume",
                "log10_ratio",
            ],
            &rows,
        )?;
        dir.write(
            "ratio_sweep.gp",
            "set datafile separator ','\n\
             set key autotitle columnhead\n\
             set xlabel 'd'\n\
             set ylabel 'log10 volume ratio'\n\
             set logscale x 2\n\
             plot 'ratio_sweep.csv' using 2:9:1 with points palette\n",
        )?;
        Ok(max_d)
    }
}

fn evaluated(certs: &[Certificate], inputs: &Dataset) -> Vec<Evaluated> {
    certs
        .iter()
        .map(|c| Evaluated {
            input_id: c.input_id,
            label: inputs.label(c.input_id),
            class: c.class,
            p_lower: c.p_lower,
            radius: c.radius_raw,
            log10_volume: c.log10_volume,
        })
        .collect()
}
