//! Datasets living in the zero-centered cube `[-1/2, 1/2]^d`.
//!
//! CSV files have no header; each row is an integer class label in
//! `0..classes` followed by the `d` feature values.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::projection::random_basis;
use crate::rng::{self, stream};
use crate::{Error, Result};

/// Parameters of the low-rank Gaussian-mixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub d: usize,
    pub intrinsic_dim: usize,
    pub classes: usize,
    pub n: usize,
    /// Std of the isotropic noise added orthogonally to the latent subspace,
    /// in latent units (before squashing).
    pub noise_std: f64,
    /// Distance of each class mean from the origin in latent units.
    pub class_sep: f64,
    pub cluster_std: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            d: 64,
            intrinsic_dim: 8,
            classes: 4,
            n: 5000,
            noise_std: 0.01,
            class_sep: 4.0,
            cluster_std: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic {
        params: GenParams,
        /// The affine map `x -> (x - shift) * scale` applied to raw samples.
        shift: f64,
        scale: f64,
    },
    File {
        path: String,
        /// `(min, max)` of the raw values when the file was rescaled.
        rescaled_from: Option<(f64, f64)>,
    },
    Derived {
        from: Box<Provenance>,
        note: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n x d`.
    x: Vec<f64>,
    y: Vec<usize>,
    d: usize,
    classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<usize>, d: usize, classes: usize, provenance: Provenance) -> Result<Self> {
        if d == 0 || classes == 0 {
            return Err(Error::InvalidParameter("dataset needs d >= 1 and classes >= 1".into()));
        }
        if x.len() != y.len() * d {
            return Err(Error::Dimension(format!(
                "{} labels need {} feature values, got {}",
                y.len(),
                y.len() * d,
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !(v.abs() <= 0.5)) {
            return Err(Error::Data(format!("row {} has value {} outside [-1/2, 1/2]", i / d, x[i])));
        }
        if let Some(i) = y.iter().position(|&c| c >= classes) {
            return Err(Error::Data(format!("row {i} has label {} >= {classes} classes", y[i])));
        }
        Ok(Self { x, y, d, classes, provenance })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    /// `n x d` matrix copy of the inputs.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.d, &self.x)
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let x = self.x[range.start * self.d..range.end * self.d].to_vec();
        let y = self.y[range.clone()].to_vec();
        Self {
            x,
            y,
            d: self.d,
            classes: self.classes,
            provenance: Provenance::Derived {
                from: Box::new(self.provenance.clone()),
                note: format!("rows {}..{}", range.start, range.end),
            },
        }
    }

    /// Same labels, inputs replaced row by row.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>, note: &str) -> Result<Self> {
        let mut x = Vec::with_capacity(self.x.len());
        for row in self.rows() {
            let mapped = f(row);
            crate::error::check_len("mapped row", mapped.len(), self.d)?;
            x.extend(mapped.into_iter().map(|v| v.clamp(-0.5, 0.5)));
        }
        Dataset::new(
            x,
            self.y.clone(),
            self.d,
            self.classes,
            Provenance::Derived { from: Box::new(self.provenance.clone()), note: note.into() },
        )
    }
}

/// Samples a Gaussian mixture inside a random `intrinsic_dim`-dimensional
/// subspace, adds noise orthogonal to it, and squashes everything into the
/// cube with one global scale and shift.
pub fn gen_lowrank(params: &GenParams) -> Result<Dataset> {
    let GenParams { d, intrinsic_dim: k, classes, n, noise_std, class_sep, cluster_std, seed } = *params;
    if k == 0 || k >= d {
        return Err(Error::InvalidParameter(format!("need 1 <= intrinsic_dim < d, got {k} and d={d}")));
    }
    if classes < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 classes, got {classes}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1".into()));
    }
    if !(noise_std >= 0.0 && class_sep >= 0.0 && cluster_std >= 0.0) {
        return Err(Error::InvalidParameter("noise_std, class_sep, cluster_std must be >= 0".into()));
    }
    let frame = random_basis(d, k, rng::derive(seed, stream::DATA, 0))?;
    let q = frame.u();

    let mut rng = rng::keyed(seed, stream::DATA, 1);
    // Means at +-class_sep along successive latent axes; Gaussian beyond 2k classes.
    let means: Vec<DVector<f64>> = (0..classes)
        .map(|c| {
            if c < 2 * k {
                let mut m = DVector::zeros(k);
                m[c / 2] = if c % 2 == 0 { class_sep } else { -class_sep };
                m
            } else {
                DVector::from_fn(k, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    class_sep * z
                })
            }
        })
        .collect();

    let mut raw = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..classes);
        let z = DVector::from_fn(k, |i, _| {
            means[y][i] + cluster_std * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let mut x = q * z;
        if noise_std > 0.0 {
            let w = DVector::from_fn(d, |_, _| noise_std * Distribution::<f64>::sample(&StandardNormal, &mut rng));
            x += &w - q * q.tr_mul(&w);
        }
        raw.extend(x.iter());
        labels.push(y);
    }

    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let shift = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let scale = if half > 0.0 { 0.5 / half } else { 1.0 };
    let x = raw.into_iter().map(|v| ((v - shift) * scale).clamp(-0.5, 0.5)).collect();
    Dataset::new(x, labels, d, classes, Provenance::Synthetic { params: params.clone(), shift, scale })
}

/// Generates `n_train + n_test` samples under one affine map and splits them.
pub fn gen_lowrank_split(params: &GenParams, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
    let all = gen_lowrank(&GenParams { n: n_train + n_test, ..params.clone() })?;
    Ok((all.slice(0..n_train), all.slice(n_train..n_train + n_test)))
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let mut record = Vec::with_capacity(ds.dim() + 1);
    for (i, row) in ds.rows().enumerate() {
        record.clear();
        record.push(ds.label(i).to_string());
        // `{:?}` prints the shortest representation that round-trips exactly.
        record.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a labeled CSV. Values outside the cube are an error unless
/// `rescale` is set, in which case the global min/max are mapped to `-1/2` and `1/2`.
pub fn load_csv(path: impl AsRef<Path>, rescale: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut d: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Data(format!("row {row}: expected a label and at least one feature")));
        }
        let width = record.len() - 1;
        match d {
            None => d = Some(width),
            Some(d) if d != width => {
                return Err(Error::Data(format!("row {row}: expected {d} features, found {width}")))
            }
            _ => {}
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: label {:?} is not a class index", &record[0])))?;
        y.push(label);
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("row {row}, column {}: {field:?} is not a number", j + 2)))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {row}, column {}: non-finite value", j + 2)));
            }
            x.push(v);
        }
    }
    let d = d.ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let classes = y.iter().max().map_or(1, |m| m + 1);
    let mut rescaled_from = None;
    if rescale {
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = hi - lo;
        for v in &mut x {
            *v = if span > 0.0 { ((*v - lo) / span - 0.5).clamp(-0.5, 0.5) } else { 0.0 };
        }
        rescaled_from = Some((lo, hi));
    } else if let Some(pos) = x.iter().position(|v| v.abs() > 0.5) {
        return Err(Error::Data(format!(
            "row {}: value {} lies outside [-1/2, 1/2]; pass --rescale to map the data into the cube",
            pos / d + 1,
            x[pos]
        )));
    }
    Dataset::new(x, y, d, classes, Provenance::File { path: path.display().to_string(), rescaled_from })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub d: usize,
    pub classes: usize,
    pub n: usize,
    pub seed: Option<u64>,
    pub provenance: Provenance,
}

impl DatasetMetadata {
    pub fn of(ds: &Dataset) -> Self {
        let seed = match root_provenance(&ds.provenance) {
            Provenance::Synthetic { params, .. } => Some(params.seed),
            _ => None,
        };
        Self { d: ds.dim(), classes: ds.classes(), n: ds.len(), seed, provenance: ds.provenance.clone() }
    }
}

fn root_provenance(p: &Provenance) -> &Provenance {
    match p {
        Provenance::Derived { from, .. } => root_provenance(from),
        other => other,
    }
}

/// Writes the JSON sidecar for `ds` at `path`.
pub fn write_metadata(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, &DatasetMetadata::of(ds))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_cube_rows() {
        let err =
            Dataset::new(vec![0.1, 0.7], vec![0], 2, 2, Provenance::File { path: "-".into(), rescaled_from: None });
        assert!(matches!(err, Err(Error::Data(_))));
        let err =
            Dataset::new(vec![0.1, 0.2], vec![3], 2, 2, Provenance::File { path: "-".into(), rescaled_from: None });
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn generator_validates() {
        assert!(gen_lowrank(&GenParams { intrinsic_dim: 8, d: 8, ..Default::default() }).is_err());
        assert!(gen_lowrank(&GenParams { classes: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn generated_data_is_in_cube() {
        let ds = gen_lowrank(&GenParams { n: 300, ..Default::default() }).unwrap();
        assert!(ds.features().iter().all(|v| v.abs() <= 0.5));
        assert_eq!(ds.len(), 300);
        assert!(ds.labels().iter().all(|&c| c < 4));
    }
}
