//! Semi-orthogonal projection bases.
//!
//! A [`ProjectionBasis`] holds `U` (`d x p`, orthonormal columns) together
//! with `V` (`d x (d - p)`), an orthonormal basis of the nullspace of `U^T`.
//! Projection is the raw linear map `x -> U^T x`; no centering is applied at
//! inference even though PCA is fit on centered data.
//!
//! # Basis file format
//!
//! All integers and floats are little-endian.
//!
//! | field        | type                                 |
//! |--------------|--------------------------------------|
//! | magic        | 8 bytes, `PRSBASIS`                  |
//! | version      | `u32`, currently 1                   |
//! | d, p         | `u64`, `u64`                         |
//! | origin_kind  | `u8`: 0 pca, 1 random, 2 identity-slice, 3 custom |
//! | seed         | `u64`                                |
//! | U            | `d * p` `f64`, row-major             |
//! | V            | `d * (d - p)` `f64`, row-major       |
//! | has_mean     | `u8`; if 1, followed by `d` `f64`    |
//! | n_eigen      | `u64`, followed by that many `f64`   |

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::optim::TOLERANCES;
use crate::rng::{self, stream};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PRSBASIS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Pca,
    Random,
    IdentitySlice,
    Custom,
}

impl BasisKind {
    fn tag(self) -> u8 {
        match self {
            BasisKind::Pca => 0,
            BasisKind::Random => 1,
            BasisKind::IdentitySlice => 2,
            BasisKind::Custom => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => BasisKind::Pca,
            1 => BasisKind::Random,
            2 => BasisKind::IdentitySlice,
            3 => BasisKind::Custom,
            _ => return Err(Error::Format(format!("unknown basis kind tag {tag}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    kind: BasisKind,
    seed: u64,
    /// Training-set mean; diagnostics only.
    mean: Option<DVector<f64>>,
    /// All `d` covariance eigenvalues in descending order (PCA bases only).
    eigenvalues: Vec<f64>,
}

impl ProjectionBasis {
    /// Builds a basis from `U` with orthonormal columns, completing `V`.
    ///
    /// `p == d` is accepted and yields an empty nullspace.
    pub fn from_orthonormal(u: DMatrix<f64>, kind: BasisKind, seed: u64) -> Result<Self> {
        let (d, p) = u.shape();
        if p == 0 || p > d {
            return Err(Error::Dimension(format!("basis needs 1 <= p <= d, got d={d}, p={p}")));
        }
        let gram = u.tr_mul(&u);
        let err = (gram - DMatrix::<f64>::identity(p, p)).amax();
        if err > TOLERANCES.orthonormal {
            return Err(Error::InvalidParameter(format!(
                "columns of U are not orthonormal (max |U^T U - I| = {err:e})"
            )));
        }
        let v = nullspace_completion(&u);
        Ok(Self { u, v, kind, seed, mean: None, eigenvalues: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn projected_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> Option<&DVector<f64>> {
        self.mean.as_ref()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `U^T x`.
    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_len("input", x.len(), self.dim())?;
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> DVector<f64> {
        let p = self.projected_dim();
        let mut out = DVector::zeros(p);
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.u.column(j).iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// `U x_tilde`.
    pub fn reconstruct(&self, x_tilde: &[f64]) -> Result<DVector<f64>> {
        check_len("projected input", x_tilde.len(), self.projected_dim())?;
        Ok(self.reconstruct_unchecked(x_tilde))
    }

    pub(crate) fn reconstruct_unchecked(&self, x_tilde: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (j, &c) in x_tilde.iter().enumerate() {
            out.axpy(c, &self.u.column(j), 1.0);
        }
        out
    }

    /// `U U^T x`.
    pub fn project_reconstruct(&self, x: &[f64]) -> Result<DVector<f64>> {
        let z = self.project(x)?;
        Ok(self.reconstruct_unchecked(z.as_slice()))
    }

    /// `max(|U^T U - I|, |V^T V - I|, |U^T V|)`, entrywise.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.projected_dim();
        let k = self.v.ncols();
        let e1 = (self.u.tr_mul(&self.u) - DMatrix::<f64>::identity(p, p)).amax();
        if k == 0 {
            return e1;
        }
        let e2 = (self.v.tr_mul(&self.v) - DMatrix::<f64>::identity(k, k)).amax();
        let e3 = self.u.tr_mul(&self.v).amax();
        e1.max(e2).max(e3)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (d, p) = self.u.shape();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(d as u64).to_le_bytes())?;
        w.write_all(&(p as u64).to_le_bytes())?;
        w.write_all(&[self.kind.tag()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        write_row_major(&mut w, &self.u)?;
        write_row_major(&mut w, &self.v)?;
        match &self.mean {
            Some(mean) => {
                w.write_all(&[1])?;
                for x in mean.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
        w.write_all(&(self.eigenvalues.len() as u64).to_le_bytes())?;
        for x in &self.eigenvalues {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a basis file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported basis version {version}")));
        }
        let d = read_u64(&mut r)? as usize;
        let p = read_u64(&mut r)? as usize;
        if p == 0 || p > d || d > 1 << 24 {
            return Err(Error::Format(format!("invalid basis shape d={d}, p={p}")));
        }
        let kind = BasisKind::from_tag(read_u8(&mut r)?)?;
        let seed = read_u64(&mut r)?;
        let u = read_row_major(&mut r, d, p)?;
        let v = read_row_major(&mut r, d, d - p)?;
        let mean = match read_u8(&mut r)? {
            0 => None,
            1 => Some(DVector::from_vec(read_f64s(&mut r, d)?)),
            t => return Err(Error::Format(format!("invalid mean flag {t}"))),
        };
        let n_eigen = read_u64(&mut r)? as usize;
        if n_eigen > d {
            return Err(Error::Format(format!("{n_eigen} eigenvalues for d={d}")));
        }
        let eigenvalues = read_f64s(&mut r, n_eigen)?;
        let basis = Self { u, v, kind, seed, mean, eigenvalues };
        if basis.orthonormality_error() > TOLERANCES.orthonormal {
            return Err(Error::Format("basis file is not orthonormal".into()));
        }
        Ok(basis)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Top-`p` principal components of the rows of `data` (`n x d`).
pub fn fit_pca(data: &DMatrix<f64>, p: usize) -> Result<ProjectionBasis> {
    let (n, d) = data.shape();
    if p == 0 || p >= d {
        return Err(Error::Dimension(format!("PCA needs 1 <= p < d, got p={p}, d={d}")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("PCA needs at least 2 rows, got {n}")));
    }
    let (vectors, values, mean) = principal_axes(data);
    let u = vectors.columns(0, p).into_owned();
    let mut basis = ProjectionBasis::from_orthonormal(u, BasisKind::Pca, 0)?;
    basis.mean = Some(mean);
    basis.eigenvalues = values;
    Ok(basis)
}

/// PCA with the smallest `p` whose components explain at least `fraction`
/// of the total variance (capped at `d - 1`).
pub fn fit_pca_variance(data: &DMatrix<f64>, fraction: f64) -> Result<ProjectionBasis> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("variance fraction must be in (0, 1], got {fraction}")));
    }
    let (n, d) = data.shape();
    if n < 2 || d < 2 {
        return Err(Error::InvalidParameter(format!("PCA needs n >= 2 and d >= 2, got {n}x{d}")));
    }
    let (_, values, _) = principal_axes(data);
    let p = components_for_variance(&values, fraction).min(d - 1);
    fit_pca(data, p)
}

/// Smallest number of leading eigenvalues whose sum reaches `fraction` of the total.
pub fn components_for_variance(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total * (1.0 - 1e-12) {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// PCA on a seeded random subset of rows (`fraction` of `n`, at least 2).
pub fn fit_pca_subset(data: &DMatrix<f64>, p: usize, fraction: f64, seed: u64) -> Result<ProjectionBasis> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("subset fraction must be in (0, 1], got {fraction}")));
    }
    let n = data.nrows();
    let m = ((n as f64 * fraction).round() as usize).clamp(2.min(n), n);
    if m == n {
        let mut basis = fit_pca(data, p)?;
        basis.seed = seed;
        return Ok(basis);
    }
    let mut rng = rng::keyed(seed, stream::SUBSET, 0);
    let mut rows: Vec<usize> = sample(&mut rng, n, m).into_vec();
    rows.sort_unstable();
    let subset = data.select_rows(rows.iter());
    let mut basis = fit_pca(&subset, p)?;
    basis.seed = seed;
    Ok(basis)
}

/// Orthonormalized `d x p` standard Gaussian matrix.
pub fn random_basis(d: usize, p: usize, seed: u64) -> Result<ProjectionBasis> {
    if p == 0 || p >= d {
        return Err(Error::Dimension(format!("random basis needs 1 <= p < d, got p={p}, d={d}")));
    }
    let mut rng = rng::keyed(seed, stream::BASIS, 0);
    let g = DMatrix::<f64>::from_fn(d, p, |_, _| StandardNormal.sample(&mut rng));
    let (q, r_diag) = householder_full(&g);
    let mut u = q.columns(0, p).into_owned();
    // Positive diagonal of R makes Q Haar-distributed.
    for (j, r) in r_diag.iter().enumerate() {
        if *r < 0.0 {
            u.column_mut(j).neg_mut();
        }
    }
    ProjectionBasis::from_orthonormal(u, BasisKind::Random, seed)
}

/// `U = [e_1, ..., e_p]`; `p == d` gives the trivial full-space basis.
pub fn identity_slice(d: usize, p: usize) -> Result<ProjectionBasis> {
    if p == 0 || p > d {
        return Err(Error::Dimension(format!("identity slice needs 1 <= p <= d, got p={p}, d={d}")));
    }
    let u = DMatrix::<f64>::identity(d, p);
    ProjectionBasis::from_orthonormal(u, BasisKind::IdentitySlice, 0)
}

/// Eigenvectors (columns, descending eigenvalue), eigenvalues and mean of the
/// sample covariance of `data`.
fn principal_axes(data: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DVector<f64>) {
    let (n, d) = data.shape();
    let mean = DVector::from_fn(d, |j, _| data.column(j).mean());
    let mut centered = data.clone();
    for j in 0..d {
        let m = mean[j];
        centered.column_mut(j).iter_mut().for_each(|x| *x -= m);
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        // Largest-magnitude entry positive (first index on ties).
        let lead =
            col.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > col[best].abs() + 1e-12 { i } else { best });
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (vectors, values, mean)
}

/// Full Householder QR of a `d x p` matrix: returns the `d x d` orthogonal `Q`
/// and the diagonal of `R`.
fn householder_full(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (d, p) = a.shape();
    let mut r = a.clone();
    let mut reflectors: Vec<Option<DVector<f64>>> = Vec::with_capacity(p);
    let mut diag = Vec::with_capacity(p);
    for k in 0..p.min(d) {
        let x = r.view((k, k), (d - k, 1)).column(0).into_owned();
        let norm = x.norm();
        if norm == 0.0 {
            reflectors.push(None);
            diag.push(0.0);
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            reflectors.push(None);
            diag.push(alpha);
            continue;
        }
        v /= vnorm;
        {
            let mut block = r.view_mut((k, 0), (d - k, p));
            let w = block.tr_mul(&v);
            block.ger(-2.0, &v, &w, 1.0);
        }
        diag.push(alpha);
        reflectors.push(Some(v));
    }
    let mut q = DMatrix::<f64>::identity(d, d);
    for (k, v) in reflectors.iter().enumerate().rev() {
        if let Some(v) = v {
            let mut block = q.view_mut((k, 0), (d - k, d));
            let w = block.tr_mul(v);
            block.ger(-2.0, v, &w, 1.0);
        }
    }
    (q, diag)
}

/// Orthonormal basis of the orthogonal complement of `span(U)`.
fn nullspace_completion(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, p) = u.shape();
    if p == d {
        return DMatrix::zeros(d, 0);
    }
    let (q, _) = householder_full(u);
    let mut v = q.columns(p, d - p).into_owned();
    for mut col in v.column_iter_mut() {
        let lead =
            col.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > col[best].abs() + 1e-12 { i } else { best });
        if col[lead] < 0.0 {
            col.neg_mut();
        }
    }
    v
}

fn write_row_major<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_row_major<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let vals = read_f64s(r, rows * cols)?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_axis_variance_gives_e1() {
        let data = DMatrix::from_fn(20, 3, |i, j| if j == 0 { i as f64 * 0.01 - 0.1 } else { 0.0 });
        let b = fit_pca(&data, 1).unwrap();
        assert!((b.u()[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(b.u()[(1, 0)].abs() < 1e-12 && b.u()[(2, 0)].abs() < 1e-12);
        assert!(b.orthonormality_error() < 1e-8);
    }

    #[test]
    fn rejects_full_dimension() {
        let data = DMatrix::<f64>::zeros(5, 3);
        assert!(fit_pca(&data, 3).is_err());
        assert!(random_basis(3, 3, 0).is_err());
        assert!(fit_pca(&DMatrix::<f64>::zeros(1, 3), 1).is_err());
    }

    #[test]
    fn rank_deficient_data_still_completes() {
        // Zero covariance: every eigenvalue vanishes.
        let data = DMatrix::<f64>::from_element(10, 4, 0.1);
        let b = fit_pca(&data, 3).unwrap();
        assert!(b.orthonormality_error() < 1e-8);
        assert_eq!(b.v().ncols(), 1);
    }

    #[test]
    fn coordinate_slice_projection() {
        let b = identity_slice(2, 1).unwrap();
        let z = b.project(&[0.3, -0.2]).unwrap();
        assert_eq!(z.as_slice(), &[0.3]);
        assert!(b.project(&[0.3]).is_err());
        assert!(b.reconstruct(&[0.1, 0.2]).is_err());
        assert_eq!(b.reconstruct(&[0.0]).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn full_slice_has_empty_nullspace() {
        let b = identity_slice(4, 4).unwrap();
        assert_eq!(b.v().shape(), (4, 0));
    }

    #[test]
    fn variance_count() {
        assert_eq!(components_for_variance(&[9.0, 0.9, 0.1], 0.9), 1);
        assert_eq!(components_for_variance(&[9.0, 0.9, 0.1], 0.99), 2);
        assert_eq!(components_for_variance(&[9.0, 0.9, 0.1], 1.0), 3);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = ProjectionBasis::read_from(&b"NOTABASISFILE..."[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
