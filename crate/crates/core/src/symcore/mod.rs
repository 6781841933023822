//! Symmetric-matrix substrate: vectorization, half-vectorization, the
//! commutation matrix, matrix exponential/logarithm and PSD certification.
//!
//! Conventions used by every other module:
//! - `vec` stacks columns (length d²), so `tr(X^T Y) = vec(X) . vec(Y)`.
//! - `vech` stacks the columns of the lower triangle (length d(d+1)/2);
//!   this ordering is also the wire format for CSV/JSON output.
//! - The commutation matrix `K_d` is the permutation with
//!   `K_d vec(A) = vec(A^T)`.

mod expm;

pub use expm::{matrix_exponential, matrix_logarithm};

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default absolute tolerance on the smallest eigenvalue in PSD checks.
pub const PSD_TOL: f64 = 1e-10;

/// Maximum tolerated asymmetry before construction of a [`SymMat`] fails.
pub const SYM_TOL: f64 = 1e-9;

/// Scale-aware variant of a PSD tolerance: `tol * (1 + ||X||_F)`.
pub fn scaled_tol(tol: f64, x: &SymMat) -> f64 {
    tol * (1.0 + x.frobenius_norm())
}

/// A real symmetric d×d matrix, exactly symmetric by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat {
    data: DMatrix<f64>,
}

impl SymMat {
    /// Builds from a square matrix, symmetrizing inputs within [`SYM_TOL`]
    /// of symmetric and rejecting anything worse.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.is_empty() {
            return Err(Error::InvalidParam("matrix dimension must be >= 1".into()));
        }
        let mut asym: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..i {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if asym > SYM_TOL {
            return Err(Error::NotSymmetric {
                asymmetry: asym,
                tol: SYM_TOL,
            });
        }
        Ok(Self::symmetrize(m))
    }

    /// Unconditional symmetrization `(M + M^T)/2` of a square matrix.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize requires a square matrix");
        let mut s = m.clone();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                s[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        SymMat { data: s }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "rows do not form a square matrix".into(),
            ));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        SymMat::new(m)
    }

    pub fn zeros(d: usize) -> Self {
        SymMat {
            data: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        SymMat {
            data: DMatrix::identity(d, d),
        }
    }

    /// Symmetric matrix from a generator; only `f(i, j)` with `i >= j` is read.
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(d: usize, mut f: F) -> Self {
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in j..d {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMat { data: m }
    }

    /// Standard basis matrix `E^(ii)`.
    pub fn basis_diag(d: usize, i: usize) -> Self {
        let mut m = DMatrix::zeros(d, d);
        m[(i, i)] = 1.0;
        SymMat { data: m }
    }

    /// Symmetrized off-diagonal basis matrix `E^(ij) + E^(ji)`, i ≠ j.
    pub fn basis_offdiag(d: usize, i: usize, j: usize) -> Self {
        assert_ne!(i, j);
        let mut m = DMatrix::zeros(d, d);
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
        SymMat { data: m }
    }

    /// Rank-one Gram matrix `x x^T`.
    pub fn outer(x: &DVector<f64>) -> Self {
        let d = x.len();
        SymMat {
            data: DMatrix::from_fn(d, d, |i, j| x[i] * x[j]),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Column-stacking vectorization, length d².
    pub fn to_vec(&self) -> DVector<f64> {
        vec_mat(&self.data)
    }

    /// Half-vectorization in the declared order (columns of the lower triangle).
    pub fn vech(&self) -> HalfVec {
        let d = self.dim();
        let mut data = Vec::with_capacity(d * (d + 1) / 2);
        for j in 0..d {
            for i in j..d {
                data.push(self.data[(i, j)]);
            }
        }
        HalfVec { dim: d, data }
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Congruence transform `B X B^T` (symmetric for any rectangular `B`
    /// with `B.ncols() == self.dim()`).
    pub fn congruence(&self, b: &DMatrix<f64>) -> SymMat {
        let m = b * &self.data * b.transpose();
        SymMat::symmetrize(m)
    }

    /// Eigenvalues in ascending order (symmetric solver).
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.is_finite() {
            return Err(Error::NonFinite("symmetric eigenvalue computation"));
        }
        let mut ev: Vec<f64> = self
            .data
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ev)
    }

    /// Smallest eigenvalue.
    pub fn eigmin(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    pub fn scale(&self, c: f64) -> SymMat {
        SymMat {
            data: &self.data * c,
        }
    }
}

impl std::ops::Add for &SymMat {
    type Output = SymMat;
    fn add(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in SymMat add");
        SymMat {
            data: &self.data + &rhs.data,
        }
    }
}

impl std::ops::Sub for &SymMat {
    type Output = SymMat;
    fn sub(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in SymMat sub");
        SymMat {
            data: &self.data - &rhs.data,
        }
    }
}

impl Serialize for SymMat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.data[(i, j)]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        SymMat::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// A PSD-certified symmetric matrix; the certificate records the smallest
/// eigenvalue found at certification time.
#[derive(Clone, Debug)]
pub struct PsdMat {
    base: SymMat,
    eig_floor: f64,
}

impl PsdMat {
    pub fn base(&self) -> &SymMat {
        &self.base
    }

    pub fn eig_floor(&self) -> f64 {
        self.eig_floor
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Symmetric square root. Eigenvalues in `[-PSD_TOL, 0]` are clipped to
    /// zero so degenerate (non-invertible) matrices are handled.
    pub fn sqrt(&self) -> SymMat {
        let eig = self.base.data.clone().symmetric_eigen();
        let d = self.base.dim();
        let mut root = DMatrix::zeros(d, d);
        for k in 0..d {
            let lam = eig.eigenvalues[k].max(0.0);
            let s = lam.sqrt();
            let q = eig.eigenvectors.column(k);
            for i in 0..d {
                for j in 0..d {
                    root[(i, j)] += s * q[i] * q[j];
                }
            }
        }
        SymMat::symmetrize(root)
    }
}

impl Serialize for PsdMat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.base.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PsdMat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let base = SymMat::deserialize(deserializer)?;
        psd_check(&base, PSD_TOL).map_err(D::Error::custom)
    }
}

/// Accepts `X` iff its smallest eigenvalue is `>= -tol`; the returned
/// certificate carries that eigenvalue.
pub fn psd_check(x: &SymMat, tol: f64) -> Result<PsdMat> {
    let eig_floor = x.eigmin()?;
    if eig_floor < -tol {
        return Err(Error::NotPsd { eig_floor, tol });
    }
    Ok(PsdMat {
        base: x.clone(),
        eig_floor,
    })
}

/// Strict positive-definiteness predicate: smallest eigenvalue `> +tol`.
pub fn is_positive_definite(x: &SymMat, tol: f64) -> Result<bool> {
    Ok(x.eigmin()? > tol)
}

/// Half-vectorization of a symmetric matrix, columns of the lower triangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HalfVec {
    dim: usize,
    data: Vec<f64>,
}

impl HalfVec {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        // n = d(d+1)/2  =>  d = (sqrt(8n+1) - 1)/2
        let d = ((((8 * n + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
        if d * (d + 1) / 2 != n || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "length {n} is not d(d+1)/2 for any d >= 1"
            )));
        }
        Ok(HalfVec { dim: d, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Inverse of [`SymMat::vech`].
    pub fn to_sym(&self) -> SymMat {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        let mut idx = 0;
        for j in 0..d {
            for i in j..d {
                m[(i, j)] = self.data[idx];
                m[(j, i)] = self.data[idx];
                idx += 1;
            }
        }
        SymMat { data: m }
    }

    /// Header labels `s_11, s_21, ...` matching the vech order (1-based).
    pub fn labels(d: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for j in 0..d {
            for i in j..d {
                out.push(format!("s_{}{}", i + 1, j + 1));
            }
        }
        out
    }
}

impl TryFrom<Vec<f64>> for HalfVec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        HalfVec::new(v)
    }
}

impl From<HalfVec> for Vec<f64> {
    fn from(h: HalfVec) -> Vec<f64> {
        h.data
    }
}

/// Column-stacking vectorization of an arbitrary matrix.
pub fn vec_mat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows() * m.ncols(), m.iter().copied())
}

/// Inverse of [`vec_mat`] for square matrices.
pub fn unvec(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} cannot be an unvec of a {d}x{d} matrix",
            v.len()
        )));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| v[j * d + i]))
}

/// The commutation matrix `K_d`, a d²×d² permutation with
/// `K_d vec(A) = vec(A^T)` for every d×d matrix `A`.
#[derive(Clone, Debug)]
pub struct CommutationMatrix {
    dim: usize,
    matrix: DMatrix<f64>,
}

impl CommutationMatrix {
    pub fn new(d: usize) -> Self {
        let n = d * d;
        let mut k = DMatrix::zeros(n, n);
        // vec(A)[j*d + i] = A_ij, and (K vec A)[j*d + i] = A_ji = vec(A)[i*d + j].
        for i in 0..d {
            for j in 0..d {
                k[(j * d + i, i * d + j)] = 1.0;
            }
        }
        CommutationMatrix { dim: d, matrix: k }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Applies the permutation to a vec'd matrix without forming the product.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dim;
        if v.len() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "commutation matrix of dim {d} applied to vector of length {}",
                v.len()
            )));
        }
        let mut out = DVector::zeros(d * d);
        for i in 0..d {
            for j in 0..d {
                out[j * d + i] = v[i * d + j];
            }
        }
        Ok(out)
    }
}
