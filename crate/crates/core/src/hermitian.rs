//! Dense Hermitian matrices, the lifted variable `X`.

use std::ops::{Add, AddAssign, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative tolerance on `‖M − M*‖_F / max(1, ‖M‖_F)` accepted by
/// [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense `n × n` Hermitian matrix.
///
/// The stored entries are exactly conjugate-symmetric: constructors that
/// accept a general matrix symmetrize it after checking the residue.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    data: DMatrix<Complex64>,
}

/// Eigendecomposition with eigenvalues sorted in descending order.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: DMatrix<Complex64>,
}

impl HermitianMatrix {
    /// Wrap a matrix, rejecting it if it is not Hermitian to [`HERMITIAN_TOL`].
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        Self::with_tolerance(m, HERMITIAN_TOL)
    }

    pub fn with_tolerance(m: DMatrix<Complex64>, rel_tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let residue = (&m - m.adjoint()).norm();
        let tolerance = rel_tol * m.norm().max(1.0);
        if !(residue <= tolerance) {
            return Err(Error::NotHermitian { residue, tolerance });
        }
        Ok(Self::symmetrized(m))
    }

    /// `(M + M*) / 2`, the Hermitian part of `m`.
    pub fn symmetrized(m: DMatrix<Complex64>) -> Self {
        let adj = m.adjoint();
        let data = (m + adj).scale(0.5);
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    /// Real diagonal matrix.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = DMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            data[(i, i)] = Complex64::new(d, 0.0);
        }
        Self { data }
    }

    /// Rank-one matrix `v v*`.
    pub fn outer(v: &[Complex64]) -> Self {
        let n = v.len();
        let data = DMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj());
        Self { data }
    }

    /// `u v* + v u*`.
    pub fn symmetric_outer(u: &[Complex64], v: &[Complex64]) -> Self {
        let n = u.len();
        assert_eq!(n, v.len());
        let data = DMatrix::from_fn(n, n, |i, j| u[i] * v[j].conj() + v[i] * u[j].conj());
        Self { data }
    }

    /// Build from an eigen-expansion `Σ_j w_j q_j q_j*` over the columns of `vectors`.
    pub fn from_eigen_parts(values: &[f64], vectors: &DMatrix<Complex64>) -> Self {
        let n = vectors.nrows();
        let mut scaled = vectors.clone();
        for (j, &w) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(w);
        }
        let m = &scaled * vectors.adjoint();
        debug_assert_eq!(m.nrows(), n);
        Self::symmetrized(m)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)].re).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    /// Frobenius inner product `Re tr(A* B)`; real for Hermitian pairs.
    pub fn inner(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.scale(s),
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        let mut data = self.data.clone();
        data.zip_apply(&other.data, |a, b| *a += b * s);
        Self { data }
    }

    pub fn quadratic_form(&self, v: &[Complex64]) -> f64 {
        let v = DVector::from_column_slice(v);
        (v.adjoint() * &self.data * &v)[(0, 0)].re
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(v);
        (&self.data * v).as_slice().to_vec()
    }

    /// Full eigendecomposition, eigenvalues descending.
    pub fn eigh(&self) -> Result<Eigh> {
        let (values, vectors) = lapack_eig::full(&self.data, true)?;
        Ok(sorted_descending(values, vectors))
    }

    /// Eigenpairs with eigenvalue strictly above `threshold`, descending.
    pub fn eigh_above(&self, threshold: f64) -> Result<Eigh> {
        let (values, vectors) = lapack_eig::above(&self.data, threshold)?;
        Ok(sorted_descending(values, vectors))
    }

    /// Eigenvalues only, descending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let (mut values, _) = lapack_eig::full(&self.data, false)?;
        values.reverse();
        Ok(values)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.last().copied().unwrap_or(0.0))
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    /// Operator (spectral) norm.
    pub fn spectral_norm(&self) -> Result<f64> {
        let ev = self.eigenvalues()?;
        Ok(ev.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    /// Error unless the smallest eigenvalue is at least `-tol`.
    pub fn check_psd(&self, tol: f64) -> Result<()> {
        let min_eigenvalue = self.min_eigenvalue()?;
        if min_eigenvalue < -tol {
            return Err(Error::NotPsd { min_eigenvalue });
        }
        Ok(())
    }
}

/// LAPACK returns ascending eigenvalues; flip to descending.
fn sorted_descending(mut values: Vec<f64>, vectors: DMatrix<Complex64>) -> Eigh {
    let k = values.len();
    values.reverse();
    let vectors = DMatrix::from_fn(vectors.nrows(), k, |i, j| vectors[(i, k - 1 - j)]);
    Eigh { values, vectors }
}

/// Thin wrappers over the LAPACK Hermitian eigensolvers (`zheevd`, `zheevr`).
mod lapack_eig {
    use super::*;

    fn zero() -> Complex64 {
        Complex64::new(0.0, 0.0)
    }

    fn check(info: i32, values: &[f64]) -> Result<()> {
        if info != 0 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::EigenFailure);
        }
        Ok(())
    }

    /// All eigenvalues ascending, with eigenvectors when `vectors` is set.
    pub(super) fn full(m: &DMatrix<Complex64>, vectors: bool) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
        let n = m.nrows();
        if n == 0 {
            return Ok((Vec::new(), DMatrix::zeros(0, 0)));
        }
        let ni = n as i32;
        let jobz = if vectors { b'V' } else { b'N' };
        let mut a = m.clone();
        let mut w = vec![0.0; n];
        let mut info = 0;
        let (mut work, mut rwork, mut iwork) = (vec![zero()], vec![0.0], vec![0]);
        // SAFETY: buffers are sized per the LAPACK workspace query.
        unsafe {
            lapack::zheevd(jobz, b'L', ni, a.as_mut_slice(), ni, &mut w, &mut work, -1, &mut rwork, -1, &mut iwork, -1, &mut info);
        }
        check(info, &[])?;
        let (lw, lrw, liw) = (work[0].re as usize, rwork[0] as usize, iwork[0] as usize);
        let (mut work, mut rwork, mut iwork) = (vec![zero(); lw.max(1)], vec![0.0; lrw.max(1)], vec![0; liw.max(1)]);
        unsafe {
            lapack::zheevd(
                jobz, b'L', ni, a.as_mut_slice(), ni, &mut w,
                &mut work, lw.max(1) as i32, &mut rwork, lrw.max(1) as i32, &mut iwork, liw.max(1) as i32, &mut info,
            );
        }
        check(info, &w)?;
        Ok((w, if vectors { a } else { DMatrix::zeros(0, 0) }))
    }

    /// Eigenpairs with eigenvalue in `(threshold, ∞)`, ascending.
    pub(super) fn above(m: &DMatrix<Complex64>, threshold: f64) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
        let n = m.nrows();
        if n == 0 {
            return Ok((Vec::new(), DMatrix::zeros(0, 0)));
        }
        let ni = n as i32;
        let mut a = m.clone();
        let mut w = vec![0.0; n];
        let mut z = DMatrix::<Complex64>::zeros(n, n);
        let mut isuppz = vec![0; 2 * n];
        let (mut found, mut info) = (0, 0);
        let (mut work, mut rwork, mut iwork) = (vec![zero()], vec![0.0], vec![0]);
        // SAFETY: buffers are sized per the LAPACK workspace query.
        unsafe {
            lapack::zheevr(
                b'V', b'V', b'L', ni, a.as_mut_slice(), ni, threshold, f64::MAX, 0, 0, 0.0, &mut found, &mut w,
                z.as_mut_slice(), ni, &mut isuppz, &mut work, -1, &mut rwork, -1, &mut iwork, -1, &mut info,
            );
        }
        check(info, &[])?;
        let (lw, lrw, liw) = (work[0].re as usize, rwork[0] as usize, iwork[0] as usize);
        let (mut work, mut rwork, mut iwork) = (vec![zero(); lw.max(1)], vec![0.0; lrw.max(1)], vec![0; liw.max(1)]);
        unsafe {
            lapack::zheevr(
                b'V', b'V', b'L', ni, a.as_mut_slice(), ni, threshold, f64::MAX, 0, 0, 0.0, &mut found, &mut w,
                z.as_mut_slice(), ni, &mut isuppz, &mut work, lw.max(1) as i32, &mut rwork, lrw.max(1) as i32,
                &mut iwork, liw.max(1) as i32, &mut info,
            );
        }
        let k = found.max(0) as usize;
        w.truncate(k);
        check(info, &w)?;
        Ok((w, z.columns(0, k).into_owned()))
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            data: &self.data + &rhs.data,
        }
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            data: &self.data - &rhs.data,
        }
    }
}

impl AddAssign<&HermitianMatrix> for HermitianMatrix {
    fn add_assign(&mut self, rhs: &HermitianMatrix) {
        self.data += &rhs.data;
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scale(rhs)
    }
}

// Serialized as a list of rows of [re, im] pairs.
impl Serialize for HermitianMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.dim())
            .map(|i| {
                (0..self.dim())
                    .map(|j| {
                        let z = self.data[(i, j)];
                        [z.re, z.im]
                    })
                    .collect()
            })
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("matrix rows must all have length n"));
        }
        let m = DMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]));
        HermitianMatrix::with_tolerance(m, 1e-9).map_err(serde::de::Error::custom)
    }
}
