//! Vectorization and quadratic-form primitives.
//!
//! `svec` packs a symmetric matrix's upper triangle row by row with the
//! off-diagonal entries scaled by `sqrt(2)`, so that
//! `svec(Y) . svec(Z) == trace(Y Z)`. `vec` stacks columns. Both orderings are
//! part of the data-driven least-squares layout and must not change.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real symmetric matrix. Construction symmetrizes as `(X + X^T) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square with order >= 1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes a square matrix. Panics on non-square input.
    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize: non-square input");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(k: usize) -> Self {
        SymMatrix(DMatrix::identity(k, k))
    }

    pub fn zeros(k: usize) -> Self {
        SymMatrix(DMatrix::zeros(k, k))
    }

    pub fn from_row_slice(k: usize, data: &[f64]) -> Result<Self> {
        if data.len() != k * k {
            return Err(Error::Dimension(format!(
                "expected {} entries for order {k}, got {}",
                k * k,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(k, k, data))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl std::ops::Sub for &SymMatrix {
    type Output = SymMatrix;

    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl std::ops::Add for &SymMatrix {
    type Output = SymMatrix;

    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

/// Length of `svec` for a matrix of order `k`.
pub fn svec_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Inverse of [`svec_len`]; `None` when `len` is not triangular.
pub fn order_from_svec_len(len: usize) -> Option<usize> {
    let k = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (k..=k + 1).find(|&k| k >= 1 && svec_len(k) == len)
}

pub fn svec(y: &SymMatrix) -> DVector<f64> {
    let k = y.order();
    let mut out = DVector::zeros(svec_len(k));
    let mut idx = 0;
    for i in 0..k {
        out[idx] = y[(i, i)];
        idx += 1;
        for j in i + 1..k {
            out[idx] = std::f64::consts::SQRT_2 * y[(i, j)];
            idx += 1;
        }
    }
    out
}

pub fn smat(v: &DVector<f64>) -> Result<SymMatrix> {
    let k = order_from_svec_len(v.len()).ok_or_else(|| {
        Error::Dimension(format!("svec length {} is not k(k+1)/2", v.len()))
    })?;
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        m[(i, i)] = v[idx];
        idx += 1;
        for j in i + 1..k {
            let x = v[idx] / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            idx += 1;
        }
    }
    Ok(SymMatrix(m))
}

/// `svec(v v^T)` without forming the outer product.
pub fn svec_outer(v: &DVector<f64>) -> DVector<f64> {
    let k = v.len();
    let mut out = DVector::zeros(svec_len(k));
    let mut idx = 0;
    for i in 0..k {
        out[idx] = v[i] * v[i];
        idx += 1;
        for j in i + 1..k {
            out[idx] = std::f64::consts::SQRT_2 * v[i] * v[j];
            idx += 1;
        }
    }
    out
}

/// Column stacking.
pub fn vec(x: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec`] for a `rows x cols` matrix.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    x.kronecker(y)
}

/// `[I, -Z^T] U [I; -Z]` for `U` of order `n + m` and `Z` of shape `m x n`.
pub fn quad_form_h(u: &SymMatrix, z: &DMatrix<f64>) -> Result<SymMatrix> {
    let (m, n) = z.shape();
    if u.order() != n + m {
        return Err(Error::Dimension(format!(
            "H(U, Z): U has order {} but Z is {m}x{n}",
            u.order()
        )));
    }
    let mut t = DMatrix::zeros(n + m, n);
    t.view_mut((0, 0), (n, n)).fill_with_identity();
    t.view_mut((n, 0), (m, n)).copy_from(&(-z));
    Ok(SymMatrix::symmetrize(t.transpose() * u.matrix() * t))
}

/// Largest singular value.
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.singular_values().max()
}

/// Numerical rank with threshold `tol * sigma_max`; `None` uses
/// `max(rows, cols) * eps`.
pub fn numerical_rank(x: &DMatrix<f64>, rel_tol: Option<f64>) -> usize {
    if x.is_empty() {
        return 0;
    }
    let sv = x.singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    let tol = rel_tol.unwrap_or(x.nrows().max(x.ncols()) as f64 * f64::EPSILON) * smax;
    sv.iter().filter(|&&s| s > tol).count()
}
