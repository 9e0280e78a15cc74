//! Lyapunov operator `L_X(Y) = X^T Y + Y X` and its inverse.
//!
//! The inverse is computed through the Kronecker form
//! `P(X) = I (x) X^T + X^T (x) I`, which satisfies `P(X) vec(Y) = vec(L_X(Y))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::{self, SymMatrix};

pub const DEFAULT_HURWITZ_TOL: f64 = 1e-9;

fn check_square(x: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::Dimension(format!(
            "{what}: expected {n}x{n}, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

pub fn lyap_apply(x: &DMatrix<f64>, y: &SymMatrix) -> Result<SymMatrix> {
    check_square(x, y.order(), "lyap_apply")?;
    Ok(SymMatrix::symmetrize(
        x.transpose() * y.matrix() + y.matrix() * x,
    ))
}

pub fn kron_lyap_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let eye = DMatrix::identity(n, n);
    let xt = x.transpose();
    matops::kron(&eye, &xt) + matops::kron(&xt, &eye)
}

/// Eigenvalues of a general real matrix as `(re, im)` pairs.
pub fn eigenvalues(x: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if !x.is_square() {
        return Err(Error::Dimension("eigenvalues of non-square matrix".into()));
    }
    if x.nrows() == 0 {
        return Ok(Vec::new());
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen);
    }
    let schur = nalgebra::linalg::Schur::try_new(x.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::Eigen)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(x: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(x)?
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(x: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(spectral_abscissa(x)? < -tol)
}

fn require_hurwitz(x: &DMatrix<f64>) -> Result<()> {
    let abscissa = spectral_abscissa(x)?;
    if abscissa < -DEFAULT_HURWITZ_TOL {
        Ok(())
    } else {
        Err(Error::NotHurwitz { abscissa })
    }
}

/// Solves `X^T Y + Y X = -Z` for Hurwitz `X`.
pub fn lyap_solve(x: &DMatrix<f64>, z: &SymMatrix) -> Result<SymMatrix> {
    check_square(x, z.order(), "lyap_solve")?;
    require_hurwitz(x)?;
    lyap_solve_unchecked(x, z)
}

/// Same as [`lyap_solve`] without the spectrum check. Fails only when the
/// Kronecker matrix is singular.
pub(crate) fn lyap_solve_unchecked(x: &DMatrix<f64>, z: &SymMatrix) -> Result<SymMatrix> {
    let n = z.order();
    let rhs = -matops::vec(z.matrix());
    let sol = kron_lyap_matrix(x)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Kronecker Lyapunov matrix".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("Kronecker Lyapunov matrix".into()));
    }
    Ok(SymMatrix::symmetrize(DMatrix::from_column_slice(
        n,
        n,
        sol.as_slice(),
    )))
}

/// `||P(X)^{-1}||_2`, the Frobenius-induced norm of the inverse operator.
pub fn lyap_inverse_norm(x: &DMatrix<f64>) -> Result<f64> {
    check_square(x, x.nrows(), "lyap_inverse_norm")?;
    require_hurwitz(x)?;
    let smin = kron_lyap_matrix(x).singular_values().min();
    if smin <= 0.0 {
        return Err(Error::Singular("Kronecker Lyapunov matrix".into()));
    }
    Ok(1.0 / smin)
}

/// Both sides of the two perturbation bounds for `L_X(Y) = -Z` versus
/// `L_{X+dX}(Y+dY) = -(Z+dZ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBounds {
    /// `||dY||_2`
    pub delta_y_spectral: f64,
    /// `(||dZ||_2 + 2 ||dX||_2 ||Y + dY||_2) ||H||_2` with `H = L_X^{-1}(-I)`.
    pub spectral_bound: f64,
    /// `||dY||_F`
    pub delta_y_frobenius: f64,
    /// `gamma = max(||dX||_F / ||X||_F, ||dZ||_F / ||Z||_F)`
    pub gamma: f64,
    /// `gamma ||X||_F ||P(X)^{-1}||_2`; the scaled bound applies when <= 1/4.
    pub scaled_gain: f64,
    /// `8 gamma ||X||_F ||P(X)^{-1}||_2 ||Y||_F`; meaningful only when
    /// [`Self::scaled_applicable`] holds.
    pub scaled_bound: f64,
}

impl PerturbationBounds {
    pub fn evaluate(
        x: &DMatrix<f64>,
        z: &SymMatrix,
        dx: &DMatrix<f64>,
        dz: &SymMatrix,
    ) -> Result<Self> {
        let n = z.order();
        check_square(dx, n, "perturbation dX")?;
        if dz.order() != n {
            return Err(Error::Dimension("perturbation dZ order".into()));
        }
        let y = lyap_solve(x, z)?;
        let y_pert = lyap_solve(&(x + dx), &(z + dz))?;
        let dy = y_pert.matrix() - y.matrix();
        let h = lyap_solve(x, &SymMatrix::identity(n))?;
        let spectral_bound = (matops::spectral_norm(dz)
            + 2.0 * matops::spectral_norm(dx) * matops::spectral_norm(&y_pert))
            * matops::spectral_norm(&h);

        let x_f = x.norm();
        let z_f = z.frobenius();
        let gamma = if z_f > 0.0 && x_f > 0.0 {
            (dx.norm() / x_f).max(dz.frobenius() / z_f)
        } else {
            f64::INFINITY
        };
        let inv_norm = lyap_inverse_norm(x)?;
        let scaled_gain = gamma * x_f * inv_norm;
        Ok(Self {
            delta_y_spectral: matops::spectral_norm(&dy),
            spectral_bound,
            delta_y_frobenius: dy.norm(),
            gamma,
            scaled_gain,
            scaled_bound: 8.0 * scaled_gain * y.frobenius(),
        })
    }

    pub fn scaled_applicable(&self) -> bool {
        self.gamma.is_finite() && self.scaled_gain <= 0.25
    }
}

/// `vec(L_X(Y))` computed through the Kronecker matrix; used to cross-check
/// [`lyap_apply`].
pub fn lyap_apply_kron(x: &DMatrix<f64>, y: &SymMatrix) -> DVector<f64> {
    kron_lyap_matrix(x) * matops::vec(y.matrix())
}
