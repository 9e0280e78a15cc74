//! Plant and cost definitions, the algebraic Riccati residual, and a
//! ground-truth ARE solver built on exact Kleinman iteration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lyapunov::{self, DEFAULT_HURWITZ_TOL};
use crate::matops::{self, SymMatrix};

pub const DEFAULT_ARE_TOL: f64 = 1e-12;
pub const DEFAULT_ARE_MAX_ITER: usize = 200;

/// Linear time-invariant plant `dx/dt = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    /// Builds the plant and checks that `(A, B)` is controllable.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let rank = matops::numerical_rank(&controllability_matrix(&a, &b), None);
        if rank < n {
            return Err(Error::Uncontrollable { rank, n });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `A - B K`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * k
    }

    pub fn is_stabilizing(&self, k: &DMatrix<f64>) -> Result<bool> {
        self.check_gain_shape(k)?;
        lyapunov::is_hurwitz(&self.closed_loop(k), DEFAULT_HURWITZ_TOL)
    }

    pub(crate) fn check_gain_shape(&self, k: &DMatrix<f64>) -> Result<()> {
        if k.shape() != (self.m(), self.n()) {
            return Err(Error::Dimension(format!(
                "gain must be {}x{}, got {}x{}",
                self.m(),
                self.n(),
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(())
    }
}

/// `[B, AB, ..., A^{n-1} B]`
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    out
}

/// Quadratic cost weights `Q >= 0`, `R > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrCost {
    q: SymMatrix,
    r: SymMatrix,
    r_inv: DMatrix<f64>,
}

impl LqrCost {
    pub fn new(q: SymMatrix, r: SymMatrix) -> Result<Self> {
        if q.min_eigenvalue() < -1e-10 {
            return Err(Error::InvalidCost(format!(
                "Q must be positive semidefinite (min eigenvalue {:.3e})",
                q.min_eigenvalue()
            )));
        }
        if r.min_eigenvalue() <= 0.0 {
            return Err(Error::InvalidCost(format!(
                "R must be positive definite (min eigenvalue {:.3e})",
                r.min_eigenvalue()
            )));
        }
        let r_inv = r
            .matrix()
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidCost("R is singular".into()))?;
        Ok(Self { q, r, r_inv })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self::new(SymMatrix::identity(n), SymMatrix::identity(m)).expect("identity weights")
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    /// Checks conformity with `sys` and that `(A, Q^{1/2})` is observable.
    pub fn check_against(&self, sys: &LtiSystem) -> Result<()> {
        if self.q.order() != sys.n() || self.r.order() != sys.m() {
            return Err(Error::Dimension(format!(
                "cost weights are {}x{} / {}x{} but system has n={}, m={}",
                self.q.order(),
                self.q.order(),
                self.r.order(),
                self.r.order(),
                sys.n(),
                sys.m()
            )));
        }
        let eig = self.q.matrix().clone().symmetric_eigen();
        let sqrt_diag = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let q_half = &eig.eigenvectors
            * DMatrix::from_diagonal(&sqrt_diag)
            * eig.eigenvectors.transpose();
        // observability of (A, C) is controllability of (A^T, C^T)
        let obs = controllability_matrix(&sys.a.transpose(), &q_half.transpose());
        let n = sys.n();
        let rank = matops::numerical_rank(&obs, None);
        if rank < n {
            return Err(Error::Unobservable { rank, n });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution {
    pub p_star: SymMatrix,
    pub k_star: DMatrix<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// `A^T P + P A - P B R^{-1} B^T P + Q`
pub fn are_residual(sys: &LtiSystem, cost: &LqrCost, p: &SymMatrix) -> Result<SymMatrix> {
    cost.check_against_dims(sys)?;
    if p.order() != sys.n() {
        return Err(Error::Dimension("P order differs from n".into()));
    }
    let a = sys.a();
    let b = sys.b();
    let pm = p.matrix();
    let pb = pm * b;
    Ok(SymMatrix::symmetrize(
        a.transpose() * pm + pm * a - &pb * cost.r_inv() * pb.transpose() + cost.q().matrix(),
    ))
}

impl LqrCost {
    pub(crate) fn check_against_dims(&self, sys: &LtiSystem) -> Result<()> {
        if self.q.order() != sys.n() || self.r.order() != sys.m() {
            return Err(Error::Dimension(format!(
                "cost weights of order {}/{} do not match n={}, m={}",
                self.q.order(),
                self.r.order(),
                sys.n(),
                sys.m()
            )));
        }
        Ok(())
    }
}

/// Cost matrix of gain `K`: solves `(A-BK)^T P + P (A-BK) = -(Q + K^T R K)`.
pub(crate) fn gain_cost(sys: &LtiSystem, cost: &LqrCost, k: &DMatrix<f64>) -> Result<SymMatrix> {
    sys.check_gain_shape(k)?;
    let closed = sys.closed_loop(k);
    let abscissa = lyapunov::spectral_abscissa(&closed)?;
    if abscissa >= -DEFAULT_HURWITZ_TOL {
        return Err(Error::NotStabilizing { abscissa });
    }
    let weight = SymMatrix::symmetrize(cost.q().matrix() + k.transpose() * cost.r().matrix() * k);
    lyapunov::lyap_solve(&closed, &weight)
}

/// `R^{-1} B^T P`
pub fn optimal_gain(sys: &LtiSystem, cost: &LqrCost, p: &SymMatrix) -> DMatrix<f64> {
    cost.r_inv() * sys.b().transpose() * p.matrix()
}

/// Stopping rule shared by the exact iterations: the step is below `tol`,
/// below a rounding floor relative to `||P||`, or has stopped shrinking
/// once already tiny relative to `||P||`.
pub(crate) fn step_converged(step: f64, prev_step: f64, tol: f64, p_norm: f64) -> bool {
    let scale = p_norm.max(1.0);
    step < tol
        || step < 1e3 * f64::EPSILON * scale
        || (step >= prev_step && step < 1e-6 * scale)
}

/// Runs exact Kleinman iteration from the stabilizing gain `k1` until
/// successive value matrices differ by less than `tol` in Frobenius norm.
pub fn solve_are(
    sys: &LtiSystem,
    cost: &LqrCost,
    k1: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<AreSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    cost.check_against_dims(sys)?;
    sys.check_gain_shape(k1)?;
    let abscissa = lyapunov::spectral_abscissa(&sys.closed_loop(k1))?;
    if abscissa >= -DEFAULT_HURWITZ_TOL {
        return Err(Error::NotStabilizing { abscissa });
    }

    let mut p = gain_cost(sys, cost, k1)?;
    let mut last_step = f64::INFINITY;
    for iteration in 1..=max_iter {
        let k = optimal_gain(sys, cost, &p);
        let next = gain_cost(sys, cost, &k)?;
        let step = (&next - &p).frobenius();
        p = next;
        let done = step_converged(step, last_step, tol, p.frobenius());
        last_step = step;
        if done {
            let residual_norm = are_residual(sys, cost, &p)?.frobenius();
            let k_star = optimal_gain(sys, cost, &p);
            return Ok(AreSolution {
                p_star: p,
                k_star,
                residual_norm,
                iterations: iteration,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_step,
    })
}

/// Maximum integration horizon for [`find_stabilizing_gain`].
pub const STABILIZING_HORIZON: f64 = 1e4;

/// Returns some `K` with `A - B K` Hurwitz.
///
/// A Hurwitz `A` yields `K = 0`. Otherwise the Riccati differential equation
/// `dP/dt = A^T P + P A - P B B^T P + I` is integrated from `P = 0` until
/// `A - B B^T P` is Hurwitz, and `B^T P` is returned.
///
/// Each step applies the exact flow of the equation through the linear
/// Hamiltonian system `d/dt [X; Y] = [[-A, B B^T], [I, A^T]] [X; Y]`,
/// `P = Y X^{-1}`, so the step length is not limited by stiffness.
pub fn find_stabilizing_gain(sys: &LtiSystem) -> Result<DMatrix<f64>> {
    let (n, m) = (sys.n(), sys.m());
    if lyapunov::is_hurwitz(sys.a(), DEFAULT_HURWITZ_TOL)? {
        return Ok(DMatrix::zeros(m, n));
    }
    let a = sys.a();
    let b = sys.b();
    let mut ham = DMatrix::<f64>::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(&(-a));
    ham.view_mut((0, n), (n, n)).copy_from(&(b * b.transpose()));
    ham.view_mut((n, 0), (n, n)).fill_with_identity();
    ham.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    let h_max = 4.0 / ham.norm();

    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut t = 0.0;
    let mut stepper: Option<(f64, DMatrix<f64>)> = None;
    while t < STABILIZING_HORIZON {
        let h = (0.05 * (1.0 + t)).min(h_max);
        let phi = match &stepper {
            Some((h_cached, phi)) if *h_cached == h => phi.clone(),
            _ => {
                let phi = (&ham * h).exp();
                stepper = Some((h, phi.clone()));
                phi
            }
        };
        let xy = phi.columns(0, n) + phi.columns(n, n) * &p;
        let x = xy.rows(0, n).into_owned();
        let y = xy.rows(n, n).into_owned();
        // P = Y X^{-1}, i.e. X^T P^T = Y^T
        let Some(pt) = x.transpose().lu().solve(&y.transpose()) else {
            break;
        };
        p = (&pt + pt.transpose()) * 0.5;
        if p.iter().any(|v| !v.is_finite()) {
            break;
        }
        t += h;
        let k = b.transpose() * &p;
        if lyapunov::is_hurwitz(&sys.closed_loop(&k), DEFAULT_HURWITZ_TOL)? {
            return Ok(k);
        }
    }
    Err(Error::StabilizationFailed {
        horizon: STABILIZING_HORIZON,
    })
}
