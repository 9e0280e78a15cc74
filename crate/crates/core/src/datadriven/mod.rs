//! Off-policy data-driven policy iteration.
//!
//! One trajectory of the (possibly disturbed) plant is recorded under an
//! exploratory input. Along any trajectory, with `P_K` the value matrix of
//! `K` and `K+ = R^{-1} B^T P_K`,
//!
//! ```text
//! x^T P_K x |_{t_j}^{t_j+1} - 2 int (x^T K^T R K+ x + u^T R K+ x)
//!     = -int x^T (Q + K^T R K) x
//! ```
//!
//! which is linear in `[svec(P_K); vec(K+)]`. Stacking `M` intervals gives
//! `Theta(K) y = Xi(K)`, solved in the minimum-norm least-squares sense. The
//! data matrices never change between iterations; only the gain is
//! re-substituted.

mod bundle;
mod signal;
mod simulate;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

pub use bundle::{load_bundle, save_bundle, BundleMeta};
pub use signal::{SignalSpec, SinusoidSignal};
pub use simulate::{simulate_collect, CollectionPlan, DEFAULT_SUBSTEPS};

use crate::error::{Error, Result};
use crate::lyapunov::{self, DEFAULT_HURWITZ_TOL};
use crate::matops::{self, SymMatrix};
use crate::riccati::{LqrCost, LtiSystem};

/// Sampled data matrices of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    /// `M x n(n+1)/2`, rows `svec(x x^T)(t_{j+1}) - svec(x x^T)(t_j)`.
    pub delta_xx: DMatrix<f64>,
    /// `M x n^2`, rows `int x (x) x`.
    pub i_xx: DMatrix<f64>,
    /// `M x nm`, rows `int x (x) u`.
    pub i_xu: DMatrix<f64>,
    pub dt: f64,
    pub n: usize,
    pub m: usize,
    /// States on the sampling grid (`M + 1` entries); empty when loaded from
    /// a bundle.
    pub states: Vec<DVector<f64>>,
    pub seeds: BTreeMap<String, u64>,
}

impl TrajectoryData {
    /// Number of sampling intervals `M`.
    pub fn samples(&self) -> usize {
        self.delta_xx.nrows()
    }

    /// Number of unknowns `n(n+1)/2 + mn`.
    pub fn unknowns(&self) -> usize {
        matops::svec_len(self.n) + self.n * self.m
    }

    /// `[I_xx, I_xu]`
    pub fn excitation_matrix(&self) -> DMatrix<f64> {
        let rows = self.samples();
        let (cxx, cxu) = (self.i_xx.ncols(), self.i_xu.ncols());
        let mut out = DMatrix::zeros(rows, cxx + cxu);
        out.view_mut((0, 0), (rows, cxx)).copy_from(&self.i_xx);
        out.view_mut((0, cxx), (rows, cxu)).copy_from(&self.i_xu);
        out
    }

    /// First `rows` sampling intervals.
    pub fn truncated(&self, rows: usize) -> TrajectoryData {
        let rows = rows.min(self.samples());
        TrajectoryData {
            delta_xx: self.delta_xx.rows(0, rows).into_owned(),
            i_xx: self.i_xx.rows(0, rows).into_owned(),
            i_xu: self.i_xu.rows(0, rows).into_owned(),
            dt: self.dt,
            n: self.n,
            m: self.m,
            states: self.states.iter().take(rows + 1).cloned().collect(),
            seeds: self.seeds.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let rows = self.samples();
        if self.i_xx.nrows() != rows
            || self.i_xu.nrows() != rows
            || self.delta_xx.ncols() != matops::svec_len(self.n)
            || self.i_xx.ncols() != self.n * self.n
            || self.i_xu.ncols() != self.n * self.m
        {
            return Err(Error::Dimension(format!(
                "inconsistent data matrices for n={}, m={}",
                self.n, self.m
            )));
        }
        Ok(())
    }
}

/// Default relative rank threshold `max(M, n0) * eps`.
pub fn default_rank_tol(data: &TrajectoryData) -> f64 {
    data.samples().max(data.unknowns()) as f64 * f64::EPSILON
}

/// Numerical rank of `[I_xx, I_xu]` with singular values counted above
/// `tol * sigma_max`.
pub fn excitation_rank(data: &TrajectoryData, tol: Option<f64>) -> usize {
    let tol = tol.unwrap_or_else(|| default_rank_tol(data));
    matops::numerical_rank(&data.excitation_matrix(), Some(tol))
}

/// `rank([I_xx, I_xu]) == n(n+1)/2 + mn`
pub fn rank_condition(data: &TrajectoryData, tol: Option<f64>) -> bool {
    excitation_rank(data, tol) == data.unknowns()
}

/// Assembles
/// `Theta(K) = [delta_xx, -2 I_xx (I_n (x) K^T R) - 2 I_xu (I_n (x) R)]` and
/// `Xi(K) = -I_xx vec(Q + K^T R K)`.
pub fn build_theta_xi(
    data: &TrajectoryData,
    cost: &LqrCost,
    k: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    data.validate()?;
    let (n, m) = (data.n, data.m);
    if k.shape() != (m, n) || cost.q().order() != n || cost.r().order() != m {
        return Err(Error::Dimension(format!(
            "gain {}x{} / weights {}, {} do not match data with n={n}, m={m}",
            k.nrows(),
            k.ncols(),
            cost.q().order(),
            cost.r().order()
        )));
    }
    let r = cost.r().matrix();
    let eye = DMatrix::<f64>::identity(n, n);
    let kt_r = k.transpose() * r;
    let gain_block = (&data.i_xx * matops::kron(&eye, &kt_r)
        + &data.i_xu * matops::kron(&eye, r))
        * -2.0;

    let rows = data.samples();
    let nsv = matops::svec_len(n);
    let mut theta = DMatrix::zeros(rows, nsv + n * m);
    theta.view_mut((0, 0), (rows, nsv)).copy_from(&data.delta_xx);
    theta.view_mut((0, nsv), (rows, n * m)).copy_from(&gain_block);

    let weight = cost.q().matrix() + k.transpose() * r * k;
    let xi = -(&data.i_xx * matops::vec(&weight));
    Ok((theta, xi))
}

/// Splits `[svec(P); vec(K)]` into `(P, K)`.
pub fn unpack_solution(y: &DVector<f64>, n: usize, m: usize) -> Result<(SymMatrix, DMatrix<f64>)> {
    let nsv = matops::svec_len(n);
    if y.len() != nsv + n * m {
        return Err(Error::Dimension(format!(
            "solution length {} != {}",
            y.len(),
            nsv + n * m
        )));
    }
    let p = matops::smat(&y.rows(0, nsv).into_owned())?;
    let k = matops::unvec(&y.rows(nsv, n * m).into_owned(), m, n)?;
    Ok((p, k))
}

/// Inverse of [`unpack_solution`].
pub fn pack_solution(p: &SymMatrix, k: &DMatrix<f64>) -> DVector<f64> {
    let sv = matops::svec(p);
    let kv = matops::vec(k);
    let mut out = DVector::zeros(sv.len() + kv.len());
    out.rows_mut(0, sv.len()).copy_from(&sv);
    out.rows_mut(sv.len(), kv.len()).copy_from(&kv);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataDrivenIterate {
    pub index: usize,
    pub p_hat: SymMatrix,
    /// Gain substituted into `Theta` / `Xi`.
    pub k_hat: DMatrix<f64>,
    pub k_hat_next: DMatrix<f64>,
    /// `||Theta y - Xi||_2`
    pub lsq_residual: f64,
    pub rank_ok: bool,
    /// `sigma_max / sigma_min` of `Theta`; infinite when rank deficient.
    pub theta_cond: f64,
    pub err_to_opt: Option<f64>,
    /// `A - B k_hat_next` Hurwitz for the true plant; diagnostics only.
    pub next_stabilizing: Option<bool>,
}

/// Minimum-norm least-squares solve of `Theta(K) y = Xi(K)` via SVD.
pub fn pi_data_step(
    data: &TrajectoryData,
    cost: &LqrCost,
    k_hat: &DMatrix<f64>,
) -> Result<DataDrivenIterate> {
    let rank_ok = rank_condition(data, None);
    data_step(data, cost, k_hat, rank_ok)
}

fn data_step(
    data: &TrajectoryData,
    cost: &LqrCost,
    k_hat: &DMatrix<f64>,
    rank_ok: bool,
) -> Result<DataDrivenIterate> {
    let (theta, xi) = build_theta_xi(data, cost, k_hat)?;
    let unknowns = theta.ncols();
    let svd = theta.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = if theta.nrows() >= unknowns {
        svd.singular_values.min()
    } else {
        0.0
    };
    let theta_cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let cutoff = default_rank_tol(data) * smax;
    let y = svd
        .solve(&xi, cutoff)
        .map_err(|e| Error::Singular(format!("least-squares solve: {e}")))?;
    let lsq_residual = (&theta * &y - &xi).norm();
    let (p_hat, k_hat_next) = unpack_solution(&y, data.n, data.m)?;
    Ok(DataDrivenIterate {
        index: 0,
        p_hat,
        k_hat: k_hat.clone(),
        k_hat_next,
        lsq_residual,
        rank_ok,
        theta_cond,
        err_to_opt: None,
        next_stabilizing: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataDrivenRun {
    pub data: TrajectoryData,
    pub iterates: Vec<DataDrivenIterate>,
}

impl DataDrivenRun {
    pub fn all_stabilizing(&self) -> bool {
        self.iterates.iter().all(|it| it.next_stabilizing == Some(true))
    }

    pub fn final_error(&self) -> Option<f64> {
        self.iterates.last().and_then(|it| it.err_to_opt)
    }
}

/// Iterates [`pi_data_step`] `n_iter` times on an already collected dataset.
pub fn pi_data_iterate(
    data: &TrajectoryData,
    cost: &LqrCost,
    k1_hat: &DMatrix<f64>,
    n_iter: usize,
    sys: Option<&LtiSystem>,
    p_star: Option<&SymMatrix>,
) -> Result<Vec<DataDrivenIterate>> {
    let rank_ok = rank_condition(data, None);
    let mut out = Vec::with_capacity(n_iter);
    let mut k = k1_hat.clone();
    for index in 1..=n_iter {
        let mut it = data_step(data, cost, &k, rank_ok)?;
        it.index = index;
        it.err_to_opt = p_star.map(|ps| (&it.p_hat - ps).frobenius());
        if let Some(sys) = sys {
            let finite = it.k_hat_next.iter().all(|v| v.is_finite());
            it.next_stabilizing = Some(
                finite
                    && lyapunov::is_hurwitz(&sys.closed_loop(&it.k_hat_next), DEFAULT_HURWITZ_TOL)
                        .unwrap_or(false),
            );
        }
        k = it.k_hat_next.clone();
        out.push(it);
    }
    Ok(out)
}

/// Collects one trajectory, then runs `n_iter` off-policy iterations on it.
/// Stabilization of each learned gain is checked against the true `(A, B)`
/// for reporting only.
#[allow(clippy::too_many_arguments)]
pub fn pi_data_run(
    sys: &LtiSystem,
    cost: &LqrCost,
    k1_hat: &DMatrix<f64>,
    u: &SinusoidSignal,
    w: Option<&SinusoidSignal>,
    plan: &CollectionPlan,
    n_iter: usize,
    p_star: Option<&SymMatrix>,
) -> Result<DataDrivenRun> {
    sys.check_gain_shape(k1_hat)?;
    let data = simulate_collect(sys, u, w, plan)?;
    let iterates = pi_data_iterate(&data, cost, k1_hat, n_iter, Some(sys), p_star)?;
    Ok(DataDrivenRun { data, iterates })
}
