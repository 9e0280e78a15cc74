//! Exact (Kleinman) and disturbance-injected policy iteration.
//!
//! Each step evaluates the current gain by solving a Lyapunov equation,
//! assembles the block matrix
//!
//! ```text
//! G = [ Q + A^T P + P A   P B ]
//!     [ B^T P             R   ]
//! ```
//!
//! and improves the gain as `K+ = G22^{-1} G21`. The robust variant adds a
//! symmetric disturbance to `G` before the improvement step.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{self, DEFAULT_HURWITZ_TOL};
use crate::matops::{self, SymMatrix};
use crate::riccati::{self, LqrCost, LtiSystem};

/// Condition number above which `G22` is treated as singular.
pub const SINGULAR_BLOCK_COND: f64 = 1e12;

/// One policy-iteration record: the value matrix of `k`, the (possibly
/// perturbed) block matrix used for the update, and the updated gain.
#[derive(Debug, Clone, PartialEq)]
pub struct PiIterate {
    pub index: usize,
    pub p: SymMatrix,
    /// Gain that was evaluated to obtain `p`.
    pub k: DMatrix<f64>,
    pub k_next: DMatrix<f64>,
    pub g: SymMatrix,
    pub delta_g_norm: f64,
    pub err_to_opt: Option<f64>,
    /// Whether `A - B k_next` is Hurwitz.
    pub next_stabilizing: bool,
    /// Stabilization margin `a_i` for the pair (`k`, `k_next`).
    pub margin: f64,
}

/// Solves `H(G, K) = 0` for `P` and returns `(P, G)`.
pub fn policy_evaluate(
    sys: &LtiSystem,
    cost: &LqrCost,
    k: &DMatrix<f64>,
) -> Result<(SymMatrix, SymMatrix)> {
    cost.check_against_dims(sys)?;
    let p = riccati::gain_cost(sys, cost, k)?;
    let g = assemble_g(sys, cost, &p);
    Ok((p, g))
}

fn assemble_g(sys: &LtiSystem, cost: &LqrCost, p: &SymMatrix) -> SymMatrix {
    let (n, m) = (sys.n(), sys.m());
    let a = sys.a();
    let pm = p.matrix();
    let pb = pm * sys.b();
    let mut g = DMatrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n))
        .copy_from(&(cost.q().matrix() + a.transpose() * pm + pm * a));
    g.view_mut((0, n), (n, m)).copy_from(&pb);
    g.view_mut((n, 0), (m, n)).copy_from(&pb.transpose());
    g.view_mut((n, n), (m, m)).copy_from(cost.r().matrix());
    SymMatrix::symmetrize(g)
}

/// `K = G22^{-1} G21` where `G22` is the trailing `m x m` block.
pub fn policy_improve(g: &SymMatrix, m: usize) -> Result<DMatrix<f64>> {
    let order = g.order();
    if m == 0 || m >= order {
        return Err(Error::Dimension(format!(
            "input dimension {m} incompatible with G of order {order}"
        )));
    }
    let n = order - m;
    let g22 = g.view((n, n), (m, m)).into_owned();
    let g21 = g.view((n, 0), (m, n)).into_owned();
    let sv = g22.singular_values();
    let cond = if sv.min() > 0.0 {
        sv.max() / sv.min()
    } else {
        f64::INFINITY
    };
    if !(cond <= SINGULAR_BLOCK_COND) {
        return Err(Error::SingularBlock { cond });
    }
    g22.lu()
        .solve(&g21)
        .ok_or(Error::SingularBlock { cond })
}

/// `a_i = (m (sqrt(n) + ||K_i||_2)^2 + m (sqrt(n) + ||K_{i+1}||_2)^2)^{-1}`
pub fn stability_margin(k: &DMatrix<f64>, k_next: &DMatrix<f64>, n: usize, m: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let mf = m as f64;
    let t1 = sn + matops::spectral_norm(k);
    let t2 = sn + matops::spectral_norm(k_next);
    1.0 / (mf * t1 * t1 + mf * t2 * t2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactRun {
    pub iterates: Vec<PiIterate>,
    pub converged: bool,
}

/// Exact policy iteration from a stabilizing `k1`, stopped once
/// `||P_{i+1} - P_i||_F < tol` or after `max_iter` evaluations.
pub fn pi_exact_run(
    sys: &LtiSystem,
    cost: &LqrCost,
    k1: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ExactRun> {
    let (n, m) = (sys.n(), sys.m());
    let mut iterates: Vec<PiIterate> = Vec::new();
    let mut k = k1.clone();
    let mut last_step = f64::INFINITY;
    for index in 1..=max_iter {
        let (p, g) = policy_evaluate(sys, cost, &k)?;
        let k_next = policy_improve(&g, m)?;
        let next_stabilizing = sys.is_stabilizing(&k_next)?;
        let step = iterates.last().map(|prev| (&p - &prev.p).frobenius());
        let done = step.is_some_and(|s| riccati::step_converged(s, last_step, tol, p.frobenius()));
        last_step = step.unwrap_or(f64::INFINITY);
        iterates.push(PiIterate {
            index,
            margin: stability_margin(&k, &k_next, n, m),
            p,
            k,
            k_next: k_next.clone(),
            g,
            delta_g_norm: 0.0,
            err_to_opt: None,
            next_stabilizing,
        });
        if done {
            return Ok(ExactRun {
                iterates,
                converged: true,
            });
        }
        k = k_next;
    }
    Ok(ExactRun {
        iterates,
        converged: false,
    })
}

/// Fills `err_to_opt = ||P_i - P*||_F` on every iterate.
pub fn annotate_errors(iterates: &mut [PiIterate], p_star: &SymMatrix) {
    for it in iterates {
        it.err_to_opt = Some((&it.p - p_star).frobenius());
    }
}

/// Per-iteration bound schedule for decaying disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decay {
    /// `norm_bound * ratio^(i-1)`
    Geometric { ratio: f64 },
    /// `norm_bound / (1 + i^2)`
    InverseSquare,
}

/// How `Delta G_i` is generated in a robust run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    None,
    FixedNorm { norm_bound: f64, seed: u64 },
    Decaying { norm_bound: f64, decay: Decay, seed: u64 },
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Result<()> {
        let (bound, decay) = match *self {
            DisturbanceSpec::None => return Ok(()),
            DisturbanceSpec::FixedNorm { norm_bound, .. } => (norm_bound, None),
            DisturbanceSpec::Decaying { norm_bound, decay, .. } => (norm_bound, Some(decay)),
        };
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "disturbance norm_bound must be finite and >= 0, got {bound}"
            )));
        }
        if let Some(Decay::Geometric { ratio }) = decay {
            if !(0.0..1.0).contains(&ratio) {
                return Err(Error::InvalidArgument(format!(
                    "geometric decay ratio must lie in [0, 1), got {ratio}"
                )));
            }
        }
        Ok(())
    }

    /// Frobenius norm of the disturbance injected at iteration `i` (1-based).
    pub fn bound(&self, i: usize) -> f64 {
        match *self {
            DisturbanceSpec::None => 0.0,
            DisturbanceSpec::FixedNorm { norm_bound, .. } => norm_bound,
            DisturbanceSpec::Decaying { norm_bound, decay, .. } => match decay {
                Decay::Geometric { ratio } => norm_bound * ratio.powi(i.saturating_sub(1) as i32),
                Decay::InverseSquare => norm_bound / (1.0 + (i * i) as f64),
            },
        }
    }

    fn seed(&self) -> u64 {
        match *self {
            DisturbanceSpec::None => 0,
            DisturbanceSpec::FixedNorm { seed, .. } | DisturbanceSpec::Decaying { seed, .. } => seed,
        }
    }
}

/// Symmetric Gaussian matrix rescaled to Frobenius norm `spec.bound(i)`.
///
/// The ChaCha stream index is `i`, so the result depends only on
/// `(seed, i)` and is identical across platforms.
pub fn make_disturbance(spec: &DisturbanceSpec, i: usize, order: usize) -> SymMatrix {
    let target = spec.bound(i);
    if target == 0.0 {
        return SymMatrix::zeros(order);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    rng.set_stream(i as u64);
    let raw = DMatrix::from_fn(order, order, |_, _| StandardNormal.sample(&mut rng));
    let sym = SymMatrix::symmetrize(raw);
    let norm = sym.frobenius();
    SymMatrix::symmetrize(sym.into_inner() * (target / norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The gain produced at iteration `index` is not stabilizing.
    StabilityLost { index: usize },
    /// `G22` was numerically singular at iteration `index`.
    SingularBlock { index: usize },
}

/// Empirical input-to-state stability summary of a robust run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssReport {
    /// Largest one-step error ratio over the transient phase.
    pub sigma_hat: f64,
    pub error_trace: Vec<f64>,
    /// Max error over the last five iterates.
    pub ultimate_error: f64,
    /// No iterate violates the stabilization-margin implication.
    pub margins_ok: bool,
}

impl IssReport {
    fn from_iterates(iterates: &[PiIterate]) -> Self {
        let error_trace: Vec<f64> = iterates.iter().filter_map(|it| it.err_to_opt).collect();
        let tail = error_trace.len().saturating_sub(5);
        let ultimate_error = error_trace[tail..].iter().copied().fold(0.0, f64::max);
        // transient: errors well above the ultimate floor
        let sigma_hat = error_trace
            .windows(2)
            .filter(|w| w[0] > 10.0 * ultimate_error && w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max);
        let margins_ok = iterates
            .iter()
            .all(|it| it.delta_g_norm >= it.margin || it.next_stabilizing);
        Self {
            sigma_hat,
            error_trace,
            ultimate_error,
            margins_ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustRun {
    pub iterates: Vec<PiIterate>,
    pub report: IssReport,
    pub status: RunStatus,
}

impl RobustRun {
    pub fn all_stabilizing(&self) -> bool {
        self.status == RunStatus::Completed && self.iterates.iter().all(|it| it.next_stabilizing)
    }
}

/// Policy iteration with disturbed improvement: exact evaluation of `K_i`, then
/// `G_hat = G + Delta G_i` and `K_{i+1} = G_hat22^{-1} G_hat21`.
///
/// A destabilizing or singular update ends the run early with the
/// corresponding [`RunStatus`]; the offending iterate is kept in the trace.
pub fn pi_robust_run(
    sys: &LtiSystem,
    cost: &LqrCost,
    k1_hat: &DMatrix<f64>,
    spec: &DisturbanceSpec,
    n_iter: usize,
    p_star: Option<&SymMatrix>,
) -> Result<RobustRun> {
    spec.validate()?;
    let (n, m) = (sys.n(), sys.m());
    let mut iterates = Vec::with_capacity(n_iter);
    let mut status = RunStatus::Completed;
    let mut k = k1_hat.clone();
    for index in 1..=n_iter {
        let (p, g_exact) = policy_evaluate(sys, cost, &k)?;
        let delta = make_disturbance(spec, index, n + m);
        let g = &g_exact + &delta;
        let k_next = match policy_improve(&g, m) {
            Ok(k_next) => k_next,
            Err(Error::SingularBlock { .. }) => {
                status = RunStatus::SingularBlock { index };
                break;
            }
            Err(e) => return Err(e),
        };
        let next_stabilizing = k_next.iter().all(|v| v.is_finite())
            && lyapunov::is_hurwitz(&sys.closed_loop(&k_next), DEFAULT_HURWITZ_TOL)?;
        iterates.push(PiIterate {
            index,
            err_to_opt: p_star.map(|ps| (&p - ps).frobenius()),
            margin: stability_margin(&k, &k_next, n, m),
            p,
            k,
            k_next: k_next.clone(),
            g,
            delta_g_norm: delta.frobenius(),
            next_stabilizing,
        });
        if !next_stabilizing {
            status = RunStatus::StabilityLost { index };
            break;
        }
        k = k_next;
    }
    let report = IssReport::from_iterates(&iterates);
    Ok(RobustRun {
        iterates,
        report,
        status,
    })
}

/// One exact Kleinman step on the value matrix:
/// `P+ = L_{A(P)}^{-1}(-Q - P B R^{-1} B^T P)` with `A(P) = A - B R^{-1} B^T P`.
pub fn kleinman_map(sys: &LtiSystem, cost: &LqrCost, p: &SymMatrix) -> Result<SymMatrix> {
    let k = riccati::optimal_gain(sys, cost, p);
    let closed = sys.closed_loop(&k);
    let weight = SymMatrix::symmetrize(
        cost.q().matrix() + p.matrix() * sys.b() * cost.r_inv() * sys.b().transpose() * p.matrix(),
    );
    lyapunov::lyap_solve(&closed, &weight)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    /// Max of `||P+ - P*||_F / ||P - P*||_F` over accepted samples.
    pub sigma_hat: f64,
    pub accepted: usize,
    /// Samples whose `A(P)` was not Hurwitz.
    pub excluded: usize,
}

/// Samples `P` uniformly on the Frobenius sphere of `radius` around `p_star`
/// and reports the worst one-step contraction ratio of [`kleinman_map`].
pub fn estimate_contraction(
    sys: &LtiSystem,
    cost: &LqrCost,
    p_star: &SymMatrix,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    if radius == 0.0 {
        // P = P* is a fixed point
        return Ok(ContractionEstimate {
            sigma_hat: 0.0,
            accepted: n_samples,
            excluded: 0,
        });
    }
    let n = sys.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma_hat: f64 = 0.0;
    let (mut accepted, mut excluded) = (0, 0);
    for _ in 0..n_samples {
        let dir = SymMatrix::symmetrize(DMatrix::from_fn(n, n, |_, _| {
            StandardNormal.sample(&mut rng)
        }));
        let scale = radius / dir.frobenius();
        let p = SymMatrix::symmetrize(p_star.matrix() + dir.into_inner() * scale);
        match kleinman_map(sys, cost, &p) {
            Ok(next) => {
                accepted += 1;
                let ratio = (&next - p_star).frobenius() / (&p - p_star).frobenius();
                sigma_hat = sigma_hat.max(ratio);
            }
            Err(Error::NotHurwitz { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ContractionEstimate {
        sigma_hat,
        accepted,
        excluded,
    })
}
