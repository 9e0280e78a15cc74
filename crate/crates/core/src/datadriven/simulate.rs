use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::signal::SinusoidSignal;
use super::TrajectoryData;
use crate::error::{Error, Result};
use crate::matops;
use crate::riccati::LtiSystem;

/// Sampling grid and initial condition for one data-collection run.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionPlan {
    pub x0: DVector<f64>,
    /// Number of sampling intervals `M`.
    pub samples: usize,
    pub dt: f64,
    /// RK4 steps per sampling interval.
    pub substeps: usize,
}

pub const DEFAULT_SUBSTEPS: usize = 20;

const BLOWUP: f64 = 1e150;

/// Integrates `dx/dt = A x + B u(t) + w(t)` together with the running
/// integrals of `x (x) x` and `x (x) u` using classical RK4, and assembles
/// the data matrices on the grid `t_j = j dt`.
///
/// The integrals restart at every grid point, so row `j` of `I_xx` is
/// `int_{t_j}^{t_{j+1}} x (x) x`.
pub fn simulate_collect(
    sys: &LtiSystem,
    u: &SinusoidSignal,
    w: Option<&SinusoidSignal>,
    plan: &CollectionPlan,
) -> Result<TrajectoryData> {
    let (n, m) = (sys.n(), sys.m());
    if plan.x0.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, expected {n}", plan.x0.len())));
    }
    if u.channels() != m {
        return Err(Error::Dimension(format!("input has {} channels, expected {m}", u.channels())));
    }
    if let Some(w) = w {
        if w.channels() != n {
            return Err(Error::Dimension(format!(
                "disturbance has {} channels, expected {n}",
                w.channels()
            )));
        }
    }
    if !(plan.dt > 0.0) || plan.samples == 0 || plan.substeps == 0 {
        return Err(Error::InvalidArgument(
            "collection needs dt > 0, M >= 1 and substeps >= 1".into(),
        ));
    }

    let a = sys.a();
    let b = sys.b();
    let (nxx, nxu) = (n * n, n * m);
    let dim = n + nxx + nxu;
    let rhs = |t: f64, z: &DVector<f64>| -> DVector<f64> {
        let x = z.rows(0, n);
        let ut = u.eval(t);
        let mut dx = a * x + b * &ut;
        if let Some(w) = w {
            dx += w.eval(t);
        }
        let mut out = DVector::zeros(dim);
        out.rows_mut(0, n).copy_from(&dx);
        for i in 0..n {
            for j in 0..n {
                out[n + i * n + j] = x[i] * x[j];
            }
            for k in 0..m {
                out[n + nxx + i * m + k] = x[i] * ut[k];
            }
        }
        out
    };

    let big_m = plan.samples;
    let h = plan.dt / plan.substeps as f64;
    let mut delta_xx = DMatrix::zeros(big_m, matops::svec_len(n));
    let mut i_xx = DMatrix::zeros(big_m, nxx);
    let mut i_xu = DMatrix::zeros(big_m, nxu);
    let mut states = Vec::with_capacity(big_m + 1);

    let mut x = plan.x0.clone();
    states.push(x.clone());
    for j in 0..big_m {
        let t0 = j as f64 * plan.dt;
        let mut z = DVector::zeros(dim);
        z.rows_mut(0, n).copy_from(&x);
        for s in 0..plan.substeps {
            let t = t0 + s as f64 * h;
            let k1 = rhs(t, &z);
            let k2 = rhs(t + 0.5 * h, &(&z + &k1 * (0.5 * h)));
            let k3 = rhs(t + 0.5 * h, &(&z + &k2 * (0.5 * h)));
            let k4 = rhs(t + h, &(&z + &k3 * h));
            z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if z.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP) {
                return Err(Error::Divergence { time: t + h });
            }
        }
        let x_next: DVector<f64> = z.rows(0, n).into_owned();
        let row = matops::svec_outer(&x_next) - matops::svec_outer(&x);
        delta_xx.row_mut(j).copy_from(&row.transpose());
        i_xx.row_mut(j).copy_from(&z.rows(n, nxx).transpose());
        i_xu.row_mut(j).copy_from(&z.rows(n + nxx, nxu).transpose());
        states.push(x_next.clone());
        x = x_next;
    }

    let mut seeds = BTreeMap::new();
    seeds.insert("input".to_string(), u.spec().seed);
    if let Some(w) = w {
        seeds.insert("disturbance".to_string(), w.spec().seed);
    }
    Ok(TrajectoryData {
        delta_xx,
        i_xx,
        i_xu,
        dt: plan.dt,
        n,
        m,
        states,
        seeds,
    })
}
