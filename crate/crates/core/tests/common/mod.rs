#![allow(dead_code)]

use lqr_rpi::lyapunov;
use lqr_rpi::matops::{self, SymMatrix};
use lqr_rpi::riccati::{controllability_matrix, LqrCost, LtiSystem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let g = gaussian(rng, n, n);
    SymMatrix::new((&g + g.transpose()) * 0.5).unwrap()
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let g = gaussian(rng, n, n);
    SymMatrix::new(&g * g.transpose()).unwrap()
}

/// Gaussian matrix shifted so its spectral abscissa lies in [-1.5, -0.5].
pub fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    let alpha = lyapunov::spectral_abscissa(&g).unwrap();
    let margin = rng.random_range(0.5..1.5);
    g - DMatrix::identity(n, n) * (alpha + margin)
}

/// Random controllable pair with a reasonably conditioned controllability
/// matrix; `A` is generally not Hurwitz.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LtiSystem {
    loop {
        let a = gaussian(rng, n, n) / (n as f64).sqrt();
        let b = gaussian(rng, n, m);
        let sv = controllability_matrix(&a, &b).singular_values();
        if sv.min() / sv.max() < 1e-2 {
            continue;
        }
        if let Ok(sys) = LtiSystem::new(a, b) {
            return sys;
        }
    }
}

pub fn stirred_tank() -> (LtiSystem, LqrCost) {
    let sys = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[-21.0, -20.0, 9.0, 8.0]),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    (sys, LqrCost::identity(2, 2))
}

pub fn scalar_problem() -> (LtiSystem, LqrCost) {
    let sys = LtiSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0))
        .unwrap();
    (sys, LqrCost::identity(1, 1))
}

fn integrand(x: &DMatrix<f64>, z: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let e = (x * t).exp();
    e.transpose() * z * e
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    a: f64,
    b: f64,
    fa: &DMatrix<f64>,
    fm: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    whole: &DMatrix<f64>,
    tol: f64,
    depth: usize,
) -> DMatrix<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = integrand(x, z, lm);
    let frm = integrand(x, z, rm);
    let left = (fa + &flm * 4.0 + fm) * ((m - a) / 6.0);
    let right = (fm + &frm * 4.0 + fb) * ((b - m) / 6.0);
    let both = &left + &right;
    let err = (&both - whole).norm();
    if depth == 0 || err <= 15.0 * tol {
        return &both + (&both - whole) / 15.0;
    }
    simpson(x, z, a, m, fa, &flm, fm, &left, 0.5 * tol, depth - 1)
        + simpson(x, z, m, b, fm, &frm, fb, &right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `int_0^T e^{X^T t} Z e^{X t} dt` with
/// `T = 40 / |max Re lambda(X)|`.
pub fn lyap_quadrature(x: &DMatrix<f64>, z: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let alpha = lyapunov::spectral_abscissa(x).unwrap();
    assert!(alpha < 0.0);
    let horizon = 40.0 / alpha.abs();
    // split the horizon so early fast transients are resolved
    let pieces = 40;
    let mut total = DMatrix::zeros(x.nrows(), x.ncols());
    for k in 0..pieces {
        let a = horizon * k as f64 / pieces as f64;
        let b = horizon * (k + 1) as f64 / pieces as f64;
        let fa = integrand(x, z, a);
        let fb = integrand(x, z, b);
        let fm = integrand(x, z, 0.5 * (a + b));
        let whole = (&fa + &fm * 4.0 + &fb) * ((b - a) / 6.0);
        total += simpson(x, z, a, b, &fa, &fm, &fb, &whole, tol / pieces as f64, 30);
    }
    total
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymMatrix::new(m.clone()).unwrap().min_eigenvalue()
}

pub fn spectral(m: &DMatrix<f64>) -> f64 {
    matops::spectral_norm(m)
}

