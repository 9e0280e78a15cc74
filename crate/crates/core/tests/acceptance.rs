//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use lqr_rpi::cli::{self, Mode, RunOptions};
use lqr_rpi::datadriven::{
    pi_data_run, rank_condition, CollectionPlan, SignalSpec, SinusoidSignal,
};
use lqr_rpi::lyapunov::{self, PerturbationBounds};
use lqr_rpi::matops::SymMatrix;
use lqr_rpi::policy_iteration::{
    estimate_contraction, pi_exact_run, pi_robust_run, Decay, DisturbanceSpec, RobustRun,
};
use lqr_rpi::riccati::{are_residual, find_stabilizing_gain, solve_are, AreSolution, LqrCost};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn tank_solution() -> AreSolution {
    let (sys, cost) = stirred_tank();
    solve_are(&sys, &cost, &DMatrix::zeros(2, 2), 1e-12, 200).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (sys, cost) = scalar_problem();
    let s = solve_are(&sys, &cost, &DMatrix::zeros(1, 1), 1e-12, 200).map_err(|e| e.to_string())?;
    let scalar_err = (s.p_star[(0, 0)] - (2f64.sqrt() - 1.0)).abs();
    let (sys, cost) = stirred_tank();
    let t = solve_are(&sys, &cost, &DMatrix::zeros(2, 2), 1e-12, 200).map_err(|e| e.to_string())?;
    let residual = are_residual(&sys, &cost, &t.p_star).unwrap().frobenius();
    let elapsed = start.elapsed();
    check!(scalar_err < 1e-10, "scalar p* off by {scalar_err:.3e}");
    check!(residual < 1e-10, "stirred-tank residual {residual:.3e}");
    check!(elapsed < Duration::from_secs(1), "runtime {elapsed:?}");
    Ok(format!(
        "|p*-(sqrt2-1)| = {scalar_err:.1e}, tank residual = {residual:.1e}, {elapsed:.2?}"
    ))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut abs_violations = 0;
    let mut worst_iters = 0;
    for seed in 0..50u64 {
        let mut r = rng(1000 + seed);
        let n = 1 + (seed % 5) as usize;
        let m = 1 + (seed / 5 % 2) as usize;
        let sys = random_system(&mut r, n, m);
        let cost = LqrCost::identity(n, m);
        let k1 = find_stabilizing_gain(&sys).map_err(|e| format!("seed {seed}: {e}"))?;
        let run = pi_exact_run(&sys, &cost, &k1, 1e-12, 30).map_err(|e| format!("seed {seed}: {e}"))?;
        // oracle: Kleinman from a different stabilizing gain, residual-certified
        let k_alt = &run.iterates.last().unwrap().k_next * 2.0;
        check!(sys.is_stabilizing(&k_alt).unwrap(), "seed {seed}: alternate start not stabilizing");
        let star = solve_are(&sys, &cost, &k_alt, 1e-12, 200).map_err(|e| format!("seed {seed}: {e}"))?;
        let scale = star.p_star.frobenius().max(1.0);
        let residual = are_residual(&sys, &cost, &star.p_star).unwrap().frobenius();
        check!(residual < 1e-9 * scale * scale, "seed {seed}: oracle residual {residual:.2e}");
        let slack = 1e-9 * scale;
        let mut hit = None;
        for (i, it) in run.iterates.iter().enumerate() {
            check!(sys.is_stabilizing(&it.k).unwrap(), "seed {seed}: K_{} not stabilizing", it.index);
            let gap = (&it.p - &star.p_star).min_eigenvalue();
            check!(gap >= -slack, "seed {seed}: P_{} - P* min eig {gap:.2e}", it.index);
            abs_violations += usize::from(gap < -1e-9);
            if let Some(next) = run.iterates.get(i + 1) {
                let dec = (&it.p - &next.p).min_eigenvalue();
                check!(dec >= -slack, "seed {seed}: P_{} - P_{} min eig {dec:.2e}", it.index, next.index);
                abs_violations += usize::from(dec < -1e-9);
            }
            if hit.is_none() && (&it.p - &star.p_star).frobenius() < 1e-8 * scale {
                hit = Some(it.index);
            }
        }
        let Some(iters) = hit else {
            return Err(format!("seed {seed}: no convergence within 30 iterations"));
        };
        worst_iters = worst_iters.max(iters);
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(30), "runtime {elapsed:?}");
    Ok(format!(
        "50 systems, max iterations to 1e-8 = {worst_iters}, PSD slack scaled by max(1,|P*|_F) \
         ({abs_violations} entries below -1e-9 absolute), {elapsed:.2?}"
    ))
}

fn criterion_3() -> Outcome {
    let (sys, cost) = stirred_tank();
    let star = tank_solution();
    let big = estimate_contraction(&sys, &cost, &star.p_star, 1e-3, 200, 11).map_err(|e| e.to_string())?;
    let small = estimate_contraction(&sys, &cost, &star.p_star, 1e-4, 200, 12).map_err(|e| e.to_string())?;
    let quotient = big.sigma_hat / small.sigma_hat;
    check!(big.sigma_hat < 1.0 && small.sigma_hat < 1.0, "ratios {:.3e}, {:.3e}", big.sigma_hat, small.sigma_hat);
    check!((2.0..=50.0).contains(&quotient), "quotient {quotient:.3}");
    Ok(format!(
        "sigma(1e-3) = {:.3e}, sigma(1e-4) = {:.3e}, quotient = {quotient:.2}",
        big.sigma_hat, small.sigma_hat
    ))
}

struct RobustSuite {
    fixed: Vec<(f64, Vec<RobustRun>)>,
    decaying: Vec<RobustRun>,
}

fn near_gain() -> DMatrix<f64> {
    let (sys, _) = stirred_tank();
    cli::commands::near_gain(&sys, &tank_solution().k_star, 0.05, 42).unwrap()
}

fn robust_suite() -> Result<RobustSuite, String> {
    let (sys, cost) = stirred_tank();
    let star = tank_solution();
    let k1 = near_gain();
    let mut fixed = Vec::new();
    for norm_bound in [1e-4, 1e-3, 1e-2] {
        let runs = (0..5u64)
            .map(|seed| {
                let spec = DisturbanceSpec::FixedNorm { norm_bound, seed };
                pi_robust_run(&sys, &cost, &k1, &spec, 30, Some(&star.p_star)).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        fixed.push((norm_bound, runs));
    }
    let mut decaying = Vec::new();
    for decay in [Decay::Geometric { ratio: 0.5 }, Decay::InverseSquare] {
        for seed in 0..5u64 {
            let spec = DisturbanceSpec::Decaying { norm_bound: 1e-2, decay, seed };
            decaying.push(
                pi_robust_run(&sys, &cost, &k1, &spec, 50, Some(&star.p_star)).map_err(|e| e.to_string())?,
            );
        }
    }
    Ok(RobustSuite { fixed, decaying })
}

fn criterion_4(suite: &RobustSuite) -> Outcome {
    let mut means = Vec::new();
    for (norm_bound, runs) in &suite.fixed {
        for run in runs {
            check!(run.all_stabilizing(), "norm {norm_bound:.0e}: {:?}", run.status);
            let first = run.report.error_trace[0];
            let sup = run.report.error_trace.iter().copied().fold(0.0, f64::max);
            check!(sup.is_finite() && sup <= 10.0 * (first + run.report.ultimate_error),
                "norm {norm_bound:.0e}: trace not bounded (sup {sup:.3e}, first {first:.3e})");
        }
        means.push(runs.iter().map(|r| r.report.ultimate_error).sum::<f64>() / runs.len() as f64);
    }
    check!(means.windows(2).all(|w| w[0] <= w[1]), "mean ultimate errors not nondecreasing: {means:?}");
    let mut worst_decay: f64 = 0.0;
    for run in &suite.decaying {
        check!(run.all_stabilizing(), "decaying run: {:?}", run.status);
        worst_decay = worst_decay.max(*run.report.error_trace.last().unwrap());
    }
    check!(worst_decay < 1e-6, "decaying run final error {worst_decay:.3e}");
    Ok(format!(
        "mean ultimate error {:.2e} <= {:.2e} <= {:.2e}, decaying final error <= {worst_decay:.1e}",
        means[0], means[1], means[2]
    ))
}

fn criterion_5(suite: &RobustSuite) -> Outcome {
    let runs: Vec<&RobustRun> = suite
        .fixed
        .iter()
        .flat_map(|(_, runs)| runs.iter())
        .chain(suite.decaying.iter())
        .collect();
    let mut hypothesis_hits = 0;
    let mut violations = 0;
    let mut scheduled = 0;
    let mut worst_ratio: f64 = 0.0;
    for run in &runs {
        for it in &run.iterates {
            if it.delta_g_norm < it.margin {
                hypothesis_hits += 1;
                violations += usize::from(!it.next_stabilizing);
            }
        }
        let on_schedule = run
            .iterates
            .iter()
            .all(|it| it.delta_g_norm < it.margin / (1.0 + (it.index * it.index) as f64));
        if on_schedule {
            scheduled += 1;
            let p1 = run.iterates[0].p.frobenius();
            let ratio = run.iterates.iter().map(|it| it.p.frobenius()).fold(0.0, f64::max) / p1;
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    check!(violations == 0, "{violations} margin violations");
    check!(scheduled > 0, "no run satisfied the (1+i^2)^-1 a_i schedule");
    check!(worst_ratio <= 6.0, "|P_i|_F / |P_1|_F reached {worst_ratio:.3}");
    Ok(format!(
        "{hypothesis_hits} iterates under the margin, 0 violations; {scheduled} scheduled runs, \
         max |P_i|/|P_1| = {worst_ratio:.3}"
    ))
}

struct Deviation {
    p: f64,
    k: f64,
    rank_ok: bool,
}

fn data_vs_exact(substeps: usize) -> Result<Deviation, String> {
    let (sys, cost) = stirred_tank();
    let k1 = DMatrix::zeros(2, 2);
    let exact = pi_exact_run(&sys, &cost, &k1, 0.0, 6).map_err(|e| e.to_string())?;
    let u = SinusoidSignal::sampled(
        SignalSpec { amplitude: 0.2, count: 100, range: [-500.0, 500.0], seed: 5 },
        2,
    )
    .map_err(|e| e.to_string())?;
    let plan = CollectionPlan { x0: DVector::from_element(2, 1.0), samples: 140, dt: 0.1, substeps };
    let data = pi_data_run(&sys, &cost, &k1, &u, None, &plan, 6, None).map_err(|e| e.to_string())?;
    let pairs = || exact.iterates.iter().zip(&data.iterates);
    Ok(Deviation {
        p: pairs().map(|(e, d)| (&e.p - &d.p_hat).frobenius()).fold(0.0, f64::max),
        k: pairs().map(|(e, d)| (&e.k_next - &d.k_hat_next).norm()).fold(0.0, f64::max),
        rank_ok: rank_condition(&data.data, None),
    })
}

fn criterion_6() -> Outcome {
    let coarse = data_vs_exact(50)?;
    let fine = data_vs_exact(100)?;
    let order = (coarse.p / fine.p).log2();
    check!(coarse.rank_ok, "rank condition fails");
    check!(coarse.p < 1e-4, "max |P_i - P_i(exact)|_F over 6 iterations {:.3e}", coarse.p);
    check!(order >= 3.0, "observed order {order:.2}");
    Ok(format!(
        "rank ok, max P deviation {:.2e} (substeps 50), {:.2e} (substeps 100), order {order:.2}; \
         gain deviation {:.2e} / {:.2e}",
        coarse.p, fine.p, coarse.k, fine.k
    ))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for seed in [1u64, 2, 3] {
        let start = Instant::now();
        let opts = RunOptions { out: Some(dir.path().join(format!("fig1_{seed}"))), seed: Some(seed) };
        let summary = cli::execute(Mode::Fig1, r#"{"mode": "fig1"}"#, &opts).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        check!(elapsed < Duration::from_secs(60), "seed {seed}: runtime {elapsed:?}");
        check!(summary.stabilizing_all == Some(true), "seed {seed}: a cell lost stabilization");
        check!(summary.details["ordering_near"] == true, "seed {seed}: near-gain ordering fails");
        check!(summary.details["ordering_far"] == true, "seed {seed}: far-gain ordering fails");
        check!(summary.exit_code == 0, "seed {seed}: exit code {}", summary.exit_code);
        let cells = summary.details["cells"].as_array().unwrap();
        let fin: Vec<String> = cells
            .iter()
            .map(|c| format!("{:.1e}", c["final_err_to_opt"].as_f64().unwrap()))
            .collect();
        notes.push(format!("seed {seed} [{}] {elapsed:.1?}", fin.join(" ")));
    }
    Ok(notes.join("; "))
}

struct LyapTally {
    quad_worst: f64,
    probes: usize,
    scaled_checked: usize,
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut t = LyapTally { quad_worst: 0.0, probes: 0, scaled_checked: 0 };
    for seed in 0..100u64 {
        let mut r = rng(5000 + seed);
        let n = 1 + (seed % 4) as usize;
        let x = random_hurwitz(&mut r, n);
        let z = random_psd(&mut r, n);
        let y = lyapunov::lyap_solve(&x, &z).map_err(|e| e.to_string())?;

        // (ii) integral representation
        let quad = lyap_quadrature(&x, z.matrix(), 1e-8);
        let dev = (&quad - y.matrix()).norm() / y.frobenius().max(1.0);
        t.quad_worst = t.quad_worst.max(dev);
        check!(dev < 1e-6, "seed {seed}: quadrature mismatch {dev:.3e}");

        // (i) operator norm bound
        let bound = lyapunov::lyap_inverse_norm(&x).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let probe = random_sym(&mut r, n);
            let yp = lyapunov::lyap_solve(&x, &probe).unwrap();
            t.probes += 1;
            check!(yp.frobenius() <= bound * probe.frobenius() * (1.0 + 1e-9), "seed {seed}: norm bound violated");
        }

        // (v) monotonicity
        let d = random_psd(&mut r, n);
        let yd = lyapunov::lyap_solve(&x, &(&z + &d)).unwrap();
        let gap = (&yd - &y).min_eigenvalue();
        check!(gap >= -1e-9, "seed {seed}: monotonicity gap {gap:.3e}");

        // (iii), (iv) perturbation bounds
        for eps in [1e-6, 1e-4, 1e-2] {
            let dx = gaussian(&mut r, n, n) * eps;
            let dz = SymMatrix::new(random_sym(&mut r, n).into_inner() * eps).unwrap();
            if !lyapunov::is_hurwitz(&(&x + &dx), 1e-9).unwrap() {
                continue;
            }
            let b = PerturbationBounds::evaluate(&x, &z, &dx, &dz).map_err(|e| e.to_string())?;
            check!(b.delta_y_spectral <= b.spectral_bound + 1e-9, "seed {seed}: bound (iii) violated");
            if b.scaled_applicable() {
                t.scaled_checked += 1;
                check!(b.delta_y_frobenius <= b.scaled_bound + 1e-9, "seed {seed}: bound (iv) violated");
            }
        }
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(60), "runtime {elapsed:?}");
    Ok(format!(
        "100 instances, worst quadrature deviation {:.1e}, {} norm probes, (iv) applicable {} times, {elapsed:.2?}",
        t.quad_worst, t.probes, t.scaled_checked
    ))
}

fn criterion_9() -> Outcome {
    let configs = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases = [
        (Mode::Are, "scalar_are.json"),
        (Mode::Are, "tank_are.json"),
        (Mode::PiExact, "scalar_pi_exact.json"),
        (Mode::PiExact, "tank_pi_exact.json"),
        (Mode::PiRobust, "tank_pi_robust.json"),
        (Mode::PiRobust, "tank_pi_robust_none.json"),
        (Mode::PiData, "tank_pi_data.json"),
        (Mode::Fig1, "fig1.json"),
    ];
    let mut compared = 0;
    for (mode, name) in cases {
        let text = std::fs::read_to_string(configs.join(name)).map_err(|e| e.to_string())?;
        let mut csvs = Vec::new();
        for rep in ["a", "b"] {
            let opts = RunOptions { out: Some(dir.path().join(format!("{name}.{rep}"))), seed: None };
            let summary = cli::execute(mode, &text, &opts).map_err(|e| format!("{name}: {e}"))?;
            let files: Vec<Vec<u8>> = summary
                .outputs
                .iter()
                .filter(|f| f.ends_with(".csv"))
                .map(|f| std::fs::read(f).unwrap())
                .collect();
            csvs.push(files);
        }
        check!(!csvs[0].is_empty(), "{name}: no CSV output");
        check!(csvs[0] == csvs[1], "{name}: CSV outputs differ between runs");
        compared += csvs[0].len();
    }
    Ok(format!("{} configs, {compared} CSV files byte-identical", cases.len()))
}

fn run(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
    let elapsed = start.elapsed();
    match outcome {
        Ok(detail) => {
            println!("criterion {label}: PASS ({detail}) [{elapsed:.2?}]");
            true
        }
        Err(reason) => {
            println!("criterion {label}: FAIL ({reason}) [{elapsed:.2?}]");
            false
        }
    }
}

fn main() -> ExitCode {
    let suite = robust_suite();
    let results = [
        run("1 ARE oracle", criterion_1),
        run("2 exact PI properties", criterion_2),
        run("3 quadratic contraction", criterion_3),
        run("4 ISS under disturbed G", || criterion_4(suite.as_ref().map_err(Clone::clone)?)),
        run("5 margin safeguard", || criterion_5(suite.as_ref().map_err(Clone::clone)?)),
        run("6 off-policy equivalence", criterion_6),
        run("7 four-cell experiment", criterion_7),
        run("8 Lyapunov operator properties", criterion_8),
        run("9 CLI determinism", criterion_9),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
