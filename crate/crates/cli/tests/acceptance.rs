//! One test per acceptance criterion; each prints a PASS/FAIL line before
//! asserting. Tests take a shared lock so that wall-clock budgets are measured
//! without competing work.

use std::f64::consts::PI;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sumhess_core::estimates::{self, Quantity};
use sumhess_core::inequalities::{self, LemmaReport, SweepConfig};
use sumhess_core::rigidity::{self, QuadraticCandidate};
use sumhess_core::solver::{self, ProblemSpec, Rhs, SolverConfig};
use sumhess_core::{Grid, GridField, SumHessianOp};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, ok: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn sweep_config() -> SweepConfig {
    SweepConfig {
        samples: 10_000,
        ..SweepConfig::default()
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn lemma_line(r: &LemmaReport) -> String {
    format!("{}={}({:.3e})", r.name, if r.passed { "ok" } else { "FAIL" }, r.worst_margin)
}

#[test]
fn criterion_1_identity_suite() {
    let _g = serial();
    let started = Instant::now();
    let cfg = sweep_config();
    let r = inequalities::sweep_identities(&cfg);
    let elapsed = started.elapsed();
    let configs: usize = (2..=6).map(|n| n * 3).sum();
    let every_config = r.components.iter().all(|c| c.samples == configs * cfg.samples);
    let ok = r.passed && r.tolerance == 1e-9 && every_config && elapsed <= Duration::from_secs(30);
    verdict(
        1,
        ok,
        format!(
            "worst scaled margin {:.3e} over {} samples per component, {:.1} s",
            r.worst_margin,
            r.samples,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok, "{r:#?}");
}

#[test]
fn criterion_2_lemma_suite() {
    let _g = serial();
    let cfg = sweep_config();
    let (plain, weighted) = inequalities::sweep_quotient_concavity(&cfg);
    let reports = [
        plain,
        weighted,
        inequalities::sweep_cone_structure(&cfg),
        inequalities::sweep_ordered_products(&cfg),
        inequalities::sweep_sum_newton(&cfg),
        inequalities::sweep_newton_maclaurin(&cfg),
        inequalities::sweep_midpoint_concavity(&cfg),
        inequalities::sweep_bounded_spectrum(&cfg),
    ];
    let margins_ok = reports.iter().all(|r| r.worst_margin >= -1e-9 && r.passed);
    let bounded = reports.last().unwrap();
    let thresholds_finite = !bounded.thresholds.is_empty() && bounded.thresholds.iter().all(|t| t.value.is_finite());
    let ok = margins_ok && thresholds_finite;
    let lines: Vec<String> = reports.iter().map(lemma_line).collect();
    verdict(
        2,
        ok,
        format!("{}; thresholds finite: {thresholds_finite}", lines.join(" ")),
    );
    for r in reports.iter().filter(|r| !r.passed) {
        if let Some(w) = r.witnesses.first() {
            println!("  {} witness: n={} k={} alpha={} lambda={:?}", r.name, w.n, w.k, w.alpha, w.lambda);
        }
    }
    assert!(ok);
}

#[test]
fn criterion_3_spectral_second_derivative() {
    let _g = serial();
    let cfg = SweepConfig::default();
    let r = inequalities::sweep_spectral_second_derivative(&cfg);
    let worst_rel = -r.worst_margin;
    let ok = cfg.spectral_pairs == 500 && r.samples == 500 && worst_rel <= 1e-4;
    verdict(3, ok, format!("worst relative error {worst_rel:.3e} over {} pairs", r.samples));
    assert!(ok, "{r:#?}");
}

const BUMP: f64 = 0.05;

fn bowl(x: &[f64]) -> f64 {
    0.5 * (x[0] * x[0] + x[1] * x[1] - 1.0)
}

fn bumped(x: &[f64]) -> f64 {
    bowl(x) + BUMP * (PI * x[0]).sin() * (PI * x[1]).sin()
}

/// `σ₂ + σ₁` of the analytic Hessian of `bumped`.
fn bumped_rhs(x: &[f64]) -> f64 {
    let (s, c) = ((PI * x[0]).sin() * (PI * x[1]).sin(), (PI * x[0]).cos() * (PI * x[1]).cos());
    let d = 1.0 - BUMP * PI * PI * s;
    let m = BUMP * PI * PI * c;
    d * d - m * m + 2.0 * d
}

#[test]
fn criterion_4_solver_convergence() {
    let _g = serial();
    let started = Instant::now();
    let op = SumHessianOp::new(2, 2, 1.0).unwrap();
    let config = SolverConfig {
        rtol: 1e-13,
        ..SolverConfig::default()
    };
    let mut exact_errors = Vec::new();
    let mut bump_errors = Vec::new();
    let mut converged = true;
    for cells in [15, 31, 63] {
        let grid = Grid::cube(2, -1.0, 1.0, cells).unwrap();
        let spec = ProblemSpec::new(op, grid.clone(), Rhs::constant(3.0), bowl).unwrap();
        let r = solver::solve(&spec, &config).unwrap();
        converged &= r.converged();
        exact_errors.push(r.field().max_interior_diff(&GridField::from_fn(&grid, bowl)));

        let spec = ProblemSpec::new(op, grid.clone(), Rhs::of_x(bumped_rhs), bumped).unwrap();
        let r = solver::solve(&spec, &config).unwrap();
        converged &= r.converged();
        bump_errors.push(r.field().max_interior_diff(&GridField::from_fn(&grid, bumped)));
    }
    let orders: Vec<f64> = bump_errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let elapsed = started.elapsed();
    let ok = converged
        && exact_errors.iter().all(|&e| e <= 1e-11)
        && orders.iter().all(|&p| p >= 1.8)
        && elapsed <= Duration::from_secs(120);
    verdict(
        4,
        ok,
        format!(
            "quadratic errors {}, perturbed errors {}, orders {orders:.3?}, {:.1} s",
            sci(&exact_errors),
            sci(&bump_errors),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_5_estimate_harness() {
    let _g = serial();
    let op = SumHessianOp::new(2, 2, 1.0).unwrap();
    let grid = Grid::cube(2, -1.0, 1.0, 15).unwrap();
    let rhs = Rhs::new(|_, _, p| 3.0 + 0.1 * (p[0] * p[0] + p[1] * p[1]))
        .with_partials(|_, _, _| 0.0, |_, _, p| p.iter().map(|v| 0.2 * v).collect())
        .gradient_dependent();
    let spec = ProblemSpec::new(op, grid, rhs, |_| 0.0).unwrap();
    let config = SolverConfig::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for q in [Quantity::Beta(1.0), Quantity::Beta(1.1), Quantity::Beta(2.0)] {
        let r = estimates::refinement_study(&spec, q, 3, &config).unwrap();
        let sups: Vec<f64> = r.per_refinement.iter().map(|l| l.sup).collect();
        let last = &sups[sups.len() - 2..];
        let within = (last[1] - last[0]).abs() <= 0.05 * last[0].abs().max(last[1].abs());
        ok &= r.stable && within;
        parts.push(format!("exponent {}: suprema {sups:.4?} stable={}", r.exponent, r.stable));
    }
    verdict(5, ok, parts.join("; "));
    assert!(ok);
}

#[test]
fn criterion_6_closed_form_example() {
    let _g = serial();
    let sweep = rigidity::example_sweep(10_000, 0x15);
    let fd = rigidity::example_fd_check(rigidity::FD_HALF_WIDTH, &[15, 31, 63]).unwrap();
    let second_order = fd.orders.iter().all(|&p| p >= 1.8);
    let ok = sweep.samples == 10_000 && sweep.worst_residual <= 1e-9 && sweep.min_sigma1 > 0.0 && second_order;
    verdict(
        6,
        ok,
        format!(
            "worst residual {:.3e}, min sigma1 {:.3e}, hessian errors {}, orders {:.3?}",
            sweep.worst_residual,
            sweep.min_sigma1,
            sci(&fd.errors),
            fd.orders
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_rigidity_shell() {
    let _g = serial();
    let mut worst_residual = 0.0f64;
    let mut worst_scaling = 0.0f64;
    for (n, k, alpha) in [(2, 1, 1.0), (2, 2, 1.0), (2, 2, 0.1), (3, 2, 1.0), (3, 3, 10.0), (3, 3, 0.1)] {
        let op = SumHessianOp::new(n, k, alpha).unwrap();
        let q: QuadraticCandidate = rigidity::isotropic_solution(&op);
        worst_residual = worst_residual.max(rigidity::quadratic_residual(&op, &q).unwrap());
        let grid_y = Grid::cube(n, -1.0, 1.0, 15).unwrap();
        for r in [2.0, 3.0, 4.0] {
            let s = rigidity::scaling_invariance_check(|x: &[f64]| q.eval(x), &grid_y, r).unwrap();
            worst_scaling = worst_scaling.max(s.max_spectrum_diff);
        }
    }
    let ok = worst_residual <= 1e-12 && worst_scaling <= 1e-10;
    verdict(
        7,
        ok,
        format!("worst quadratic residual {worst_residual:.3e}, worst spectrum change {worst_scaling:.3e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_8_negative_controls() {
    let _g = serial();
    let bin = env!("CARGO_BIN_EXE_sumhess");
    let dir = tempfile::tempdir().unwrap();
    let flipped = Command::new(bin)
        .args(["identities", "--flip-signs", "--samples", "20", "--out"])
        .arg(dir.path().join("flip"))
        .output()
        .unwrap();
    let flip_stderr = String::from_utf8_lossy(&flipped.stderr);
    let negative = Command::new(bin)
        .args(["solve", "--rhs", "-1", "--out"])
        .arg(dir.path().join("neg"))
        .output()
        .unwrap();
    let flip_code = flipped.status.code();
    let neg_code = negative.status.code();
    let ok = flip_code == Some(1)
        && flip_stderr.contains("property failure")
        && neg_code == Some(64)
        && !dir.path().join("neg").join("solve.json").exists();
    verdict(
        8,
        ok,
        format!("sign-flipped oracle exit {flip_code:?}, negative rhs exit {neg_code:?}"),
    );
    assert!(ok, "{flip_stderr}");
}
