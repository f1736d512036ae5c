use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumhess"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SUMHESS_THREADS")
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn solve_constant_rhs_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--n", "2", "--k", "2", "--alpha", "1", "--rhs", "3", "--cells", "33"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("solve.json"));
    assert_eq!(report["status"], "converged");
    assert_eq!(report["gradient_dependent"], false);
    assert_eq!(report["config"]["cells"], 33);
    let csv = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,u"));
    assert_eq!(csv.lines().count(), 1 + 35 * 35);
}

#[test]
fn gradient_dependent_rhs_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--rhs", "3+0.1*g2", "--cells", "33"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("solve.json"));
    assert_eq!(report["gradient_dependent"], true);
    assert_eq!(report["partials"], "analytic");
}

#[test]
fn config_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["solve", "--rhs", "-1"][..],
        &["solve", "--rhs", "3/x"],
        &["solve", "--k", "3"],
        &["solve", "--boundary", "u"],
        &["identities", "--reports", "nothing"],
        &["rigidity", "--n", "4", "--k", "2"],
        &["estimate", "--betas", "1,x"],
        &["--unknown-flag"],
    ] {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(64), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!dir.path().join("solve.json").exists());
    let bad = Command::new(env!("CARGO_BIN_EXE_sumhess"))
        .args(["rigidity", "--out"])
        .arg(dir.path())
        .env("SUMHESS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(64));
}

#[test]
fn stalled_solve_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--rhs", "3", "--max-iter", "1", "--rtol", "1e-15", "--cells", "7"], dir.path());
    let code = out.status.code();
    assert!(code == Some(2) || code == Some(3), "{code:?}");
}

#[test]
fn identities_negative_control_and_failing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["identities", "--samples", "30", "--flip-signs"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("property failure: quotient_concavity"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 10);

    let dir = tempfile::tempdir().unwrap();
    let names = "expansion_identities,quotient_concavity,cone_structure,sum_newton,newton_maclaurin";
    let out = run(&["identities", "--samples", "100", "--reports", names], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("sum_newton.json"));
    assert_eq!(r["passed"], true);
    assert_eq!(r["config"]["samples"], 100);

    let out = run(&["identities", "--samples", "200", "--reports", "ordered_products"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ordered_products"));
}

#[test]
fn fixed_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["identities", "--samples", "40", "--seed", "7", "--reports", "midpoint_concavity,bounded_spectrum"];
    run(&args, dir.path());
    let first = std::fs::read(dir.path().join("bounded_spectrum.json")).unwrap();
    let first_mid = std::fs::read(dir.path().join("midpoint_concavity.json")).unwrap();
    run(&args, dir.path());
    assert_eq!(std::fs::read(dir.path().join("bounded_spectrum.json")).unwrap(), first);
    assert_eq!(std::fs::read(dir.path().join("midpoint_concavity.json")).unwrap(), first_mid);

    let solve = ["solve", "--rhs", "3+0.1*g2", "--cells", "15"];
    run(&solve, dir.path());
    let a = std::fs::read(dir.path().join("solve.json")).unwrap();
    let csv = std::fs::read(dir.path().join("u.csv")).unwrap();
    run(&solve, dir.path());
    assert_eq!(std::fs::read(dir.path().join("solve.json")).unwrap(), a);
    assert_eq!(std::fs::read(dir.path().join("u.csv")).unwrap(), csv);
}

#[test]
fn estimate_and_rigidity_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["estimate", "--rhs", "3+0.1*g2", "--betas", "1,1.1,2", "--deltas", ""], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("estimate.json"));
    assert_eq!(r["stable"], true);
    assert_eq!(r["reports"].as_array().unwrap().len(), 3);
    for i in 0..3 {
        assert!(dir.path().join(format!("u_level{i}.csv")).exists());
    }

    let out = run(&["rigidity", "--samples", "2000"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("rigidity.json"))["passed"], true);
    let out = run(&["rigidity", "--samples", "2000", "--flip-signs"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# solve from file\nsubcommand = solve\nrhs = 2 + x*x\ncells = 9\nthreads = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sumhess"))
        .arg("--config")
        .arg(&cfg)
        .args(["--cells", "11", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("o/solve.json"));
    assert_eq!(r["config"]["cells"], 11);
    assert_eq!(r["config"]["rhs"], "2 + x*x");
}
