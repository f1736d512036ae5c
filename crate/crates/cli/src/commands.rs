//! The four experiments. Each returns an exit code and diagnostics; nothing
//! here touches the process state.

use std::path::PathBuf;

use serde::Serialize;
use sumhess_core::estimates::{self, EstimateReport, Quantity};
use sumhess_core::inequalities::{self, LemmaReport, SweepConfig};
use sumhess_core::rigidity::{self, QuadraticCandidate};
use sumhess_core::solver::{self, ProblemSpec, SolveReport, SolveStatus, SolverConfig};
use sumhess_core::{Error as CoreError, Grid, SumHessianOp};

use crate::config::{ConfigError, RunConfig, Subcommand};
use crate::expr::{Expr, ExprError};
use crate::output::{self, Envelope, OutputError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_STALLED: i32 = 2;
pub const EXIT_CONE_BREACH: i32 = 3;
pub const EXIT_CONFIG: i32 = 64;

/// Report names of the identities command, in output order.
pub const REPORT_NAMES: [&str; 10] = [
    "expansion_identities",
    "quotient_concavity",
    "quotient_concavity_weighted",
    "spectral_second_derivative",
    "cone_structure",
    "ordered_products",
    "sum_newton",
    "newton_maclaurin",
    "midpoint_concavity",
    "bounded_spectrum",
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("expression: {0}")]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("cannot write output: {0}")]
    Output(#[from] OutputError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::Stalled(_) | CoreError::LinearSolve(_) | CoreError::Degenerate(_)) => {
                EXIT_STALLED
            }
            CliError::Core(CoreError::ConeBreach(_)) => EXIT_CONE_BREACH,
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub code: i32,
    /// Lines for the diagnostic stream.
    pub diagnostics: Vec<String>,
    /// One-line summaries for standard output.
    pub summary: Vec<String>,
    pub written: Vec<PathBuf>,
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    match cfg.subcommand {
        Subcommand::Identities => identities(cfg),
        Subcommand::Solve => solve(cfg),
        Subcommand::Estimate => estimate(cfg),
        Subcommand::Rigidity => rigidity(cfg),
    }
}

fn sweep_config(cfg: &RunConfig) -> SweepConfig {
    SweepConfig {
        samples: cfg.samples,
        seed: cfg.seed,
        flip_signs: cfg.flip_signs,
        ..SweepConfig::default()
    }
}

fn solver_config(cfg: &RunConfig) -> SolverConfig {
    SolverConfig {
        rtol: cfg.rtol,
        max_iter: cfg.max_iter,
        ..SolverConfig::default()
    }
}

/// Operator, grid, right-hand side and boundary trace of a grid command.
pub fn problem(cfg: &RunConfig) -> Result<ProblemSpec, CliError> {
    if cfg.n > 3 {
        return Err(ConfigError::Invalid(format!("grid commands need n <= 3, got {}", cfg.n)).into());
    }
    let op = SumHessianOp::new(cfg.n, cfg.k, cfg.alpha)?;
    let grid = Grid::cube(cfg.n, cfg.lo, cfg.hi, cfg.cells)?;
    let rhs = Expr::parse(&cfg.rhs)?.to_rhs(cfg.n)?;
    let boundary = Expr::parse(&cfg.boundary)?.to_boundary(cfg.n)?;
    Ok(ProblemSpec::new(op, grid, rhs, boundary)?)
}

fn selected_reports(cfg: &RunConfig) -> Result<Vec<LemmaReport>, CliError> {
    let wanted: Vec<&str> = if cfg.reports.is_empty() {
        REPORT_NAMES.to_vec()
    } else {
        for r in &cfg.reports {
            if !REPORT_NAMES.contains(&r.as_str()) {
                return Err(ConfigError::Invalid(format!("unknown report {r:?}")).into());
            }
        }
        REPORT_NAMES.iter().copied().filter(|n| cfg.reports.iter().any(|r| r == n)).collect()
    };
    let sc = sweep_config(cfg);
    if wanted.len() == REPORT_NAMES.len() {
        return Ok(inequalities::run_all(&sc));
    }
    let mut quotient = None;
    let mut out = Vec::with_capacity(wanted.len());
    for name in wanted {
        let report = match name {
            "expansion_identities" => inequalities::sweep_identities(&sc),
            "quotient_concavity" | "quotient_concavity_weighted" => {
                let (plain, weighted) = quotient.get_or_insert_with(|| inequalities::sweep_quotient_concavity(&sc));
                if name == "quotient_concavity" { plain.clone() } else { weighted.clone() }
            }
            "spectral_second_derivative" => inequalities::sweep_spectral_second_derivative(&sc),
            "cone_structure" => inequalities::sweep_cone_structure(&sc),
            "ordered_products" => inequalities::sweep_ordered_products(&sc),
            "sum_newton" => inequalities::sweep_sum_newton(&sc),
            "newton_maclaurin" => inequalities::sweep_newton_maclaurin(&sc),
            "midpoint_concavity" => inequalities::sweep_midpoint_concavity(&sc),
            "bounded_spectrum" => inequalities::sweep_bounded_spectrum(&sc),
            _ => unreachable!("names are checked against REPORT_NAMES"),
        };
        out.push(report);
    }
    Ok(out)
}

fn identities(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let reports = selected_reports(cfg)?;
    let mut outcome = Outcome::default();
    for r in &reports {
        let path = output::write_json(&cfg.out, &format!("{}.json", r.name), &Envelope { config: cfg, body: r })?;
        outcome.written.push(path);
        outcome.summary.push(format!(
            "{:<28} {} worst margin {:.3e} over {} samples",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.worst_margin,
            r.samples
        ));
        if !r.passed {
            outcome.code = EXIT_PROPERTY;
            let w = r.witnesses.first();
            outcome.diagnostics.push(match w {
                Some(w) => format!(
                    "property failure: {} (worst margin {:.6e} at n={}, k={}, alpha={}, lambda={:?})",
                    r.name, r.worst_margin, w.n, w.k, w.alpha, w.lambda
                ),
                None => format!("property failure: {} (worst margin {:.6e})", r.name, r.worst_margin),
            });
        }
    }
    Ok(outcome)
}

fn status_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Converged => EXIT_PASS,
        SolveStatus::Stalled => EXIT_STALLED,
        SolveStatus::ConeBreach => EXIT_CONE_BREACH,
    }
}

fn solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = problem(cfg)?;
    let report: SolveReport = solver::solve(&spec, &solver_config(cfg))?;
    let mut outcome = Outcome {
        code: status_code(report.status),
        ..Outcome::default()
    };
    outcome.written.push(output::write_json(&cfg.out, "solve.json", &Envelope { config: cfg, body: &report })?);
    if let Some(u) = &report.final_field {
        outcome.written.push(output::write_atomic(&cfg.out, "u.csv", u.to_csv("u", false).as_bytes())?);
    }
    outcome.summary.push(format!(
        "status {:?}, {} Newton steps ({} total), residual {:.3e}, gradient-dependent {}",
        report.status,
        report.iterations,
        report.total_iterations,
        report.final_residual(),
        report.gradient_dependent
    ));
    if outcome.code != EXIT_PASS {
        outcome.diagnostics.push(format!(
            "solver did not converge: {:?}{}",
            report.status,
            report.message.as_deref().map(|m| format!(" ({m})")).unwrap_or_default()
        ));
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct EstimateBody<'a> {
    stable: bool,
    reports: &'a [EstimateReport],
}

fn quantities(cfg: &RunConfig) -> Vec<Quantity> {
    let mut q: Vec<Quantity> = cfg.betas.iter().map(|&b| Quantity::Beta(b)).collect();
    q.extend(cfg.deltas.iter().map(|&d| Quantity::OnePlusDelta(d)));
    q
}

fn estimate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let quantities = quantities(cfg);
    if quantities.is_empty() {
        return Err(ConfigError::Invalid("betas and deltas are both empty".into()).into());
    }
    let spec = problem(cfg)?;
    let solutions = estimates::refine_solutions(&spec, cfg.levels, &solver_config(cfg))?;
    let mut convexity = None;
    let mut reports = Vec::with_capacity(quantities.len());
    for &q in &quantities {
        let mut r = estimates::estimate_from(&solutions, q)?;
        if matches!(q, Quantity::OnePlusDelta(_)) {
            if convexity.is_none() {
                convexity = Some(estimates::convexity_spot_check(&spec, 256, cfg.seed)?);
            }
            r.convexity = convexity.clone();
        }
        reports.push(r);
    }
    let stable = reports.iter().all(|r| r.stable);
    let mut outcome = Outcome {
        code: if stable { EXIT_PASS } else { EXIT_PROPERTY },
        ..Outcome::default()
    };
    for (i, s) in solutions.iter().enumerate() {
        let csv = s.field().to_csv("u", false);
        outcome.written.push(output::write_atomic(&cfg.out, &format!("u_level{i}.csv"), csv.as_bytes())?);
    }
    let body = EstimateBody { stable, reports: &reports };
    outcome.written.push(output::write_json(&cfg.out, "estimate.json", &Envelope { config: cfg, body })?);
    for r in &reports {
        let sups: Vec<String> = r.per_refinement.iter().map(|l| format!("{:.5}", l.sup)).collect();
        outcome.summary.push(format!(
            "exponent {:<6} suprema [{}] change {:.4} {}",
            r.exponent,
            sups.join(", "),
            r.relative_change,
            if r.stable { "stable" } else { "UNSTABLE" }
        ));
        if !r.stable {
            outcome.diagnostics.push(format!(
                "property failure: estimate at exponent {} not stable (relative change {:.4})",
                r.exponent, r.relative_change
            ));
        }
    }
    Ok(outcome)
}

fn rigidity(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let op = SumHessianOp::new(cfg.n, cfg.k, cfg.alpha)?;
    let mut report = rigidity::rigidity_suite(&op, cfg.samples, cfg.seed, cfg.cells)?;
    if cfg.flip_signs {
        // Negative control: the reflected quadratic is concave and must be rejected.
        let c = report.quadratic.a[0][0];
        let q = QuadraticCandidate::isotropic(cfg.n, -c);
        report.quadratic_residual = rigidity::quadratic_residual(&op, &q)?;
        report.growth = rigidity::growth_check(|x: &[f64]| q.eval(x), cfg.n, &report.growth.radii, 0.25 * c)?;
        report.quadratic = q;
        report.passed = report.passed
            && report.quadratic_residual <= rigidity::QUADRATIC_TOLERANCE
            && report.growth.pass;
    }
    let mut outcome = Outcome {
        code: if report.passed { EXIT_PASS } else { EXIT_PROPERTY },
        ..Outcome::default()
    };
    outcome.written.push(output::write_json(&cfg.out, "rigidity.json", &Envelope { config: cfg, body: &report })?);
    let scaling = report.scaling.iter().map(|s| s.max_spectrum_diff).fold(0.0, f64::max);
    outcome.summary.push(format!(
        "example residual {:.3e}, fd orders {:?}, quadratic residual {:.3e}, scaling {:.3e}, growth c_fit {:.4}",
        report.example.worst_residual,
        report.example_fd.orders,
        report.quadratic_residual,
        scaling,
        report.growth.c_fit
    ));
    if !report.passed {
        let mut failed = Vec::new();
        if !report.example.passed {
            failed.push("example residual");
        }
        if report.quadratic_residual > rigidity::QUADRATIC_TOLERANCE {
            failed.push("quadratic residual");
        }
        if scaling > rigidity::SCALING_TOLERANCE {
            failed.push("scaling invariance");
        }
        if !report.growth.pass {
            failed.push("quadratic growth");
        }
        if report.example_growth.pass {
            failed.push("example growth control");
        }
        if failed.is_empty() {
            failed.push("finite-difference order");
        }
        outcome.diagnostics.push(format!("property failure: rigidity ({})", failed.join(", ")));
    }
    Ok(outcome)
}
