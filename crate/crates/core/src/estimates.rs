//! Weighted second-derivative quantities and maximum-principle test functions
//! evaluated on discrete solutions, with refinement studies of their suprema.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgrid::{self, GridField};
use crate::solver::{self, ProblemSpec, Rhs, SolveReport, SolveStatus, SolverConfig};
use crate::symfun::SumHessianOp;

fn check_nonpositive(u: &GridField) -> Result<()> {
    for i in 0..u.grid().interior_len() {
        if u.value(i) > 0.0 {
            return Err(Error::Domain(format!(
                "u = {} > 0 at interior node {i} ({:?})",
                u.value(i),
                u.grid().coord(i)
            )));
        }
    }
    Ok(())
}

fn interior_map<F>(u: &GridField, f: F) -> GridField
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let grid = u.grid();
    let values: Vec<f64> = (0..grid.interior_len()).into_par_iter().map(f).collect();
    GridField::from_interior(grid, &values, |_| 0.0).expect("length matches the grid")
}

/// `(-u)^exponent · Δu` at interior nodes; zero on the boundary layer.
pub fn pogorelov_quantity(u: &GridField, exponent: f64) -> Result<GridField> {
    check_nonpositive(u)?;
    let lap = fdgrid::laplacian_field(u);
    Ok(interior_map(u, |i| (-u.value(i)).powf(exponent) * lap.value(i)))
}

/// `λ_max (-u)^β exp(ε|Du|²/2 + a|x|²/2)` and its interior argmax.
pub fn eigenvalue_test_function(u: &GridField, beta: f64, eps: f64, a: f64) -> Result<(GridField, usize)> {
    check_nonpositive(u)?;
    let grid = u.grid();
    let phi = interior_map(u, |i| {
        let lam1 = fdgrid::hessian_at(u, i).eigenvalues.values()[0];
        let p2: f64 = fdgrid::gradient_at(u, i).iter().map(|p| p * p).sum();
        let x2: f64 = grid.coord(i).iter().map(|x| x * x).sum();
        lam1 * (-u.value(i)).powf(beta) * (0.5 * eps * p2 + 0.5 * a * x2).exp()
    });
    let (arg, _) = phi.interior_argmax();
    Ok((phi, arg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSumTest {
    #[serde(skip)]
    pub field: Option<GridField>,
    /// Interior argmax among unflagged nodes.
    pub argmax: Option<usize>,
    pub k0: f64,
    /// Nodes with some `κ_j = λ_j + K₀` below `-1e-12 (1 + K₀)`.
    pub flagged: Vec<usize>,
}

impl PowerSumTest {
    pub fn field(&self) -> &GridField {
        self.field.as_ref().expect("set by power_sum_test_function")
    }
}

/// `m log(-u) + log Σ_j κ_j^m + (mN/2)|Du|²` with `κ_j = λ_j + K₀`,
/// `K₀ = n (f_sup/α)^{1/(k-1)}`. Nodes with `u = 0` give `-∞`.
pub fn power_sum_test_function(u: &GridField, op: &SumHessianOp, m: u32, big_n: f64, f_sup: f64) -> Result<PowerSumTest> {
    if op.k() < 2 {
        return Err(Error::Argument("the shift K₀ needs k >= 2".into()));
    }
    if m == 0 {
        return Err(Error::Argument("power m must be positive".into()));
    }
    if !(f_sup > 0.0) {
        return Err(Error::Argument(format!("sup f must be positive, got {f_sup}")));
    }
    if op.n() != u.grid().dim() {
        return Err(Error::Argument("operator and grid dimensions differ".into()));
    }
    for i in 0..u.grid().interior_len() {
        if u.value(i) >= 0.0 {
            return Err(Error::Domain(format!("u = {} >= 0 at interior node {i}", u.value(i))));
        }
    }
    let k0 = op.n() as f64 * (f_sup / op.alpha()).powf(1.0 / (op.k() - 1) as f64);
    let tol = 1e-12 * (1.0 + k0);
    let mf = m as f64;
    let per_node: Vec<(f64, bool)> = (0..u.grid().interior_len())
        .into_par_iter()
        .map(|i| {
            let kappa: Vec<f64> = fdgrid::hessian_at(u, i).eigenvalues.values().iter().map(|l| l + k0).collect();
            let flagged = kappa.iter().any(|&x| x < -tol);
            let top = kappa.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.abs()));
            let log_p = if top > 0.0 {
                let rest: f64 = kappa.iter().map(|x| (x / top).powi(m as i32)).sum();
                top.ln() * mf + rest.ln()
            } else {
                f64::NEG_INFINITY
            };
            let p2: f64 = fdgrid::gradient_at(u, i).iter().map(|p| p * p).sum();
            (mf * (-u.value(i)).ln() + log_p + 0.5 * mf * big_n * p2, flagged)
        })
        .collect();
    let values: Vec<f64> = per_node.iter().map(|v| v.0).collect();
    let flagged: Vec<usize> = per_node.iter().enumerate().filter(|(_, v)| v.1).map(|(i, _)| i).collect();
    let field = GridField::from_interior(u.grid(), &values, |_| 0.0)?;
    let argmax = field.argmax_where(|i| !per_node[i].1 && values[i].is_finite()).map(|(i, _)| i);
    Ok(PowerSumTest {
        field: Some(field),
        argmax,
        k0,
        flagged,
    })
}

/// Which weighted quantity a study tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "tag", content = "value")]
pub enum Quantity {
    /// `(-u)^β Δu`.
    Beta(f64),
    /// `(-u)^{1+δ} Δu`.
    OnePlusDelta(f64),
    /// `(-u) Δu`.
    Unit,
}

impl Quantity {
    pub fn exponent(&self) -> f64 {
        match *self {
            Quantity::Beta(b) => b,
            Quantity::OnePlusDelta(d) => 1.0 + d,
            Quantity::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub h: f64,
    pub cells: Vec<usize>,
    /// Supremum over interior nodes at least `2h` from the boundary.
    pub sup: f64,
    pub argmax: usize,
    pub argmax_coord: Vec<f64>,
    /// Supremum over all interior nodes.
    pub sup_full: f64,
    pub argmax_full: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCheck {
    pub probes: usize,
    /// `min (f^{1/k}(p) + f^{1/k}(q))/2 - f^{1/k}((p+q)/2)`, normalized.
    pub worst_margin: f64,
    pub convex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub quantity: Quantity,
    pub exponent: f64,
    pub per_refinement: Vec<RefinementLevel>,
    /// Last two suprema (at distance `>= 2h`) within 5%.
    pub stable: bool,
    pub stable_full: bool,
    pub relative_change: f64,
    /// Declared convexity of `f^{1/k}` in `p`, spot-checked; set for `OnePlusDelta`.
    pub convexity: Option<ConvexityCheck>,
}

/// Relative tolerance of the stability flag.
pub const STABILITY_TOLERANCE: f64 = 0.05;

/// Solutions on `levels` successively halved grids, each warm-started from
/// the interpolated coarser solution and falling back to a cold solve.
pub fn refine_solutions(spec: &ProblemSpec, levels: usize, config: &SolverConfig) -> Result<Vec<SolveReport>> {
    if levels == 0 {
        return Err(Error::Argument("need at least one level".into()));
    }
    let mut out: Vec<SolveReport> = Vec::with_capacity(levels);
    let mut current = spec.clone();
    for level in 0..levels {
        if level > 0 {
            current = current.on_grid(current.grid().refined())?;
        }
        let mut report = None;
        if let Some(prev) = out.last() {
            let warm = prev.field().interpolate_to(current.grid(), |x| current.boundary_value(x));
            if let Some(warm) = solver::repaired(&current, warm) {
                let r = solver::solve_from(&current, warm, config)?;
                if r.converged() {
                    report = Some(r);
                }
            }
        }
        let r = match report {
            Some(r) => r,
            None => solver::solve(&current, config)?,
        };
        let detail = |status: &str| {
            format!(
                "level {level} (cells {:?}): {status}, residual {:.3e}",
                current.grid().cells(),
                r.final_residual()
            )
        };
        match r.status {
            SolveStatus::Converged => out.push(r),
            SolveStatus::Stalled => return Err(Error::Stalled(detail("stalled"))),
            SolveStatus::ConeBreach => return Err(Error::ConeBreach(detail("cone breach"))),
        }
    }
    Ok(out)
}

/// Suprema of the weighted quantity over solved levels.
pub fn estimate_from(solutions: &[SolveReport], quantity: Quantity) -> Result<EstimateReport> {
    let exponent = quantity.exponent();
    let mut per_refinement = Vec::with_capacity(solutions.len());
    for r in solutions {
        let u = r.field();
        let q = pogorelov_quantity(u, exponent)?;
        let grid = u.grid();
        let (argmax_full, sup_full) = q.interior_argmax();
        let (argmax, sup) = q
            .argmax_where(|i| grid.layers_from_boundary(i) >= 2)
            .unwrap_or((argmax_full, sup_full));
        per_refinement.push(RefinementLevel {
            h: grid.max_h(),
            cells: grid.cells().to_vec(),
            sup,
            argmax,
            argmax_coord: grid.coord(argmax),
            sup_full,
            argmax_full,
        });
    }
    let change = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let (relative_change, full_change) = match per_refinement.as_slice() {
        [.., a, b] => (change(a.sup, b.sup), change(a.sup_full, b.sup_full)),
        _ => (f64::INFINITY, f64::INFINITY),
    };
    Ok(EstimateReport {
        quantity,
        exponent,
        per_refinement,
        stable: relative_change <= STABILITY_TOLERANCE,
        stable_full: full_change <= STABILITY_TOLERANCE,
        relative_change,
        convexity: None,
    })
}

pub fn refinement_study(
    spec: &ProblemSpec,
    quantity: Quantity,
    levels: usize,
    config: &SolverConfig,
) -> Result<EstimateReport> {
    let solutions = refine_solutions(spec, levels, config)?;
    let mut report = estimate_from(&solutions, quantity)?;
    if matches!(quantity, Quantity::OnePlusDelta(_)) {
        report.convexity = Some(convexity_spot_check(spec, 256, 0x0c0e)?);
    }
    Ok(report)
}

/// One refinement, every quantity.
pub fn exponent_sweep(
    spec: &ProblemSpec,
    quantities: &[Quantity],
    levels: usize,
    config: &SolverConfig,
) -> Result<Vec<EstimateReport>> {
    let solutions = refine_solutions(spec, levels, config)?;
    let mut convexity = None;
    quantities
        .iter()
        .map(|&q| {
            let mut r = estimate_from(&solutions, q)?;
            if matches!(q, Quantity::OnePlusDelta(_)) {
                if convexity.is_none() {
                    convexity = Some(convexity_spot_check(spec, 256, 0x0c0e)?);
                }
                r.convexity = convexity.clone();
            }
            Ok(r)
        })
        .collect()
}

/// Random midpoint probes of `p ↦ f(x, u, p)^{1/k}` at interior nodes,
/// `u ∈ [-1, 0]`, `p ∈ [-2, 2]ⁿ`.
pub fn convexity_spot_check(spec: &ProblemSpec, probes: usize, seed: u64) -> Result<ConvexityCheck> {
    let grid = spec.grid();
    let rhs: &Rhs = spec.rhs();
    let inv_k = 1.0 / spec.op().k() as f64;
    let dim = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..probes {
        let x = grid.coord(rng.random_range(0..grid.interior_len()));
        let u = rng.random_range(-1.0..=0.0);
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let g = |v: &[f64]| -> Result<f64> {
            let f = rhs.eval(&x, u, v);
            if !(f > 0.0) {
                return Err(Error::Rhs(format!("f = {f} at x = {x:?}, u = {u}, p = {v:?}")));
            }
            Ok(f.powf(inv_k))
        };
        let (gp, gq, gm) = (g(&p)?, g(&q)?, g(&mid)?);
        let margin = (0.5 * (gp + gq) - gm) / (1.0 + gp.max(gq).max(gm));
        worst = worst.min(margin);
    }
    Ok(ConvexityCheck {
        probes,
        worst_margin: worst,
        convex: worst >= -1e-12,
    })
}
