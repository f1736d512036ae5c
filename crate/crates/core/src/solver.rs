//! Damped Newton for the discrete Dirichlet problem
//! `S_k(λ(D²_h u)) = f(x, u, D_h u)` on a box, with a line search that keeps
//! every node inside the admissible cone, plus parameter continuation.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgrid::{self, Grid, GridField};
use crate::linalg::{self, CsrMatrix};
use crate::symfun::{self, SumHessianOp};

pub type ScalarFn = dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync;
pub type VectorFn = dyn Fn(&[f64], f64, &[f64]) -> Vec<f64> + Send + Sync;
pub type BoundaryFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

const FD_STEP: f64 = 1e-6;

/// Right-hand side `f(x, u, p)` with optional analytic partials.
#[derive(Clone)]
pub struct Rhs {
    f: Arc<ScalarFn>,
    f_u: Option<Arc<ScalarFn>>,
    f_p: Option<Arc<VectorFn>>,
    gradient_dependent: bool,
}

impl fmt::Debug for Rhs {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("Rhs")
            .field("analytic_partials", &self.has_analytic_partials())
            .field("gradient_dependent", &self.gradient_dependent)
            .finish()
    }
}

impl Rhs {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Rhs {
            f: Arc::new(f),
            f_u: None,
            f_p: None,
            gradient_dependent: false,
        }
    }

    pub fn constant(c: f64) -> Self {
        Rhs::new(move |_, _, _| c).with_partials(|_, _, _| 0.0, |x, _, _| vec![0.0; x.len()])
    }

    /// A right-hand side depending on `x` only.
    pub fn of_x<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Rhs::new(move |x, _, _| f(x)).with_partials(|_, _, _| 0.0, |x, _, _| vec![0.0; x.len()])
    }

    pub fn with_partials<U, P>(mut self, f_u: U, f_p: P) -> Self
    where
        U: Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
        P: Fn(&[f64], f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.f_u = Some(Arc::new(f_u));
        self.f_p = Some(Arc::new(f_p));
        self
    }

    /// Marks `f` as depending on `Du`; only affects reporting.
    pub fn gradient_dependent(mut self) -> Self {
        self.gradient_dependent = true;
        self
    }

    pub fn is_gradient_dependent(&self) -> bool {
        self.gradient_dependent
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.f_u.is_some() && self.f_p.is_some()
    }

    pub fn eval(&self, x: &[f64], u: f64, p: &[f64]) -> f64 {
        (self.f)(x, u, p)
    }

    /// `(f_u, f_p)`: analytic when supplied, else forward differences with
    /// step `1e-6·max(1, |arg|)`.
    pub fn partials(&self, x: &[f64], u: f64, p: &[f64], f0: f64) -> (f64, Vec<f64>) {
        let f_u = match &self.f_u {
            Some(g) => g(x, u, p),
            None => {
                let du = FD_STEP * u.abs().max(1.0);
                ((self.f)(x, u + du, p) - f0) / du
            }
        };
        let f_p = match &self.f_p {
            Some(g) => g(x, u, p),
            None => {
                let mut q = p.to_vec();
                (0..p.len())
                    .map(|a| {
                        let dp = FD_STEP * p[a].abs().max(1.0);
                        q[a] = p[a] + dp;
                        let d = ((self.f)(x, u, &q) - f0) / dp;
                        q[a] = p[a];
                        d
                    })
                    .collect()
            }
        };
        (f_u, f_p)
    }

    /// `(1 - t)·base + t·f`.
    pub fn blended(&self, base: f64, t: f64) -> Rhs {
        let inner = self.clone();
        let pu = self.clone();
        let pp = self.clone();
        Rhs {
            f: Arc::new(move |x, u, p| (1.0 - t) * base + t * inner.eval(x, u, p)),
            f_u: Some(Arc::new(move |x, u, p| {
                let f0 = pu.eval(x, u, p);
                t * pu.partials(x, u, p, f0).0
            })),
            f_p: Some(Arc::new(move |x, u, p| {
                let f0 = pp.eval(x, u, p);
                pp.partials(x, u, p, f0).1.into_iter().map(|v| t * v).collect()
            })),
            gradient_dependent: self.gradient_dependent,
        }
    }
}

/// Operator, grid, right-hand side and Dirichlet trace.
#[derive(Clone)]
pub struct ProblemSpec {
    op: SumHessianOp,
    grid: Grid,
    rhs: Rhs,
    boundary: Arc<BoundaryFn>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("ProblemSpec")
            .field("op", &self.op)
            .field("grid", &self.grid)
            .field("rhs", &self.rhs)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Rejects dimension mismatches and any `f(x, 0, 0) <= 0` at an interior node.
    pub fn new<G>(op: SumHessianOp, grid: Grid, rhs: Rhs, boundary: G) -> Result<Self>
    where
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ProblemSpec::from_parts(op, grid, rhs, Arc::new(boundary))
    }

    fn from_parts(op: SumHessianOp, grid: Grid, rhs: Rhs, boundary: Arc<BoundaryFn>) -> Result<Self> {
        if op.n() != grid.dim() {
            return Err(Error::Argument(format!(
                "operator dimension {} does not match grid dimension {}",
                op.n(),
                grid.dim()
            )));
        }
        let spec = ProblemSpec { op, grid, rhs, boundary };
        let zero = vec![0.0; spec.grid.dim()];
        for i in 0..spec.grid.interior_len() {
            let x = spec.grid.coord(i);
            let v = spec.rhs.eval(&x, 0.0, &zero);
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Rhs(format!("f = {v} at x = {x:?}; f must be positive")));
            }
        }
        Ok(spec)
    }

    pub fn op(&self) -> &SumHessianOp {
        &self.op
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rhs(&self) -> &Rhs {
        &self.rhs
    }

    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        (self.boundary)(x)
    }

    /// Same problem on another grid of the same dimension.
    pub fn on_grid(&self, grid: Grid) -> Result<Self> {
        ProblemSpec::from_parts(self.op, grid, self.rhs.clone(), self.boundary.clone())
    }

    /// `max f(x, 0, 0)` over interior nodes.
    pub fn sup_rhs(&self) -> f64 {
        let zero = vec![0.0; self.grid.dim()];
        (0..self.grid.interior_len())
            .map(|i| self.rhs.eval(&self.grid.coord(i), 0.0, &zero))
            .fold(0.0, f64::max)
    }

    fn with(&self, rhs: Rhs, boundary: Arc<BoundaryFn>) -> ProblemSpec {
        ProblemSpec {
            op: self.op,
            grid: self.grid.clone(),
            rhs,
            boundary,
        }
    }

    fn trace(&self, u: &mut GridField) {
        let g = self.boundary.clone();
        u.set_boundary(move |x| g(x));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Stalled,
    ConeBreach,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rtol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// A trial step must keep each node's margin above this fraction of its old one.
    pub cone_fraction: f64,
    pub min_step: f64,
    pub linear_rtol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rtol: 1e-8,
            max_iter: 60,
            armijo: 1e-4,
            cone_fraction: 0.1,
            min_step: 2f64.powi(-20),
            linear_rtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    /// Interior nodes per axis of the grid this step ran on.
    pub cells: Vec<usize>,
    pub t: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Newton steps of the final solve.
    pub iterations: usize,
    /// Newton steps summed over the whole continuation path.
    pub total_iterations: usize,
    /// Max-norm residual before each step and after the last one.
    pub residual_history: Vec<f64>,
    /// Worst node margin `min_m S_m` at the same instants.
    pub cone_margin_history: Vec<f64>,
    pub status: SolveStatus,
    /// Continuation steps taken; a single `t = 1` entry for a direct solve.
    pub path: Vec<PathStep>,
    /// Parameter value at which continuation gave up.
    pub failing_t: Option<f64>,
    pub partials: PartialsMode,
    pub gradient_dependent: bool,
    pub message: Option<String>,
    #[serde(skip)]
    pub final_field: Option<GridField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialsMode {
    Analytic,
    /// Forward differences; the Jacobian carries an `O(1e-6)` relative error
    /// in the lower-order terms, which slows but does not stop convergence.
    ForwardDifference,
}

impl SolveReport {
    pub fn field(&self) -> &GridField {
        self.final_field.as_ref().expect("reports produced by the solver carry their field")
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// `c > 0` with `S_k(cI) = target`.
pub fn quadratic_coefficient(op: &SumHessianOp, target: f64) -> f64 {
    assert!(target > 0.0);
    let n = op.n();
    let k = op.k();
    let g = |c: f64| {
        binomial(n, k) * c.powi(k as i32) + op.alpha() * binomial(n, k - 1) * c.powi(k as i32 - 1)
    };
    let mut hi = 1.0;
    while g(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn initial_coefficient(spec: &ProblemSpec) -> f64 {
    quadratic_coefficient(&spec.op, 2.0 * spec.sup_rhs())
}

/// `½c|x - x₀|²` plus the discrete harmonic function matching the remaining
/// boundary data, `x₀` the box center and `S_k(cI) = 2 sup f`.
pub fn initial_guess(spec: &ProblemSpec) -> Result<GridField> {
    let c = initial_coefficient(spec);
    let x0 = spec.grid.center();
    let q = move |x: &[f64]| 0.5 * c * dist2(x, &x0);
    let qq = q.clone();
    let lift = fdgrid::harmonic_extension(&spec.grid, |x| spec.boundary_value(x) - qq(x))?;
    let quad = GridField::from_fn(&spec.grid, q);
    let values: Vec<f64> = lift.padded().iter().zip(quad.padded()).map(|(a, b)| a + b).collect();
    let mut out = GridField::from_fn(&spec.grid, |_| 0.0);
    out.set_interior(&interior_of_padded(&spec.grid, &values));
    spec.trace(&mut out);
    Ok(out)
}

fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn interior_of_padded(grid: &Grid, padded: &[f64]) -> Vec<f64> {
    (0..grid.interior_len()).map(|i| padded[grid.padded_of(i)]).collect()
}

#[derive(Debug, Clone)]
struct NodeEval {
    residual: f64,
    margin: f64,
    f: f64,
    fmat: [[f64; 3]; 3],
    f_u: f64,
    f_p: [f64; 3],
}

fn evaluate(spec: &ProblemSpec, u: &GridField) -> Result<Vec<NodeEval>> {
    let grid = &spec.grid;
    let op = spec.op;
    let dim = grid.dim();
    let nodes = u.padded();
    (0..grid.interior_len())
        .into_par_iter()
        .map(|i| {
            let p = grid.padded_of(i);
            let h = fdgrid::hessian_matrix_padded(grid, nodes, p);
            let eig = linalg::symmetric_eigen(&h);
            let lam = &eig.values;
            let sig = symfun::elementary(lam, op.k());
            let margin = (1..=op.k())
                .map(|m| sig[m] + op.alpha() * sig[m - 1])
                .fold(f64::INFINITY, f64::min);
            let s_k = sig[op.k()] + op.alpha() * sig[op.k() - 1];
            let x = grid.padded_coord(p);
            let du = fdgrid::gradient_padded(grid, nodes, p);
            let f = spec.rhs.eval(&x, nodes[p], &du);
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::Rhs(format!("f = {f} at x = {x:?}; f must be positive")));
            }
            let (f_u, fp) = spec.rhs.partials(&x, nodes[p], &du, f);
            let d = symfun::gradient_of(op.alpha(), lam, op.k() as isize);
            let mut fmat = [[0.0; 3]; 3];
            for a in 0..dim {
                for b in 0..dim {
                    fmat[a][b] = (0..dim).map(|j| eig.vectors[(a, j)] * d[j] * eig.vectors[(b, j)]).sum();
                }
            }
            let mut f_p = [0.0; 3];
            f_p[..dim].copy_from_slice(&fp[..dim]);
            Ok(NodeEval {
                residual: s_k - f,
                margin,
                f,
                fmat,
                f_u,
                f_p,
            })
        })
        .collect()
}

/// Linearization at an admissible field.
#[derive(Debug, Clone)]
pub struct NewtonSystem {
    pub jacobian: CsrMatrix,
    pub residual: Vec<f64>,
    /// Per-node `min_m S_m`.
    pub margins: Vec<f64>,
}

fn jacobian(grid: &Grid, evals: &[NodeEval]) -> CsrMatrix {
    let dim = grid.dim();
    let s = grid.strides();
    let h = grid.h();
    let rows = (0..grid.interior_len())
        .into_par_iter()
        .map(|i| {
            let ev = &evals[i];
            let p = grid.padded_of(i);
            let mut row = Vec::with_capacity(1 + 2 * dim + 2 * dim * (dim - 1));
            let mut push = |q: usize, v: f64| {
                if let Some(j) = grid.interior_of(q) {
                    row.push((j, v));
                }
            };
            let mut center = -ev.f_u;
            for a in 0..dim {
                let w = ev.fmat[a][a] / (h[a] * h[a]);
                center -= 2.0 * w;
                let g = ev.f_p[a] / (2.0 * h[a]);
                push(p + s[a], w - g);
                push(p - s[a], w + g);
                for b in (a + 1)..dim {
                    let w = 2.0 * ev.fmat[a][b] / (4.0 * h[a] * h[b]);
                    push(p + s[a] + s[b], w);
                    push(p - s[a] - s[b], w);
                    push(p + s[a] - s[b], -w);
                    push(p - s[a] + s[b], -w);
                }
            }
            row.push((i, center));
            row
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

/// Residual `S_k(λ(D²_h u)) - f` and its Jacobian in the interior unknowns.
pub fn assemble_newton(spec: &ProblemSpec, u: &GridField) -> Result<NewtonSystem> {
    check_grid(spec, u)?;
    let evals = evaluate(spec, u)?;
    if let Some((i, ev)) = evals.iter().enumerate().find(|(_, e)| !(e.margin > 0.0)) {
        return Err(Error::ConeBreach(format!(
            "node {i} at {:?} has margin {}",
            spec.grid.coord(i),
            ev.margin
        )));
    }
    Ok(NewtonSystem {
        jacobian: jacobian(&spec.grid, &evals),
        residual: evals.iter().map(|e| e.residual).collect(),
        margins: evals.iter().map(|e| e.margin).collect(),
    })
}

fn check_grid(spec: &ProblemSpec, u: &GridField) -> Result<()> {
    if u.grid() != &spec.grid {
        return Err(Error::Argument("field grid differs from problem grid".into()));
    }
    Ok(())
}

/// Per-node `min_m S_m` of the discrete Hessian.
pub fn cone_margins(op: &SumHessianOp, u: &GridField) -> Vec<f64> {
    let grid = u.grid();
    (0..grid.interior_len())
        .into_par_iter()
        .map(|i| {
            let h = fdgrid::hessian_matrix_padded(grid, u.padded(), grid.padded_of(i));
            let lam = linalg::symmetric_eigen(&h).values;
            let sig = symfun::elementary(&lam, op.k());
            (1..=op.k())
                .map(|m| sig[m] + op.alpha() * sig[m - 1])
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(evals: &[NodeEval]) -> f64 {
    evals.iter().map(|e| e.residual * e.residual).sum::<f64>().sqrt()
}

fn partials_mode(rhs: &Rhs) -> PartialsMode {
    if rhs.has_analytic_partials() {
        PartialsMode::Analytic
    } else {
        PartialsMode::ForwardDifference
    }
}

/// Starts from `initial_guess` when it is admissible. Otherwise the problem is
/// solved on the grid with doubled spacing and the result interpolated up;
/// on the coarsest grid continuation from an exact quadratic is used.
pub fn solve(spec: &ProblemSpec, config: &SolverConfig) -> Result<SolveReport> {
    if let Some(guess) = repaired(spec, initial_guess(spec)?) {
        let r = solve_from(spec, guess, config)?;
        if r.converged() {
            return Ok(r);
        }
    }
    if let Some(coarse) = coarsened(&spec.grid) {
        let low = solve(&spec.on_grid(coarse)?, config)?;
        if low.converged() {
            let warm = low.field().interpolate_to(&spec.grid, |x| spec.boundary_value(x));
            if let Some(warm) = repaired(spec, warm) {
                let mut r = solve_from(spec, warm, config)?;
                if r.converged() {
                    let mut path = low.path;
                    path.extend(r.path);
                    r.path = path;
                    r.total_iterations += low.total_iterations;
                    return Ok(r);
                }
            }
        }
    }
    continuation_solve(spec, Homotopy::default(), config)
}

const REPAIR_SWEEPS: usize = 400;

/// Pushes nodes that are outside the cone back in by lowering their value
/// alone (down to where the node margin reaches half of `f`), sweeping until
/// every node is admissible. `None` when that fails.
pub fn repaired(spec: &ProblemSpec, u: GridField) -> Option<GridField> {
    let grid = &spec.grid;
    let op = spec.op;
    let h2 = grid.h().iter().map(|h| h * h).fold(f64::INFINITY, f64::min);
    let mut nodes = u.padded().to_vec();
    let node_margin = |nodes: &[f64], p: usize| {
        let h = fdgrid::hessian_matrix_padded(grid, nodes, p);
        let lam = linalg::symmetric_eigen(&h).values;
        let sig = symfun::elementary(&lam, op.k());
        (1..=op.k())
            .map(|m| sig[m] + op.alpha() * sig[m - 1])
            .fold(f64::INFINITY, f64::min)
    };
    let mut bad: Vec<usize> = cone_margins(&op, &u)
        .iter()
        .enumerate()
        .filter(|(_, m)| !(**m > 0.0))
        .map(|(i, _)| grid.padded_of(i))
        .collect();
    let s = grid.strides();
    for _ in 0..REPAIR_SWEEPS {
        if bad.is_empty() {
            let mut out = u;
            out.set_interior(&interior_of_padded(grid, &nodes));
            return Some(out);
        }
        let mut touched = Vec::new();
        for &p in &bad {
            if node_margin(&nodes, p) > 0.0 {
                continue;
            }
            let x = grid.padded_coord(p);
            let base = nodes[p];
            let wants = |nodes: &mut [f64], d: f64| {
                nodes[p] = base + d;
                let du = fdgrid::gradient_padded(grid, nodes, p);
                node_margin(nodes, p) >= 0.5 * spec.rhs.eval(&x, nodes[p], &du)
            };
            let mut hi = -h2;
            let mut tries = 0;
            while !wants(&mut nodes, hi) {
                hi *= 2.0;
                tries += 1;
                if tries > 60 {
                    return None;
                }
            }
            let mut lo = 0.0;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if wants(&mut nodes, mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            nodes[p] = base + hi;
            touched.push(p);
        }
        let mut next = Vec::new();
        for p in touched {
            let mut around = vec![p];
            for a in 0..grid.dim() {
                around.extend([p + s[a], p - s[a]]);
                for b in (a + 1)..grid.dim() {
                    around.extend([p + s[a] + s[b], p + s[a] - s[b], p - s[a] + s[b], p - s[a] - s[b]]);
                }
            }
            for q in around {
                if !grid.is_boundary(q) && !next.contains(&q) && !(node_margin(&nodes, q) > 0.0) {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        bad = next;
    }
    None
}

const COARSEST_CELLS: usize = 7;

/// Same box with doubled spacing, when the node lattice allows it.
fn coarsened(grid: &Grid) -> Option<Grid> {
    let cells: Option<Vec<usize>> = grid
        .cells()
        .iter()
        .map(|&c| {
            let half = c.div_ceil(2) - 1;
            ((c + 1) % 2 == 0 && half >= COARSEST_CELLS).then_some(half)
        })
        .collect();
    Grid::new(grid.lo().to_vec(), grid.hi().to_vec(), cells?).ok()
}

/// Newton from a caller-supplied field; its boundary layer is overwritten
/// with the problem's trace.
pub fn solve_from(spec: &ProblemSpec, start: GridField, config: &SolverConfig) -> Result<SolveReport> {
    check_grid(spec, &start)?;
    let mut u = start;
    spec.trace(&mut u);
    let mut evals = evaluate(spec, &u)?;
    let mut report = SolveReport {
        iterations: 0,
        total_iterations: 0,
        residual_history: vec![max_abs(evals.iter().map(|e| e.residual))],
        cone_margin_history: vec![evals.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min)],
        status: SolveStatus::Stalled,
        path: Vec::new(),
        failing_t: None,
        partials: partials_mode(&spec.rhs),
        gradient_dependent: spec.rhs.is_gradient_dependent(),
        message: None,
        final_field: None,
    };
    let finish = |mut report: SolveReport, u: GridField, status: SolveStatus| {
        report.status = status;
        report.total_iterations = report.iterations;
        report.path = vec![PathStep {
            cells: spec.grid.cells().to_vec(),
            t: 1.0,
            iterations: report.iterations,
            status,
            residual: report.final_residual(),
        }];
        report.final_field = Some(u);
        report
    };
    if !(report.cone_margin_history[0] > 0.0) {
        report.message = Some("start field is not admissible".into());
        return Ok(finish(report, u, SolveStatus::ConeBreach));
    }
    let interior = spec.grid.interior_len();
    loop {
        let rmax = *report.residual_history.last().unwrap();
        let fmax = max_abs(evals.iter().map(|e| e.f));
        if rmax <= config.rtol * (1.0 + fmax) {
            return Ok(finish(report, u, SolveStatus::Converged));
        }
        if report.iterations >= config.max_iter {
            report.message = Some("iteration limit reached".into());
            return Ok(finish(report, u, SolveStatus::Stalled));
        }
        let jac = jacobian(&spec.grid, &evals);
        let rhs: Vec<f64> = evals.iter().map(|e| -e.residual).collect();
        let delta = match linalg::solve_linear(&jac, &rhs, config.linear_rtol) {
            Ok(d) => d,
            Err(e) => {
                report.message = Some(e.to_string());
                return Ok(finish(report, u, SolveStatus::Stalled));
            }
        };
        let base = u.interior_values();
        let r_old = l2(&evals);
        let mut step = 1.0;
        let mut cone_failed;
        let accepted = loop {
            let trial_values: Vec<f64> = (0..interior).map(|i| base[i] + step * delta[i]).collect();
            let mut trial = u.clone();
            trial.set_interior(&trial_values);
            cone_failed = false;
            if let Ok(te) = evaluate(spec, &trial) {
                let cone_ok = te
                    .iter()
                    .zip(&evals)
                    .all(|(n, o)| n.margin > 0.0 && n.margin >= config.cone_fraction * o.margin);
                cone_failed = !cone_ok;
                if cone_ok && l2(&te) <= (1.0 - config.armijo * step) * r_old {
                    break Some((trial, te));
                }
            }
            step *= 0.5;
            if step < config.min_step {
                break None;
            }
        };
        match accepted {
            Some((trial, te)) => {
                u = trial;
                evals = te;
                report.iterations += 1;
                report.residual_history.push(max_abs(evals.iter().map(|e| e.residual)));
                report
                    .cone_margin_history
                    .push(evals.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min));
            }
            None => {
                let status = if cone_failed {
                    report.message = Some("step underflow: cone condition".into());
                    SolveStatus::ConeBreach
                } else {
                    report.message = Some("step underflow: no sufficient decrease".into());
                    SolveStatus::Stalled
                };
                return Ok(finish(report, u, status));
            }
        }
    }
}

/// Parameter paths for `continuation_solve`; `t` runs from 0 to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Homotopy {
    /// Plain `solve_from(initial_guess)`.
    None,
    /// `f_t = (1 - t)·S_k(cI) + t·f`, boundary fixed, starting from `initial_guess`.
    Rhs { steps: usize },
    /// Right-hand side as above and boundary `(1 - t)·q + t·g`, starting from the
    /// exact quadratic `q = ½c|x - x₀|² + const`.
    RhsAndBoundary { steps: usize },
}

impl Default for Homotopy {
    fn default() -> Self {
        Homotopy::RhsAndBoundary { steps: 8 }
    }
}

const MAX_HALVINGS: u32 = 12;

pub fn continuation_solve(spec: &ProblemSpec, path: Homotopy, config: &SolverConfig) -> Result<SolveReport> {
    let mut report = march(spec, path, config)?;
    report.partials = partials_mode(&spec.rhs);
    Ok(report)
}

fn march(spec: &ProblemSpec, path: Homotopy, config: &SolverConfig) -> Result<SolveReport> {
    let (steps, move_boundary) = match path {
        Homotopy::None => return solve_from(spec, initial_guess(spec)?, config),
        Homotopy::Rhs { steps } => (steps, false),
        Homotopy::RhsAndBoundary { steps } => (steps, true),
    };
    if steps == 0 {
        return Err(Error::Argument("continuation needs at least one step".into()));
    }
    let c = initial_coefficient(spec);
    let base = symfun::sum_hessian_of(spec.op.alpha(), &vec![c; spec.op.n()], spec.op.k() as isize);
    let x0 = spec.grid.center();
    let q0 = {
        let x0 = x0.clone();
        move |x: &[f64]| 0.5 * c * dist2(x, &x0)
    };
    let offset = boundary_mean(&spec.grid, |x| spec.boundary_value(x) - q0(x));
    let q: Arc<BoundaryFn> = Arc::new(move |x| q0(x) + offset);
    let g = spec.boundary.clone();

    let problem_at = |t: f64| -> ProblemSpec {
        let rhs = spec.rhs.blended(base, t);
        if move_boundary && t < 1.0 {
            let (q, g) = (q.clone(), g.clone());
            spec.with(rhs, Arc::new(move |x| (1.0 - t) * q(x) + t * g(x)))
        } else {
            spec.with(rhs, g.clone())
        }
    };

    let start_problem = problem_at(0.0);
    let start = if move_boundary {
        let qq = q.clone();
        GridField::from_fn(&spec.grid, move |x| qq(x))
    } else {
        initial_guess(spec)?
    };
    let mut report = solve_from(&start_problem, start, config)?;
    let mut path_log = vec![PathStep {
        cells: spec.grid.cells().to_vec(),
        t: 0.0,
        iterations: report.iterations,
        status: report.status,
        residual: report.final_residual(),
    }];
    let mut total = report.iterations;
    if !report.converged() {
        report.failing_t = Some(0.0);
        report.path = path_log;
        report.total_iterations = total;
        return Ok(report);
    }

    let dt_max = 1.0 / steps as f64;
    let dt_min = dt_max / 2f64.powi(MAX_HALVINGS as i32);
    let mut t = 0.0;
    let mut dt = dt_max;
    let mut current = start_problem;
    while t < 1.0 {
        let t_next = if t + dt >= 1.0 - 1e-12 { 1.0 } else { t + dt };
        let next = problem_at(t_next);
        let attempt = predict(&current, &next, report.field())
            .map(|guess| solve_from(&next, guess, config))
            .transpose()?;
        match attempt {
            Some(r) if r.converged() => {
                total += r.iterations;
                path_log.push(PathStep {
                    cells: spec.grid.cells().to_vec(),
                    t: t_next,
                    iterations: r.iterations,
                    status: r.status,
                    residual: r.final_residual(),
                });
                report = r;
                current = next;
                t = t_next;
                dt = (2.0 * dt).min(dt_max);
            }
            other => {
                let (iters, status, residual) = match &other {
                    Some(r) => (r.iterations, r.status, r.final_residual()),
                    None => (0, SolveStatus::ConeBreach, f64::NAN),
                };
                total += iters;
                path_log.push(PathStep {
                    cells: spec.grid.cells().to_vec(),
                    t: t_next,
                    iterations: iters,
                    status,
                    residual,
                });
                dt *= 0.5;
                if dt < dt_min {
                    let mut failed = other.unwrap_or_else(|| report.clone());
                    if failed.converged() {
                        failed.status = SolveStatus::ConeBreach;
                    }
                    failed.failing_t = Some(t_next);
                    failed.message = Some(format!("continuation step size underflow at t = {t_next}"));
                    failed.path = path_log;
                    failed.total_iterations = total;
                    return Ok(failed);
                }
            }
        }
    }
    report.path = path_log;
    report.total_iterations = total;
    Ok(report)
}

fn boundary_mean<G: Fn(&[f64]) -> f64>(grid: &Grid, g: G) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..grid.padded_len() {
        if grid.is_boundary(p) {
            sum += g(&grid.padded_coord(p));
            count += 1;
        }
    }
    sum / count as f64
}

/// Tangent predictor: one Newton correction for `next`, using the Jacobian of
/// `current` at its admissible solution `u`. `None` if the result leaves the cone.
fn predict(current: &ProblemSpec, next: &ProblemSpec, u: &GridField) -> Option<GridField> {
    let sys = assemble_newton(current, u).ok()?;
    let mut moved = u.clone();
    next.trace(&mut moved);
    let evals = evaluate(next, &moved).ok()?;
    let rhs: Vec<f64> = evals.iter().map(|e| -e.residual).collect();
    let delta = linalg::solve_linear(&sys.jacobian, &rhs, 1e-10).ok()?;
    let values: Vec<f64> = moved.interior_values().iter().zip(&delta).map(|(a, d)| a + d).collect();
    moved.set_interior(&values);
    if cone_margins(&next.op, &moved).iter().all(|&m| m > 0.0) {
        Some(moved)
    } else {
        None
    }
}
