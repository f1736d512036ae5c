use std::f64::consts::PI;
use std::time::Instant;

use sumhess_core::solver::{self, ProblemSpec, Rhs, SolverConfig};
use sumhess_core::{Grid, GridField, SumHessianOp};

const BUMP: f64 = 0.05;

fn bumped(x: &[f64]) -> f64 {
    0.5 * (x[0] * x[0] + x[1] * x[1] - 1.0) + BUMP * (PI * x[0]).sin() * (PI * x[1]).sin()
}

/// `σ₂ + σ₁` of the exact Hessian of `bumped`.
fn bumped_rhs(x: &[f64]) -> f64 {
    let (s, c) = ((PI * x[0]).sin() * (PI * x[1]).sin(), (PI * x[0]).cos() * (PI * x[1]).cos());
    let d = 1.0 - BUMP * PI * PI * s;
    let m = BUMP * PI * PI * c;
    d * d - m * m + 2.0 * d
}

#[test]
fn bumped_solution_converges_at_second_order() {
    let op = SumHessianOp::new(2, 2, 1.0).unwrap();
    let config = SolverConfig { rtol: 1e-12, ..SolverConfig::default() };
    let started = Instant::now();
    let mut errors = Vec::new();
    for cells in [15, 31, 63] {
        let grid = Grid::cube(2, -1.0, 1.0, cells).unwrap();
        let spec = ProblemSpec::new(op, grid.clone(), Rhs::of_x(bumped_rhs), bumped).unwrap();
        let r = solver::solve(&spec, &config).unwrap();
        assert!(r.converged(), "{cells}: {r:?}");
        let exact = GridField::from_fn(&grid, bumped);
        errors.push((grid.h()[0], r.field().max_interior_diff(&exact)));
    }
    for w in errors.windows(2) {
        let order = (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln();
        assert!(order >= 1.8, "{errors:?}");
    }
    eprintln!("{errors:?} in {:?}", started.elapsed());
}
