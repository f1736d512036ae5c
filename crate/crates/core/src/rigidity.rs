//! Entire solutions of `S_k(D²u) = 1`: quadratic solutions, the blow-down
//! rescaling `v(y) = (u(Ry) - R²)/R²`, quadratic growth fits and a closed-form
//! non-quadratic solution of `σ₂ + σ₁ = 1` in three variables.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgrid::{self, Grid, GridField};
use crate::linalg;
use crate::solver;
use crate::symfun::{self, Spectrum, SumHessianOp};

/// `u(x) = ½ xᵀAx + b₀·x + c₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCandidate {
    /// Rows of the symmetric matrix `A`.
    pub a: Vec<Vec<f64>>,
    pub b0: Vec<f64>,
    pub c0: f64,
}

impl QuadraticCandidate {
    pub fn new(a: Vec<Vec<f64>>, b0: Vec<f64>, c0: f64) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) || b0.len() != n {
            return Err(Error::Argument("A must be square and match b0".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (a[i][j] - a[j][i]).abs() > 1e-14 * (1.0 + a[i][j].abs()) {
                    return Err(Error::Argument(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(QuadraticCandidate { a, b0, c0 })
    }

    /// `½ c |x|²`.
    pub fn isotropic(n: usize, c: f64) -> Self {
        let a = (0..n).map(|i| (0..n).map(|j| if i == j { c } else { 0.0 }).collect()).collect();
        QuadraticCandidate { a, b0: vec![0.0; n], c0: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum::new(linalg::symmetric_eigen(&self.matrix()).values).expect("finite matrix")
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += self.a[i][j] * x[i] * x[j];
            }
        }
        0.5 * q + self.b0.iter().zip(x).map(|(b, x)| b * x).sum::<f64>() + self.c0
    }
}

/// `|S_k(λ(A)) - 1|`.
pub fn quadratic_residual(op: &SumHessianOp, q: &QuadraticCandidate) -> Result<f64> {
    if q.dim() != op.n() {
        return Err(Error::Argument(format!("candidate has dimension {}, operator {}", q.dim(), op.n())));
    }
    Ok((symfun::sum_hessian(op, &q.spectrum(), op.k() as isize) - 1.0).abs())
}

/// The isotropic quadratic solution `½ c|x|²`, `S_k(cI) = 1`.
pub fn isotropic_solution(op: &SumHessianOp) -> QuadraticCandidate {
    QuadraticCandidate::isotropic(op.n(), solver::quadratic_coefficient(op, 1.0))
}

/// `y ↦ (u(Ry) - R²)/R²` together with the indicator of `{u(Ry) <= R²}`.
#[derive(Clone)]
pub struct ScaledSampler<F> {
    u: F,
    r: f64,
}

pub fn scale_field<F: Fn(&[f64]) -> f64>(u: F, r: f64) -> Result<ScaledSampler<F>> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::Argument(format!("scale R must exceed 1, got {r}")));
    }
    Ok(ScaledSampler { u, r })
}

impl<F: Fn(&[f64]) -> f64> ScaledSampler<F> {
    pub fn radius(&self) -> f64 {
        self.r
    }

    fn at(&self, y: &[f64]) -> f64 {
        let x: Vec<f64> = y.iter().map(|v| v * self.r).collect();
        (self.u)(&x)
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let r2 = self.r * self.r;
        (self.at(y) - r2) / r2
    }

    pub fn in_domain(&self, y: &[f64]) -> bool {
        self.at(y) <= self.r * self.r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub r: f64,
    pub nodes: usize,
    /// Largest eigenvalue difference between `D²_h v` and `D²_{Rh} u` at mapped nodes.
    pub max_spectrum_diff: f64,
    /// Nodes of the `y` grid inside the rescaled sublevel set.
    pub inside: usize,
}

/// Compares discrete Hessian spectra of `v` on `grid_y` with those of `u` on
/// the image grid `R · grid_y`, node by node.
pub fn scaling_invariance_check<F>(u: F, grid_y: &Grid, r: f64) -> Result<ScalingCheck>
where
    F: Fn(&[f64]) -> f64 + Clone,
{
    let v = scale_field(u.clone(), r)?;
    let lo: Vec<f64> = grid_y.lo().iter().map(|x| x * r).collect();
    let hi: Vec<f64> = grid_y.hi().iter().map(|x| x * r).collect();
    let grid_x = Grid::new(lo, hi, grid_y.cells().to_vec())?;
    let fv = GridField::from_fn(grid_y, |y| v.eval(y));
    let fu = GridField::from_fn(&grid_x, |x| u(x));
    let mut worst = 0.0f64;
    let mut inside = 0;
    for i in 0..grid_y.interior_len() {
        let a = fdgrid::hessian_at(&fv, i).eigenvalues;
        let b = fdgrid::hessian_at(&fu, i).eigenvalues;
        for (p, q) in a.values().iter().zip(b.values()) {
            worst = worst.max((p - q).abs());
        }
        inside += v.in_domain(&grid_y.coord(i)) as usize;
    }
    Ok(ScalingCheck {
        r,
        nodes: grid_y.interior_len(),
        max_spectrum_diff: worst,
        inside,
    })
}

pub const GROWTH_DIRECTIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub radii: Vec<f64>,
    /// `min_θ u(Rθ)` per radius.
    pub sphere_minima: Vec<f64>,
    /// Smallest secant slope of the sphere minima against `R²`.
    pub c_fit: f64,
    /// Smallest `b` with `min u(Rθ) >= c_fit R² - b` at every sampled radius.
    pub b_fit: f64,
    pub pass: bool,
}

/// `GROWTH_DIRECTIONS` unit vectors: equally spaced angles in 2D, a
/// Fibonacci lattice in higher dimensions (first three coordinates).
pub fn sphere_directions(dim: usize) -> Vec<Vec<f64>> {
    let m = GROWTH_DIRECTIONS;
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..m)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..m)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / m as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let a = golden * j as f64;
                    let mut v = vec![0.0; dim];
                    v[0] = rho * a.cos();
                    v[1] = rho * a.sin();
                    v[2] = z;
                    v
                })
                .collect()
        }
    }
}

pub fn growth_check<F: Fn(&[f64]) -> f64>(u: F, dim: usize, radii: &[f64], c_min: f64) -> Result<GrowthFit> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) || radii[0] <= 0.0 {
        return Err(Error::Argument("radii must be positive, increasing, at least two".into()));
    }
    let dirs = sphere_directions(dim);
    let minima: Vec<f64> = radii
        .iter()
        .map(|&r| {
            dirs.iter()
                .map(|d| u(&d.iter().map(|v| v * r).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let s: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let c_fit = (1..radii.len())
        .map(|i| (minima[i] - minima[i - 1]) / (s[i] - s[i - 1]))
        .fold(f64::INFINITY, f64::min);
    let b_fit = s.iter().zip(&minima).map(|(s, m)| c_fit * s - m).fold(f64::NEG_INFINITY, f64::max);
    Ok(GrowthFit {
        radii: radii.to_vec(),
        sphere_minima: minima,
        c_fit,
        b_fit,
        pass: c_fit >= c_min - 1e-12 * (1.0 + c_min.abs()),
    })
}

/// `u(x, y, t) = ((e^{4t} - 1)/4)(x² + y²) + (7e^{-4t}/4 - e^{4t}/4 - 4t²)/16`.
pub fn example_u(x: f64, y: f64, t: f64) -> f64 {
    let e = (4.0 * t).exp();
    (e - 1.0) / 4.0 * (x * x + y * y) + (7.0 / (4.0 * e) - e / 4.0 - 4.0 * t * t) / 16.0
}

/// Hessian of `example_u`, differentiated by hand.
pub fn example_hessian(x: f64, y: f64, t: f64) -> [[f64; 3]; 3] {
    let e = (4.0 * t).exp();
    let d = (e - 1.0) / 2.0;
    let xt = 2.0 * e * x;
    let yt = 2.0 * e * y;
    let tt = 4.0 * e * (x * x + y * y) + (7.0 / e - e - 2.0) / 4.0;
    [[d, 0.0, xt], [0.0, d, yt], [xt, yt, tt]]
}

/// `(|σ₂(D²u) + σ₁(D²u) - 1|, σ₁(D²u))` from the closed-form Hessian, with
/// `σ₂` as the sum of principal 2×2 minors.
pub fn example_residual(x: f64, y: f64, t: f64) -> (f64, f64) {
    let h = example_hessian(x, y, t);
    let s1 = h[0][0] + h[1][1] + h[2][2];
    let s2 = h[0][0] * h[1][1] - h[0][1] * h[1][0] + h[0][0] * h[2][2] - h[0][2] * h[2][0] + h[1][1] * h[2][2]
        - h[1][2] * h[2][1];
    ((s2 + s1 - 1.0).abs(), s1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSweep {
    pub samples: usize,
    pub worst_residual: f64,
    pub worst_point: [f64; 3],
    pub min_sigma1: f64,
    pub passed: bool,
}

pub const EXAMPLE_TOLERANCE: f64 = 1e-9;

/// Uniform points in `[-1, 1]³`.
pub fn example_sweep(samples: usize, seed: u64) -> ExampleSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 3]> = (0..samples)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
        .collect();
    let res: Vec<(f64, f64)> = points.par_iter().map(|p| example_residual(p[0], p[1], p[2])).collect();
    let mut worst = (0.0, [0.0; 3]);
    let mut min_s1 = f64::INFINITY;
    for (p, &(r, s1)) in points.iter().zip(&res) {
        if r > worst.0 {
            worst = (r, *p);
        }
        min_s1 = min_s1.min(s1);
    }
    ExampleSweep {
        samples,
        worst_residual: worst.0,
        worst_point: worst.1,
        min_sigma1: min_s1,
        passed: worst.0 <= EXAMPLE_TOLERANCE && min_s1 > 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceCheck {
    pub cells: Vec<usize>,
    /// Largest entrywise difference between discrete and analytic Hessians,
    /// one value per grid.
    pub errors: Vec<f64>,
    /// `log2` of consecutive error ratios.
    pub orders: Vec<f64>,
}

/// Half-width of the box for the grid cross-check; on `[-1, 1]³` the factor
/// `e^{4t}` keeps grids below 64³ out of the asymptotic range.
pub const FD_HALF_WIDTH: f64 = 0.25;

/// Discrete Hessians of `example_u` on `[-w, w]³` against the analytic ones.
pub fn example_fd_check(half_width: f64, cells: &[usize]) -> Result<FiniteDifferenceCheck> {
    let mut errors = Vec::with_capacity(cells.len());
    for &c in cells {
        let grid = Grid::cube(3, -half_width, half_width, c)?;
        let u = GridField::from_fn(&grid, |x| example_u(x[0], x[1], x[2]));
        let err = (0..grid.interior_len())
            .into_par_iter()
            .map(|i| {
                let x = grid.coord(i);
                let exact = example_hessian(x[0], x[1], x[2]);
                let m = fdgrid::hessian_at(&u, i).matrix;
                let mut e = 0.0f64;
                for a in 0..3 {
                    for b in 0..3 {
                        e = e.max((m[(a, b)] - exact[a][b]).abs());
                    }
                }
                e
            })
            .reduce(|| 0.0, f64::max);
        errors.push(err);
    }
    let orders = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(FiniteDifferenceCheck {
        cells: cells.to_vec(),
        errors,
        orders,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    pub example: ExampleSweep,
    pub example_fd: FiniteDifferenceCheck,
    pub quadratic: QuadraticCandidate,
    pub quadratic_residual: f64,
    pub scaling: Vec<ScalingCheck>,
    pub growth: GrowthFit,
    /// Growth along the closed-form example; expected to fail (`u → -∞` along `t`).
    pub example_growth: GrowthFit,
    pub passed: bool,
}

pub const QUADRATIC_TOLERANCE: f64 = 1e-12;
pub const SCALING_TOLERANCE: f64 = 1e-10;

/// Every check of this module for one operator of dimension 2 or 3.
pub fn rigidity_suite(op: &SumHessianOp, samples: usize, seed: u64, cells: usize) -> Result<RigidityReport> {
    if !(2..=3).contains(&op.n()) {
        return Err(Error::Argument("grid checks need n = 2 or 3".into()));
    }
    let example = example_sweep(samples, seed);
    let example_fd = example_fd_check(FD_HALF_WIDTH, &[15, 31])?;
    let quadratic = isotropic_solution(op);
    let residual = quadratic_residual(op, &quadratic)?;
    let grid_y = Grid::cube(op.n(), -1.0, 1.0, cells)?;
    let q = quadratic.clone();
    let scaling = [2.0, 3.0, 4.0]
        .iter()
        .map(|&r| scaling_invariance_check(|x: &[f64]| q.eval(x), &grid_y, r))
        .collect::<Result<Vec<_>>>()?;
    let radii = [1.0, 2.0, 4.0, 8.0];
    let c = quadratic.a[0][0];
    let growth = growth_check(|x: &[f64]| q.eval(x), op.n(), &radii, 0.25 * c)?;
    let example_growth = growth_check(|x: &[f64]| example_u(x[0], x[1], x[2]), 3, &[1.0, 2.0, 3.0, 4.0, 5.0], 1e-3)?;
    let order_ok = example_fd.orders.iter().all(|&p| p >= 1.8);
    let passed = example.passed
        && order_ok
        && residual <= QUADRATIC_TOLERANCE
        && scaling.iter().all(|s| s.max_spectrum_diff <= SCALING_TOLERANCE)
        && growth.pass
        && !example_growth.pass;
    Ok(RigidityReport {
        example,
        example_fd,
        quadratic,
        quadratic_residual: residual,
        scaling,
        growth,
        example_growth,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(n: usize, k: usize, a: f64) -> SumHessianOp {
        SumHessianOp::new(n, k, a).unwrap()
    }

    #[test]
    fn quadratic_residual_examples() {
        let o = op(2, 2, 1.0);
        let c = -1.0 + 2f64.sqrt();
        assert!(quadratic_residual(&o, &QuadraticCandidate::isotropic(2, c)).unwrap() <= 1e-12);
        assert_eq!(quadratic_residual(&o, &QuadraticCandidate::isotropic(2, 0.0)).unwrap(), 1.0);
        let aniso = QuadraticCandidate::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0.3, -1.0], 2.0).unwrap();
        assert!(quadratic_residual(&o, &aniso).unwrap() <= 1e-12);
        assert!(QuadraticCandidate::new(vec![vec![1.0, 0.5], vec![0.0, 1.0]], vec![0.0; 2], 0.0).is_err());
        let iso = isotropic_solution(&o);
        assert!((iso.a[0][0] - c).abs() < 1e-12);
    }

    #[test]
    fn trace_family_for_the_linear_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=5 {
            let alpha = rng.random_range(0.1..3.0);
            let o = op(n, 1, alpha);
            for _ in 0..20 {
                let mut a = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..=i {
                        let v = rng.random_range(-2.0..2.0);
                        a[i][j] = v;
                        a[j][i] = v;
                    }
                }
                let tr: f64 = (0..n).map(|i| a[i][i]).sum();
                a[0][0] += 1.0 - alpha - tr;
                let q = QuadraticCandidate::new(a, vec![0.0; n], 0.0).unwrap();
                assert!(quadratic_residual(&o, &q).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_quadratic() {
        let c = 0.7;
        let q = QuadraticCandidate::isotropic(2, c);
        let v = scale_field(|x: &[f64]| q.eval(x), 3.0).unwrap();
        for y in [[0.0, 0.0], [0.4, -1.2], [2.0, 1.0]] {
            let expect = 0.5 * c * (y[0] * y[0] + y[1] * y[1]) - 1.0;
            assert!((v.eval(&y) - expect).abs() < 1e-14);
        }
        assert!(v.in_domain(&[0.0, 0.0]) && !v.in_domain(&[3.0, 0.0]));
        assert!(scale_field(|x: &[f64]| x[0], 1.0).is_err());
        // R close to 1: v ≈ u - 1 on {u <= 1}.
        let w = scale_field(|x: &[f64]| q.eval(x), 1.0 + 1e-9).unwrap();
        assert!((w.eval(&[0.5, 0.5]) - (q.eval(&[0.5, 0.5]) - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn scaling_preserves_discrete_spectra() {
        let q = QuadraticCandidate::isotropic(2, 0.4142);
        let g = Grid::cube(2, -1.0, 1.0, 15).unwrap();
        let s = scaling_invariance_check(|x: &[f64]| q.eval(x), &g, 2.0).unwrap();
        assert!(s.max_spectrum_diff < 1e-10, "{}", s.max_spectrum_diff);
        // Non-quadratic field: exact chain rule holds for the stencils too.
        let f = |x: &[f64]| x[0].powi(4) + (x[1] * 0.3).sin() + x[0] * x[1];
        let s = scaling_invariance_check(f, &g, 3.0).unwrap();
        assert!(s.max_spectrum_diff < 1e-8, "{}", s.max_spectrum_diff);
    }

    #[test]
    fn growth_examples() {
        let g = growth_check(|x: &[f64]| x[0] * x[0] + x[1] * x[1], 2, &[1.0, 2.0, 4.0], 1.0).unwrap();
        assert!((g.c_fit - 1.0).abs() < 1e-12 && g.b_fit.abs() < 1e-12 && g.pass);
        let g = growth_check(|x: &[f64]| x[0] * x[0] + x[1] * x[1] - 5.0, 2, &[1.0, 2.0, 4.0], 1.0).unwrap();
        assert!((g.c_fit - 1.0).abs() < 1e-12 && (g.b_fit - 5.0).abs() < 1e-12);
        let g = growth_check(|x: &[f64]| x[0] * x[0], 2, &[1.0, 2.0], 0.1).unwrap();
        assert!(!g.pass);
        assert!(growth_check(|x: &[f64]| x[0], 2, &[2.0, 1.0], 0.1).is_err());
        assert_eq!(sphere_directions(3).len(), GROWTH_DIRECTIONS);
        for d in sphere_directions(3) {
            assert!((d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn example_along_the_t_axis_has_no_quadratic_growth() {
        // g(t) = (7e^{-4t}/4 - e^{4t}/4 - 4t²)/16 at t = ±5.
        let g = |t: f64| (7.0 * (-4.0 * t).exp() / 4.0 - (4.0 * t).exp() / 4.0 - 4.0 * t * t) / 16.0;
        assert_eq!(example_u(0.0, 0.0, 5.0), g(5.0));
        assert!(g(5.0) < -7e6);
        let fit = growth_check(|x: &[f64]| example_u(x[0], x[1], x[2]), 3, &[1.0, 3.0, 5.0], 1e-6).unwrap();
        assert!(!fit.pass);
    }

    #[test]
    fn example_residual_plug_in() {
        let (r, s1) = example_residual(0.0, 0.0, 0.0);
        assert_eq!(r, 0.0);
        assert_eq!(s1, 1.0);
        let (r, s1) = example_residual(1.0, 0.0, 0.0);
        assert!(r < 1e-15);
        assert_eq!(s1, 5.0);
        assert_eq!(example_hessian(1.0, 0.0, 0.0)[0][2], 2.0);
    }

    #[test]
    fn example_hessian_matches_differences_of_u() {
        // Independent of the grid code: central differences of the closed form.
        let h = 1e-4;
        for p in [[0.3, -0.7, 0.2], [-0.9, 0.1, -0.6], [0.5, 0.5, 0.9]] {
            let exact = example_hessian(p[0], p[1], p[2]);
            let f = |q: [f64; 3]| example_u(q[0], q[1], q[2]);
            for a in 0..3 {
                for b in 0..3 {
                    let shift = |s: f64, t: f64| {
                        let mut q = p;
                        q[a] += s;
                        q[b] += t;
                        f(q)
                    };
                    let fd = (shift(h, h) - shift(h, -h) - shift(-h, h) + shift(-h, -h)) / (4.0 * h * h);
                    assert!((fd - exact[a][b]).abs() < 1e-4 * (1.0 + exact[a][b].abs()), "{a}{b} {fd} {}", exact[a][b]);
                }
            }
        }
    }

    #[test]
    fn example_sweep_and_grid_order() {
        let s = example_sweep(2000, 9);
        assert!(s.passed, "{s:?}");
        let fd = example_fd_check(FD_HALF_WIDTH, &[15, 31]).unwrap();
        assert!(fd.orders[0] > 1.8, "{fd:?}");
    }

    #[test]
    fn suite_passes_in_two_and_three_dimensions() {
        for o in [op(2, 2, 1.0), op(3, 2, 0.5)] {
            let r = rigidity_suite(&o, 500, 1, 7).unwrap();
            assert!(r.passed, "{r:?}");
        }
        assert!(rigidity_suite(&op(4, 2, 1.0), 10, 1, 7).is_err());
    }
}
