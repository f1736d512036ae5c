//! Small dense eigen-solvers and the sparse linear algebra used by the Newton solver.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending and
/// eigenvectors stored as the matching columns of an orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricEigen {
    /// `‖Q diag(λ) Qᵀ − M‖_F`.
    pub fn reconstruction_error(&self, m: &DMatrix<f64>) -> f64 {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.values.clone()));
        (&self.vectors * d * self.vectors.transpose() - m).norm()
    }
}

/// Closed form for 2×2, cyclic Jacobi otherwise.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> SymmetricEigen {
    assert!(m.is_square(), "eigen-decomposition needs a square matrix");
    match m.nrows() {
        1 => SymmetricEigen {
            values: vec![m[(0, 0)]],
            vectors: DMatrix::identity(1, 1),
        },
        2 => eigen_2x2(m[(0, 0)], m[(0, 1)], m[(1, 1)]),
        _ => jacobi_eigen(m, 1e-12),
    }
}

fn eigen_2x2(a: f64, b: f64, d: f64) -> SymmetricEigen {
    if b == 0.0 {
        let (values, vectors) = if a >= d {
            (vec![a, d], DMatrix::identity(2, 2))
        } else {
            (vec![d, a], DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
        };
        return SymmetricEigen { values, vectors };
    }
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let r = half.hypot(b);
    // The root that would cancel comes from the determinant.
    let det = a * d - b * b;
    let (l1, l2) = if mean >= 0.0 {
        (mean + r, det / (mean + r))
    } else {
        (det / (mean - r), mean - r)
    };
    // Eigenvector for l1: (b, l1 - a) or (l1 - d, b), whichever is larger.
    let (mut x, mut y) = if half >= 0.0 { (r + half, b) } else { (b, r - half) };
    let nrm = x.hypot(y);
    x /= nrm;
    y /= nrm;
    SymmetricEigen {
        values: vec![l1, l2],
        vectors: DMatrix::from_row_slice(2, 2, &[x, -y, y, x]),
    }
}

/// Cyclic Jacobi rotations until every off-diagonal entry is below
/// `tol · (1 + ‖M‖_F)`.
pub fn jacobi_eigen(m: &DMatrix<f64>, tol: f64) -> SymmetricEigen {
    let n = m.nrows();
    let mut a = m.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    let thresh = tol * (1.0 + m.norm());
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for r in (p + 1)..n {
                off = off.max(a[(p, r)].abs());
            }
        }
        if off <= thresh {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let theta = (a[(r, r)] - a[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[(i, p)];
                    let air = a[(i, r)];
                    a[(i, p)] = c * aip - s * air;
                    a[(i, r)] = s * aip + c * air;
                }
                for i in 0..n {
                    let api = a[(p, i)];
                    let ari = a[(r, i)];
                    a[(p, i)] = c * api - s * ari;
                    a[(r, i)] = s * api + c * ari;
                }
                a[(p, r)] = 0.0;
                a[(r, p)] = 0.0;
                for i in 0..n {
                    let qip = q[(i, p)];
                    let qir = q[(i, r)];
                    q[(i, p)] = c * qip - s * qir;
                    q[(i, r)] = s * qip + c * qir;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |row, col| q[(row, order[col])]);
    SymmetricEigen { values, vectors }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Rows given as `(column, value)` lists; repeated columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|e| e.0 == i).map_or(0.0, |e| e.1))
            .collect()
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut up = 0;
        for i in 0..self.n {
            for (c, _) in self.row(i) {
                if c < i {
                    lo = lo.max(i - c);
                } else {
                    up = up.max(c - i);
                }
            }
        }
        (lo, up)
    }
}

/// LU factorization with partial pivoting in band storage.
///
/// Row `r` holds columns `r - kl ..= r + ku + kl`; the extra `kl`
/// super-diagonals absorb fill from row interchanges.
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for i in 0..n {
            for (c, v) in a.row(i) {
                *lu.at_mut(i, c) = v;
            }
        }
        let reach = ku + kl;
        let scale = (0..n)
            .flat_map(|i| a.row(i).map(|e| e.1.abs()))
            .fold(0.0f64, f64::max);
        for col in 0..n {
            let last_row = (col + kl).min(n - 1);
            let mut piv = col;
            let mut best = lu.at(col, col).abs();
            for r in (col + 1)..=last_row {
                let v = lu.at(r, col).abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= f64::EPSILON * scale * 1e-4 || !best.is_finite() {
                return Err(Error::LinearSolve(format!("singular pivot at column {col}")));
            }
            lu.pivots[col] = piv;
            let last_col = (col + reach).min(n - 1);
            if piv != col {
                for c in col..=last_col {
                    let t = lu.at(col, c);
                    *lu.at_mut(col, c) = lu.at(piv, c);
                    *lu.at_mut(piv, c) = t;
                }
            }
            let d = lu.at(col, col);
            for r in (col + 1)..=last_row {
                let l = lu.at(r, col) / d;
                *lu.at_mut(r, col) = l;
                if l != 0.0 {
                    for c in (col + 1)..=last_col {
                        let u = lu.at(col, c);
                        *lu.at_mut(r, c) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn offset(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c + self.kl - r < self.width);
        r * self.width + (c + self.kl - r)
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        if c + self.kl < r || c + self.kl - r >= self.width {
            return 0.0;
        }
        self.data[self.offset(r, c)]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let o = self.offset(r, c);
        &mut self.data[o]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let reach = self.width - self.kl - 1;
        let mut x = b.to_vec();
        for col in 0..n {
            x.swap(col, self.pivots[col]);
            let xc = x[col];
            if xc != 0.0 {
                for r in (col + 1)..=(col + self.kl).min(n - 1) {
                    x[r] -= self.at(r, col) * xc;
                }
            }
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in (r + 1)..=(r + reach).min(n - 1) {
                s -= self.at(r, c) * x[c];
            }
            x[r] = s / self.at(r, r);
        }
        x
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned BiCGSTAB.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(x, d)| x * d).collect() };
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..max_iter {
        if norm2(&r) <= rel_tol * bnorm {
            return Ok(x);
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let phat = precond(&p);
        v = a.mul_vec(&phat);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) <= rel_tol * bnorm {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(x);
        }
        let shat = precond(&s);
        let t = a.mul_vec(&shat);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if omega == 0.0 {
            break;
        }
    }
    let res = norm2(&residual(a, &x, b)) / bnorm;
    if res <= rel_tol {
        Ok(x)
    } else {
        Err(Error::LinearSolve(format!(
            "BiCGSTAB stopped at relative residual {res:.3e}"
        )))
    }
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    a.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect()
}

/// Unknown counts up to this size use the banded direct solver.
pub const DIRECT_SOLVE_LIMIT: usize = 129 * 129;

/// Solves `A x = b` to relative residual `rel_tol`: banded LU (plus one round
/// of iterative refinement when needed) at desk scale, BiCGSTAB above it.
pub fn solve_linear(a: &CsrMatrix, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let (kl, ku) = a.bandwidths();
    let band_cost = a.dim() as f64 * kl as f64 * (kl + ku) as f64;
    if a.dim() > DIRECT_SOLVE_LIMIT || band_cost > 4e9 {
        return bicgstab(a, b, rel_tol, 20 * a.dim().max(100));
    }
    let lu = BandedLu::factor(a)?;
    let mut x = lu.solve(b);
    for _ in 0..3 {
        let r = residual(a, &x, b);
        let rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            return Ok(x);
        }
        let dx = lu.solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    let rel = norm2(&residual(a, &x, b)) / bnorm;
    if rel <= rel_tol {
        Ok(x)
    } else {
        Err(Error::LinearSolve(format!(
            "direct solve reached relative residual {rel:.3e} only"
        )))
    }
}
