//! Axis-aligned tensor grids with Dirichlet data, second-order difference
//! stencils and per-node Hessian eigen-decompositions.
//!
//! Fields are stored on the padded lattice (interior plus one layer of
//! boundary nodes per side), row-major with the last axis fastest. Node
//! handles in the public API are interior indices `0..grid.interior_len()`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CsrMatrix};
use crate::symfun::Spectrum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
    h: Vec<f64>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let dim = lo.len();
        if !(2..=3).contains(&dim) || hi.len() != dim || cells.len() != dim {
            return Err(Error::Argument(format!(
                "grid needs matching corner/cell lists of length 2 or 3, got {}/{}/{}",
                lo.len(),
                hi.len(),
                cells.len()
            )));
        }
        for a in 0..dim {
            if cells[a] < 3 {
                return Err(Error::Argument(format!("axis {a}: need at least 3 interior nodes")));
            }
            if !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(Error::Argument(format!("axis {a}: need lo < hi")));
            }
        }
        let h = (0..dim).map(|a| (hi[a] - lo[a]) / (cells[a] + 1) as f64).collect();
        Ok(Grid { dim, lo, hi, cells, h })
    }

    /// `[lo, hi]^dim` with the same interior count on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Grid::new(vec![lo; dim], vec![hi; dim], vec![cells; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn max_h(&self) -> f64 {
        self.h.iter().copied().fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim).map(|a| 0.5 * (self.lo[a] + self.hi[a])).collect()
    }

    pub fn interior_len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn padded_len(&self) -> usize {
        self.cells.iter().map(|c| c + 2).product()
    }

    fn padded_extent(&self, a: usize) -> usize {
        self.cells[a] + 2
    }

    pub(crate) fn strides(&self) -> [usize; 3] {
        let mut s = [0; 3];
        let mut acc = 1;
        for a in (0..self.dim).rev() {
            s[a] = acc;
            acc *= self.padded_extent(a);
        }
        s
    }

    /// Padded multi-index of interior node `i`.
    pub(crate) fn interior_multi(&self, mut i: usize) -> [usize; 3] {
        let mut m = [0; 3];
        for a in (0..self.dim).rev() {
            m[a] = i % self.cells[a] + 1;
            i /= self.cells[a];
        }
        m
    }

    pub(crate) fn padded_multi(&self, mut p: usize) -> [usize; 3] {
        let mut m = [0; 3];
        for a in (0..self.dim).rev() {
            let e = self.padded_extent(a);
            m[a] = p % e;
            p /= e;
        }
        m
    }

    pub(crate) fn linear(&self, m: &[usize; 3]) -> usize {
        let s = self.strides();
        (0..self.dim).map(|a| m[a] * s[a]).sum()
    }

    /// Padded position of interior node `i`.
    pub fn padded_of(&self, i: usize) -> usize {
        self.linear(&self.interior_multi(i))
    }

    /// Interior index of a padded position, `None` on the boundary layer.
    pub fn interior_of(&self, p: usize) -> Option<usize> {
        let m = self.padded_multi(p);
        let mut idx = 0;
        for a in 0..self.dim {
            if m[a] == 0 || m[a] == self.cells[a] + 1 {
                return None;
            }
            idx = idx * self.cells[a] + (m[a] - 1);
        }
        Some(idx)
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        self.interior_of(p).is_none()
    }

    pub fn padded_coord(&self, p: usize) -> Vec<f64> {
        let m = self.padded_multi(p);
        (0..self.dim).map(|a| self.lo[a] + m[a] as f64 * self.h[a]).collect()
    }

    pub fn coord(&self, i: usize) -> Vec<f64> {
        self.padded_coord(self.padded_of(i))
    }

    /// Distance from interior node `i` to the box boundary, in units of the
    /// local spacing (`1` for the first interior layer).
    pub fn layers_from_boundary(&self, i: usize) -> usize {
        let m = self.interior_multi(i);
        (0..self.dim)
            .map(|a| m[a].min(self.cells[a] + 1 - m[a]))
            .min()
            .unwrap_or(0)
    }

    /// Same box, spacing halved.
    pub fn refined(&self) -> Grid {
        Grid::new(
            self.lo.clone(),
            self.hi.clone(),
            self.cells.iter().map(|c| 2 * (c + 1) - 1).collect(),
        )
        .expect("refinement of a valid grid is valid")
    }
}

/// A scalar field on a grid: interior unknowns plus the Dirichlet trace on
/// the boundary layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    grid: Grid,
    nodes: Vec<f64>,
}

impl GridField {
    /// Samples `f` at every node, boundary included.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &Grid, f: F) -> Self {
        let nodes = (0..grid.padded_len()).map(|p| f(&grid.padded_coord(p))).collect();
        GridField {
            grid: grid.clone(),
            nodes,
        }
    }

    /// Interior values (interior order) with boundary trace `g`.
    pub fn from_interior<G: Fn(&[f64]) -> f64>(grid: &Grid, interior: &[f64], g: G) -> Result<Self> {
        if interior.len() != grid.interior_len() {
            return Err(Error::Argument(format!(
                "interior length {} does not match grid ({})",
                interior.len(),
                grid.interior_len()
            )));
        }
        let mut field = GridField::from_fn(grid, g);
        field.set_interior(interior);
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn padded(&self) -> &[f64] {
        &self.nodes
    }

    pub fn value(&self, i: usize) -> f64 {
        self.nodes[self.grid.padded_of(i)]
    }

    pub fn interior_values(&self) -> Vec<f64> {
        (0..self.grid.interior_len()).map(|i| self.value(i)).collect()
    }

    pub fn set_interior(&mut self, interior: &[f64]) {
        assert_eq!(interior.len(), self.grid.interior_len());
        for (i, &v) in interior.iter().enumerate() {
            let p = self.grid.padded_of(i);
            self.nodes[p] = v;
        }
    }

    /// Replaces the boundary trace by samples of `g`.
    pub fn set_boundary<G: Fn(&[f64]) -> f64>(&mut self, g: G) {
        for p in 0..self.grid.padded_len() {
            if self.grid.is_boundary(p) {
                self.nodes[p] = g(&self.grid.padded_coord(p));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(|v| v.is_finite())
    }

    /// Largest interior `|self - other|` (same grid).
    pub fn max_interior_diff(&self, other: &GridField) -> f64 {
        assert_eq!(self.grid, other.grid);
        (0..self.grid.interior_len())
            .map(|i| (self.value(i) - other.value(i)).abs())
            .fold(0.0, f64::max)
    }

    /// Maximum over interior nodes with its node, first index on ties.
    pub fn interior_argmax(&self) -> (usize, f64) {
        self.argmax_where(|_| true).expect("grids have interior nodes")
    }

    pub(crate) fn argmax_where<P: Fn(usize) -> bool>(&self, keep: P) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.grid.interior_len() {
            if !keep(i) {
                continue;
            }
            let v = self.value(i);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best
    }

    /// CSV with a header naming the coordinates and the field.
    pub fn to_csv(&self, name: &str, interior_only: bool) -> String {
        const AXES: [&str; 3] = ["x", "y", "z"];
        let mut out = String::new();
        for a in 0..self.grid.dim {
            out.push_str(AXES[a]);
            out.push(',');
        }
        out.push_str(name);
        out.push('\n');
        for p in 0..self.grid.padded_len() {
            if interior_only && self.grid.is_boundary(p) {
                continue;
            }
            for x in self.grid.padded_coord(p) {
                let _ = write!(out, "{x:?},");
            }
            let _ = writeln!(out, "{:?}", self.nodes[p]);
        }
        out
    }

    /// Tensor-product cubic interpolation onto `target` (same box); the
    /// boundary trace of the result is `g`.
    pub fn interpolate_to<G: Fn(&[f64]) -> f64>(&self, target: &Grid, g: G) -> GridField {
        let grid = &self.grid;
        let dim = grid.dim;
        let mut out = GridField::from_fn(target, g);
        for i in 0..target.interior_len() {
            let x = target.coord(i);
            let mut starts = [0usize; 3];
            let mut weights = [[0.0f64; 4]; 3];
            for a in 0..dim {
                let s = (x[a] - grid.lo[a]) / grid.h[a];
                let last = grid.cells[a] + 1;
                let base = (s.floor() as isize - 1).clamp(0, last as isize - 3) as usize;
                starts[a] = base;
                for j in 0..4 {
                    let mut w = 1.0;
                    for l in 0..4 {
                        if l != j {
                            w *= (s - (base + l) as f64) / (j as f64 - l as f64);
                        }
                    }
                    weights[a][j] = w;
                }
            }
            let mut acc = 0.0;
            let count = 4usize.pow(dim as u32);
            for c in 0..count {
                let mut m = [0usize; 3];
                let mut w = 1.0;
                let mut rest = c;
                for a in 0..dim {
                    let j = rest % 4;
                    rest /= 4;
                    m[a] = starts[a] + j;
                    w *= weights[a][j];
                }
                acc += w * self.nodes[grid.linear(&m)];
            }
            let p = target.padded_of(i);
            out.nodes[p] = acc;
        }
        out
    }
}

/// Second differences at a node with their eigen-decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianSample {
    pub matrix: DMatrix<f64>,
    /// Sorted descending.
    pub eigenvalues: Spectrum,
    /// Columns match `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

/// Second-difference matrix read from the padded array at padded position `p`.
pub(crate) fn hessian_matrix_padded(grid: &Grid, nodes: &[f64], p: usize) -> DMatrix<f64> {
    let dim = grid.dim;
    let s = grid.strides();
    let h = &grid.h;
    let mut m = DMatrix::zeros(dim, dim);
    let c = nodes[p];
    for a in 0..dim {
        m[(a, a)] = (nodes[p + s[a]] - 2.0 * c + nodes[p - s[a]]) / (h[a] * h[a]);
        for b in (a + 1)..dim {
            let v = (nodes[p + s[a] + s[b]] - nodes[p + s[a] - s[b]] - nodes[p - s[a] + s[b]]
                + nodes[p - s[a] - s[b]])
                / (4.0 * h[a] * h[b]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

pub(crate) fn gradient_padded(grid: &Grid, nodes: &[f64], p: usize) -> Vec<f64> {
    let s = grid.strides();
    (0..grid.dim)
        .map(|a| (nodes[p + s[a]] - nodes[p - s[a]]) / (2.0 * grid.h[a]))
        .collect()
}

/// Diagonal entries by 3-point second differences, mixed entries by the
/// 4-point cross stencil; boundary neighbours come from the trace.
pub fn hessian_at(u: &GridField, node: usize) -> HessianSample {
    let matrix = hessian_matrix_padded(&u.grid, &u.nodes, u.grid.padded_of(node));
    let eig = linalg::symmetric_eigen(&matrix);
    HessianSample {
        eigenvalues: Spectrum::new(eig.values).expect("finite field gives finite eigenvalues"),
        eigenvectors: eig.vectors,
        matrix,
    }
}

/// Central first differences.
pub fn gradient_at(u: &GridField, node: usize) -> Vec<f64> {
    gradient_padded(&u.grid, &u.nodes, u.grid.padded_of(node))
}

/// Trace of the second-difference matrix at every interior node; the
/// boundary layer of the result is zero.
pub fn laplacian_field(u: &GridField) -> GridField {
    let grid = &u.grid;
    let s = grid.strides();
    let mut out = GridField {
        grid: grid.clone(),
        nodes: vec![0.0; grid.padded_len()],
    };
    for i in 0..grid.interior_len() {
        let p = grid.padded_of(i);
        let c = u.nodes[p];
        out.nodes[p] = (0..grid.dim)
            .map(|a| (u.nodes[p + s[a]] - 2.0 * c + u.nodes[p - s[a]]) / (grid.h[a] * grid.h[a]))
            .sum();
    }
    out
}

/// Discrete harmonic function (standard 5/7-point Laplacian) with boundary trace `g`.
pub fn harmonic_extension<G: Fn(&[f64]) -> f64>(grid: &Grid, g: G) -> Result<GridField> {
    let mut field = GridField::from_fn(grid, g);
    let n = grid.interior_len();
    let s = grid.strides();
    let mut rows = Vec::with_capacity(n);
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let p = grid.padded_of(i);
        let mut row = Vec::with_capacity(2 * grid.dim + 1);
        let mut diag = 0.0;
        for a in 0..grid.dim {
            let w = 1.0 / (grid.h[a] * grid.h[a]);
            diag -= 2.0 * w;
            for q in [p + s[a], p - s[a]] {
                match grid.interior_of(q) {
                    Some(j) => row.push((j, w)),
                    None => rhs[i] -= w * field.nodes[q],
                }
            }
        }
        row.push((i, diag));
        rows.push(row);
    }
    let a = CsrMatrix::from_rows(rows);
    let x = linalg::solve_linear(&a, &rhs, 1e-12)?;
    field.set_interior(&x);
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(cells: usize) -> Grid {
        Grid::cube(2, -1.0, 1.0, cells).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::cube(2, -1.0, 1.0, 2).is_err());
        assert!(Grid::cube(1, -1.0, 1.0, 5).is_err());
        assert!(Grid::cube(4, -1.0, 1.0, 5).is_err());
        assert!(Grid::new(vec![0.0, 1.0], vec![1.0, 1.0], vec![4, 4]).is_err());
        let g = square(7);
        assert_eq!(g.h(), &[0.25, 0.25]);
        assert_eq!(g.interior_len(), 49);
        assert_eq!(g.padded_len(), 81);
        assert_eq!(g.refined().cells(), &[15, 15]);
    }

    #[test]
    fn index_maps_are_consistent() {
        let g = Grid::new(vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![3, 4, 5]).unwrap();
        for i in 0..g.interior_len() {
            let p = g.padded_of(i);
            assert_eq!(g.interior_of(p), Some(i));
        }
        let boundary = (0..g.padded_len()).filter(|&p| g.is_boundary(p)).count();
        assert_eq!(boundary, g.padded_len() - g.interior_len());
        assert_eq!(g.coord(0), vec![0.25, 0.4, 0.5]);
    }

    #[test]
    fn quadratics_are_stencil_exact() {
        let a = [[1.5, -0.3, 0.2], [-0.3, 0.7, 0.4], [0.2, 0.4, -0.9]];
        let q = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * a[i][j] * x[i] * x[j];
                }
            }
            s + 0.3 * x[0] - 1.0
        };
        let g = Grid::cube(3, -1.0, 1.0, 5).unwrap();
        let u = GridField::from_fn(&g, q);
        let am = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        let expect = linalg::symmetric_eigen(&am).values;
        for i in 0..g.interior_len() {
            let hs = hessian_at(&u, i);
            assert!((&hs.matrix - &am).amax() < 1e-12);
            for (l, e) in hs.eigenvalues.values().iter().zip(&expect) {
                assert!((l - e).abs() < 1e-11);
            }
            assert_eq!(hs.matrix[(0, 1)].to_bits(), hs.matrix[(1, 0)].to_bits());
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(hs.eigenvalues.values().to_vec()));
            let rec = &hs.eigenvectors * d * hs.eigenvectors.transpose();
            assert!((rec - &hs.matrix).norm() <= 1e-10 * (1.0 + hs.matrix.norm()));
        }
    }

    #[test]
    fn quartic_truncation_term() {
        let g = square(9);
        let u = GridField::from_fn(&g, |x| x[0].powi(4));
        let h = g.h()[0];
        for i in 0..g.interior_len() {
            let x = g.coord(i)[0];
            let m = hessian_at(&u, i).matrix;
            assert!((m[(0, 0)] - (12.0 * x * x + 2.0 * h * h)).abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_exactness() {
        let g = square(6);
        let lin = GridField::from_fn(&g, |x| 2.0 * x[0] - 3.0 * x[1] + 0.5);
        let quad = GridField::from_fn(&g, |x| 0.5 * 1.7 * (x[0] * x[0] + x[1] * x[1]));
        for i in 0..g.interior_len() {
            let gl = gradient_at(&lin, i);
            assert!((gl[0] - 2.0).abs() < 1e-12 && (gl[1] + 3.0).abs() < 1e-12);
            let x = g.coord(i);
            let gq = gradient_at(&quad, i);
            assert!((gq[0] - 1.7 * x[0]).abs() < 1e-12 && (gq[1] - 1.7 * x[1]).abs() < 1e-12);
        }
    }

    fn sin_profile_errors(cells: usize) -> (f64, f64, f64) {
        let g = square(cells);
        let pi = std::f64::consts::PI;
        let u = GridField::from_fn(&g, |x| (pi * x[0]).sin() * (0.5 * pi * x[1]).cos());
        let mut eg = 0.0f64;
        let mut eh = 0.0f64;
        for i in 0..g.interior_len() {
            let x = g.coord(i);
            let gr = gradient_at(&u, i);
            eg = eg.max((gr[0] - pi * (pi * x[0]).cos() * (0.5 * pi * x[1]).cos()).abs());
            let m = hessian_at(&u, i).matrix;
            let exact_xy = -0.5 * pi * pi * (pi * x[0]).cos() * (0.5 * pi * x[1]).sin();
            eh = eh.max((m[(0, 1)] - exact_xy).abs());
            eh = eh.max((m[(0, 0)] + pi * pi * (pi * x[0]).sin() * (0.5 * pi * x[1]).cos()).abs());
        }
        (g.h()[0], eg, eh)
    }

    #[test]
    fn second_order_convergence() {
        let levels: Vec<_> = [7, 15, 31].iter().map(|&c| sin_profile_errors(c)).collect();
        for w in levels.windows(2) {
            let (h0, g0, m0) = w[0];
            let (h1, g1, m1) = w[1];
            let ratio = (h0 / h1).ln();
            assert!((g0 / g1).ln() / ratio >= 1.9, "gradient order");
            assert!((m0 / m1).ln() / ratio >= 1.8, "hessian order");
        }
    }

    #[test]
    fn laplacian_examples() {
        let g = square(7);
        let u = GridField::from_fn(&g, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let l = laplacian_field(&u);
        for i in 0..g.interior_len() {
            assert!((l.value(i) - 2.0).abs() < 1e-12);
            let s: f64 = hessian_at(&u, i).eigenvalues.values().iter().sum();
            assert!((s - l.value(i)).abs() < 1e-10);
        }
        let harm = harmonic_extension(&g, |x| (x[0] * 3.0).exp() * (3.0 * x[1]).cos() + x[0] * x[1]).unwrap();
        let lh = laplacian_field(&harm);
        let scale = harm.padded().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..g.interior_len() {
            assert!(lh.value(i).abs() <= 1e-10 * scale.max(1.0) / g.h()[0].powi(2) * g.h()[0].powi(2) * 1e2);
        }
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let g = Grid::cube(2, -1.0, 1.0, 7).unwrap();
        let f = |x: &[f64]| x[0].powi(3) - 2.0 * x[0] * x[1] * x[1] + x[1] + 0.25;
        let c = GridField::from_fn(&g, f);
        let fine = g.refined();
        let u = c.interpolate_to(&fine, f);
        let exact = GridField::from_fn(&fine, f);
        assert!(u.max_interior_diff(&exact) < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let g = square(3);
        let u = GridField::from_fn(&g, |x| x[0] + x[1]);
        let csv = u.to_csv("u", true);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,y,u"));
        assert_eq!(csv.lines().count(), 1 + 9);
        assert_eq!(u.to_csv("u", false).lines().count(), 1 + 25);
    }
}
