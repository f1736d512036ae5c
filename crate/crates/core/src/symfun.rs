//! Elementary symmetric polynomials and the Sum Hessian operator
//! `S_m(λ) = σ_m(λ) + α σ_{m-1}(λ)` with its eigenvalue derivatives.
//!
//! Orders are signed: `σ_j = 0` for `j < 0` and for `j` larger than the
//! number of entries, `σ_0 = 1`. Deleted spectra `(λ|p)`, `(λ|pq)` are always
//! evaluated by running the product recurrence on the reduced vector.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 16;

/// An eigenvalue vector in storage order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() > MAX_DIM {
            return Err(Error::Argument(format!(
                "spectrum length {} outside 1..={MAX_DIM}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite eigenvalue {v}")));
        }
        Ok(Spectrum { values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entries in descending order. Storage order is left untouched.
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// A copy stored in descending order.
    pub fn sorted(&self) -> Spectrum {
        Spectrum {
            values: self.sorted_desc(),
        }
    }

    pub fn scaled(&self, t: f64) -> Spectrum {
        Spectrum {
            values: self.values.iter().map(|v| v * t).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl TryFrom<&[f64]> for Spectrum {
    type Error = Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        Spectrum::new(values.to_vec())
    }
}

/// The operator `S_k = σ_k + α σ_{k-1}` acting on spectra of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumHessianOp {
    n: usize,
    k: usize,
    alpha: f64,
}

impl SumHessianOp {
    pub fn new(n: usize, k: usize, alpha: f64) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::Argument(format!("dimension {n} outside 1..={MAX_DIM}")));
        }
        if k == 0 || k > n {
            return Err(Error::Argument(format!("order k={k} outside 1..={n}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
        }
        Ok(SumHessianOp { n, k, alpha })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same `n` and `α`, different order.
    pub fn with_order(&self, k: usize) -> Result<Self> {
        SumHessianOp::new(self.n, k, self.alpha)
    }

    fn check(&self, lam: &Spectrum) {
        assert_eq!(
            lam.n(),
            self.n,
            "spectrum length {} does not match operator dimension {}",
            lam.n(),
            self.n
        );
    }
}

/// Coefficients `[σ_0, …, σ_max]` of `Π_i (1 + t λ_i)`, truncated at `max_order`.
pub(crate) fn elementary(values: &[f64], max_order: usize) -> Vec<f64> {
    let top = max_order.min(values.len());
    let mut e = vec![0.0; top + 1];
    e[0] = 1.0;
    for (i, &v) in values.iter().enumerate() {
        let upper = (i + 1).min(top);
        for j in (1..=upper).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e
}

pub(crate) fn sigma_of(values: &[f64], j: isize) -> f64 {
    if j < 0 || j as usize > values.len() {
        return 0.0;
    }
    elementary(values, j as usize)[j as usize]
}

pub(crate) fn sum_hessian_of(alpha: f64, values: &[f64], m: isize) -> f64 {
    if m < 0 || m as usize > values.len() + 1 {
        return 0.0;
    }
    let e = elementary(values, m as usize);
    let at = |j: isize| -> f64 {
        if j < 0 {
            0.0
        } else {
            e.get(j as usize).copied().unwrap_or(0.0)
        }
    };
    at(m) + alpha * at(m - 1)
}

fn reduced(values: &[f64], drop: &[usize]) -> Result<Vec<f64>> {
    if drop.len() > 2 {
        return Err(Error::Argument(format!(
            "at most two deleted indices supported, got {}",
            drop.len()
        )));
    }
    for (pos, &d) in drop.iter().enumerate() {
        if d >= values.len() {
            return Err(Error::Argument(format!(
                "deleted index {d} out of range for n={}",
                values.len()
            )));
        }
        if drop[..pos].contains(&d) {
            return Err(Error::Argument(format!("deleted index {d} repeated")));
        }
    }
    Ok(values
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, &v)| v)
        .collect())
}

/// `[σ_0(λ), …, σ_n(λ)]`.
pub fn sigma_all(lam: &Spectrum) -> Vec<f64> {
    elementary(lam.values(), lam.n())
}

pub fn sigma(lam: &Spectrum, j: isize) -> f64 {
    sigma_of(lam.values(), j)
}

/// `σ_j` of `λ` with the entries listed in `drop` removed.
pub fn sigma_deleted(lam: &Spectrum, drop: &[usize], j: isize) -> Result<f64> {
    Ok(sigma_of(&reduced(lam.values(), drop)?, j))
}

/// `S_m(λ) = σ_m(λ) + α σ_{m-1}(λ)` using the operator's `α`.
pub fn sum_hessian(op: &SumHessianOp, lam: &Spectrum, m: isize) -> f64 {
    op.check(lam);
    sum_hessian_of(op.alpha, lam.values(), m)
}

pub fn sum_hessian_deleted(
    op: &SumHessianOp,
    lam: &Spectrum,
    drop: &[usize],
    m: isize,
) -> Result<f64> {
    op.check(lam);
    Ok(sum_hessian_of(op.alpha, &reduced(lam.values(), drop)?, m))
}

/// Gradient of `λ ↦ S_m(λ)`: component `p` is `S_{m-1}(λ|p)`.
pub(crate) fn gradient_of(alpha: f64, values: &[f64], m: isize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(values.len());
    (0..values.len())
        .map(|p| {
            buf.clear();
            buf.extend(values.iter().enumerate().filter(|(i, _)| *i != p).map(|(_, &v)| v));
            sum_hessian_of(alpha, &buf, m - 1)
        })
        .collect()
}

/// Hessian of `λ ↦ S_m(λ)`: entry `(p,q)` is `S_{m-2}(λ|pq)`, zero diagonal.
pub(crate) fn hessian_of(alpha: f64, values: &[f64], m: isize) -> DMatrix<f64> {
    let n = values.len();
    let mut out = DMatrix::zeros(n, n);
    let mut buf = Vec::with_capacity(n);
    for p in 0..n {
        for q in (p + 1)..n {
            buf.clear();
            buf.extend(
                values
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != p && *i != q)
                    .map(|(_, &v)| v),
            );
            let v = sum_hessian_of(alpha, &buf, m - 2);
            out[(p, q)] = v;
            out[(q, p)] = v;
        }
    }
    out
}

/// `S_k^{pp}(λ) = S_{k-1}(λ|p)` for `p = 1..n`.
pub fn first_derivative(op: &SumHessianOp, lam: &Spectrum) -> Vec<f64> {
    op.check(lam);
    gradient_of(op.alpha, lam.values(), op.k as isize)
}

/// `S_k^{pp,qq}(λ) = S_{k-2}(λ|pq)` off the diagonal, `0` on it.
pub fn second_derivative(op: &SumHessianOp, lam: &Spectrum) -> DMatrix<f64> {
    op.check(lam);
    hessian_of(op.alpha, lam.values(), op.k as isize)
}

/// Gradient of `S_m` for an arbitrary order `m` (same `α`).
pub fn first_derivative_order(op: &SumHessianOp, lam: &Spectrum, m: isize) -> Vec<f64> {
    op.check(lam);
    gradient_of(op.alpha, lam.values(), m)
}

/// Hessian of `S_m` for an arbitrary order `m` (same `α`).
pub fn second_derivative_order(op: &SumHessianOp, lam: &Spectrum, m: isize) -> DMatrix<f64> {
    op.check(lam);
    hessian_of(op.alpha, lam.values(), m)
}

/// Absolute residuals of the three expansion identities at order `k`:
///
/// * `S_k = λ_i S_{k-1}(λ|i) + S_k(λ|i)` (max over `i`)
/// * `Σ_i S_k(λ|i) = (n-k) S_k + α σ_{k-1}`
/// * `Σ_i λ_i S_{k-1}(λ|i) = k S_k - α σ_{k-1}`
pub fn identity_residuals(op: &SumHessianOp, lam: &Spectrum) -> [f64; 3] {
    op.check(lam);
    let v = lam.values();
    let (n, k, alpha) = (op.n as isize, op.k as isize, op.alpha);
    let s_k = sum_hessian_of(alpha, v, k);
    let sigma_km1 = sigma_of(v, k - 1);

    let mut expand = 0.0f64;
    let mut sum_deleted = 0.0;
    let mut sum_weighted = 0.0;
    let mut buf = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        buf.clear();
        buf.extend(v.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &x)| x));
        let e = elementary(&buf, k as usize);
        let at = |j: isize| if j < 0 { 0.0 } else { e.get(j as usize).copied().unwrap_or(0.0) };
        let s_k_i = at(k) + alpha * at(k - 1);
        let s_km1_i = at(k - 1) + alpha * at(k - 2);
        expand = expand.max((s_k - (v[i] * s_km1_i + s_k_i)).abs());
        sum_deleted += s_k_i;
        sum_weighted += v[i] * s_km1_i;
    }
    let rhs_sum = (n - k) as f64 * s_k + alpha * sigma_km1;
    let rhs_weighted = k as f64 * s_k - alpha * sigma_km1;
    [
        expand,
        (sum_deleted - rhs_sum).abs(),
        (sum_weighted - rhs_weighted).abs(),
    ]
}
