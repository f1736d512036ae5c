//! Margin oracles for the inequalities satisfied by `S_k` on its cones, and
//! randomized sweeps that turn them into pass/fail reports.
//!
//! Every oracle returns `lhs - rhs` (or a normalized form of it); a report
//! passes when the smallest normalized margin stays above `-tolerance`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones;
use crate::error::{Error, Result};
use crate::symfun::{self, Spectrum, SumHessianOp};

/// A two-sided inequality evaluated at one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub lhs: f64,
    pub rhs: f64,
}

impl Margin {
    pub fn value(&self) -> f64 {
        self.lhs - self.rhs
    }

    /// `(lhs - rhs) / (1 + |lhs| + |rhs|)`.
    pub fn normalized(&self) -> f64 {
        self.value() / (1.0 + self.lhs.abs() + self.rhs.abs())
    }
}

fn admissible(op: &SumHessianOp, lam: &Spectrum) -> Result<Vec<f64>> {
    let m = cones::admissible_margins(op, lam);
    if m.iter().all(|&v| v > 0.0) {
        Ok(m)
    } else {
        Err(Error::Domain(format!("spectrum {:?} is not admissible for {op:?}", lam.values())))
    }
}

fn quadratic_form(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let mut s = 0.0;
    for p in 0..n {
        for q in 0..n {
            s += m[(p, q)] * w[p] * w[q];
        }
    }
    s
}

fn directional(grad: &[f64], w: &[f64]) -> f64 {
    grad.iter().zip(w).map(|(g, x)| g * x).sum()
}

#[derive(Debug, Clone, Copy)]
struct OrderTerms {
    value: f64,
    /// `Σ S_m^{pp,qq} w_p w_q`.
    hess: f64,
    /// `Σ S_m^{pp} w_p`.
    grad: f64,
}

fn order_terms(op: &SumHessianOp, lam: &Spectrum, w: &[f64], value: f64, m: usize) -> OrderTerms {
    let m = m as isize;
    OrderTerms {
        value,
        hess: quadratic_form(&symfun::second_derivative_order(op, lam, m), w),
        grad: directional(&symfun::first_derivative_order(op, lam, m), w),
    }
}

fn check_quotient(op: &SumHessianOp, l: usize, lam: &Spectrum, w: &[f64]) -> Result<Vec<f64>> {
    let k = op.k();
    if l == 0 || l >= k {
        return Err(Error::Argument(format!("need 1 <= l < k, got l={l}, k={k}")));
    }
    if w.len() != op.n() {
        return Err(Error::Argument(format!("direction has length {}, expected {}", w.len(), op.n())));
    }
    admissible(op, lam)
}

fn plain_form(k: &OrderTerms, l: &OrderTerms, theta: f64) -> Margin {
    let (a, b) = (k.grad / k.value, l.grad / l.value);
    Margin {
        lhs: -k.hess / k.value + l.hess / l.value,
        rhs: (a - b) * ((theta - 1.0) * a - (theta + 1.0) * b),
    }
}

fn weighted_form(k: &OrderTerms, l: &OrderTerms, theta: f64, delta: f64) -> Margin {
    let b = l.grad / l.value;
    Margin {
        lhs: -k.hess + (1.0 - theta + theta / delta) * k.grad * k.grad / k.value,
        rhs: k.value * (theta + 1.0 - delta * theta) * b * b - k.value / l.value * l.hess,
    }
}

/// Second-order concavity inequality for `(S_k / S_l)^{1/(k-l)}` along the
/// direction `w` (the third derivatives `u_{pph}` in a maximum-principle
/// computation):
///
/// `-S_k^{pp,qq} w_p w_q / S_k + S_l^{pp,qq} w_p w_q / S_l
///   >= (Ṡ_k/S_k - Ṡ_l/S_l)((ϑ-1) Ṡ_k/S_k - (ϑ+1) Ṡ_l/S_l)`, `Ṡ_m = Σ S_m^{pp} w_p`.
pub fn quotient_concavity_margin(op: &SumHessianOp, l: usize, lam: &Spectrum, w: &[f64]) -> Result<Margin> {
    let m = check_quotient(op, l, lam, w)?;
    let k = op.k();
    let tk = order_terms(op, lam, w, m[k - 1], k);
    let tl = order_terms(op, lam, w, m[l - 1], l);
    Ok(plain_form(&tk, &tl, 1.0 / (k - l) as f64))
}

/// The same inequality rearranged with a Cauchy–Schwarz parameter `δ`:
///
/// `-S_k^{pp,qq} w_p w_q + (1 - ϑ + ϑ/δ) Ṡ_k² / S_k
///   >= S_k (ϑ + 1 - δϑ)(Ṡ_l/S_l)² - (S_k/S_l) S_l^{pp,qq} w_p w_q`.
pub fn quotient_concavity_weighted_margin(
    op: &SumHessianOp,
    l: usize,
    delta: f64,
    lam: &Spectrum,
    w: &[f64],
) -> Result<Margin> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let m = check_quotient(op, l, lam, w)?;
    let k = op.k();
    let tk = order_terms(op, lam, w, m[k - 1], k);
    let tl = order_terms(op, lam, w, m[l - 1], l);
    Ok(weighted_form(&tk, &tl, 1.0 / (k - l) as f64, delta))
}

/// Plain margin and one weighted margin per `δ`, for every `l < k`, sharing
/// the order-`k` derivatives.
fn quotient_all_orders(op: &SumHessianOp, lam: &Spectrum, w: &[f64], deltas: &[f64]) -> Vec<(f64, Vec<f64>)> {
    let m = cones::admissible_margins(op, lam);
    let k = op.k();
    let tk = order_terms(op, lam, w, m[k - 1], k);
    (1..k)
        .map(|l| {
            let tl = order_terms(op, lam, w, m[l - 1], l);
            let theta = 1.0 / (k - l) as f64;
            let ws = deltas.iter().map(|&d| weighted_form(&tk, &tl, theta, d).normalized()).collect();
            (plain_form(&tk, &tl, theta).normalized(), ws)
        })
        .collect()
}

/// A symmetric function of eigenvalues with exact derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymFn {
    Sigma(usize),
    SumHessian(SumHessianOp),
}

impl SymFn {
    fn parts(&self) -> (f64, isize) {
        match *self {
            SymFn::Sigma(k) => (0.0, k as isize),
            SymFn::SumHessian(op) => (op.alpha(), op.k() as isize),
        }
    }

    pub fn value(&self, values: &[f64]) -> f64 {
        let (a, k) = self.parts();
        symfun::sum_hessian_of(a, values, k)
    }

    pub fn gradient(&self, values: &[f64]) -> Vec<f64> {
        let (a, k) = self.parts();
        symfun::gradient_of(a, values, k)
    }

    pub fn hessian(&self, values: &[f64]) -> DMatrix<f64> {
        let (a, k) = self.parts();
        symfun::hessian_of(a, values, k)
    }

    /// `F(M)` from sums of principal minors, without an eigen-decomposition.
    pub fn of_matrix(&self, m: &DMatrix<f64>) -> f64 {
        match *self {
            SymFn::Sigma(k) => principal_minor_sum(m, k),
            SymFn::SumHessian(op) => {
                principal_minor_sum(m, op.k()) + op.alpha() * principal_minor_sum(m, op.k() - 1)
            }
        }
    }
}

/// `σ_k` of the eigenvalues of a symmetric matrix: the sum of its `k × k`
/// principal minors.
pub fn principal_minor_sum(m: &DMatrix<f64>, k: usize) -> f64 {
    let n = m.nrows();
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut total = 0.0;
    loop {
        let sub = DMatrix::from_fn(k, k, |i, j| m[(idx[i], idx[j])]);
        total += sub.determinant();
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return total;
        }
        idx[pos - 1] += 1;
        for j in pos..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minimum eigenvalue gap accepted by `spectral_second_derivative`.
pub const MIN_EIGEN_GAP: f64 = 1e-6;

/// Second derivative of `B ↦ F(λ(A + tB))` at `t = 0`, `A = diag(kappa)`:
/// `Σ f̈^{jk} B_jj B_kk + 2 Σ_{j<k} (ḟ^j - ḟ^k)/(κ_j - κ_k) B_jk²`.
pub fn spectral_second_derivative(f: &SymFn, kappa: &[f64], b: &DMatrix<f64>) -> Result<f64> {
    let n = kappa.len();
    if b.nrows() != n || b.ncols() != n {
        return Err(Error::Argument(format!("direction must be {n}×{n}")));
    }
    for j in 0..n {
        for k in (j + 1)..n {
            if (kappa[j] - kappa[k]).abs() < MIN_EIGEN_GAP {
                return Err(Error::Degenerate(format!(
                    "eigenvalues {} and {} closer than {MIN_EIGEN_GAP}",
                    kappa[j], kappa[k]
                )));
            }
        }
    }
    let g = f.gradient(kappa);
    let h = f.hessian(kappa);
    let mut total = 0.0;
    for j in 0..n {
        for k in 0..n {
            total += h[(j, k)] * b[(j, j)] * b[(k, k)];
        }
    }
    for j in 0..n {
        for k in (j + 1)..n {
            total += 2.0 * (g[j] - g[k]) / (kappa[j] - kappa[k]) * b[(j, k)] * b[(j, k)];
        }
    }
    Ok(total)
}

/// Lower bounds for `S_s` by leading products of the ordered spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderedProductMargins {
    /// `min_{s<k} S_s - (λ₁⋯λ_s + α λ₁⋯λ_{s-1})`; `+∞` for `k = 1`.
    pub with_alpha: f64,
    /// Same, each term normalized by `1 + |S_s| + |rhs|`.
    pub with_alpha_normalized: f64,
    /// `min_{s<k} (S_s - λ₁⋯λ_s) / (1 + |S_s| + |λ₁⋯λ_s|)`.
    pub product_only: f64,
    /// `min_{j<k} λ_j S_k^{jj} / S_k`; `+∞` for `k = 1`.
    pub theta: f64,
}

pub fn ordered_product_margins(op: &SumHessianOp, lam: &Spectrum) -> Result<OrderedProductMargins> {
    let m = admissible(op, lam)?;
    let sorted = lam.sorted();
    let v = sorted.values();
    let k = op.k();
    let mut out = OrderedProductMargins {
        with_alpha: f64::INFINITY,
        with_alpha_normalized: f64::INFINITY,
        product_only: f64::INFINITY,
        theta: f64::INFINITY,
    };
    let mut prefix = 1.0;
    for s in 1..k {
        let prev = prefix;
        prefix *= v[s - 1];
        let s_s = m[s - 1];
        let with_alpha = Margin {
            lhs: s_s,
            rhs: prefix + op.alpha() * prev,
        };
        out.with_alpha = out.with_alpha.min(with_alpha.value());
        out.with_alpha_normalized = out.with_alpha_normalized.min(with_alpha.normalized());
        out.product_only = out.product_only.min(Margin { lhs: s_s, rhs: prefix }.normalized());
    }
    let grad = symfun::first_derivative(op, &sorted);
    let s_k = m[k - 1];
    for j in 0..k.saturating_sub(1) {
        out.theta = out.theta.min(v[j] * grad[j] / s_k);
    }
    Ok(out)
}

/// `S_k² - S_{k-1} S_{k+1}` normalized by `1 + S_k²`; for `k = n` the top
/// term uses `σ_{n+1} = 0`, i.e. `S_{n+1} = α σ_n`, flagged in the result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumNewtonMargin {
    pub margin: f64,
    pub top_order_convention: bool,
}

pub fn sum_newton_margin(op: &SumHessianOp, lam: &Spectrum) -> Result<SumNewtonMargin> {
    let m = admissible(op, lam)?;
    let k = op.k() as isize;
    let s_k = m[op.k() - 1];
    let below = symfun::sum_hessian(op, lam, k - 1);
    let above = symfun::sum_hessian(op, lam, k + 1);
    Ok(SumNewtonMargin {
        margin: (s_k * s_k - below * above) / (1.0 + s_k * s_k),
        top_order_convention: op.k() == op.n(),
    })
}

/// Margins of the bounds for spectra in `Γ_k` with `S_k <= N₀`, using
/// `K₀ = n (N₀/α)^{1/(k-1)}` and `κ = λ + K₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedSpectrumMargins {
    pub k0: f64,
    pub c0: f64,
    /// `(N₀/α)^{1/(k-1)} - λ_{k-1}`.
    pub upper: f64,
    /// `λ_n + K₀`.
    pub lower: f64,
    /// `min_i 2κ₁^{k+2} S_k^{11} - κ_i^{k+2} S_k^{ii}`; holds for large `λ₁` only.
    pub leading_weight: f64,
    /// `S_k - (1 - ε₀) λ₁ S_k^{11}`; holds for large `λ₁` only.
    pub leading_share: f64,
    /// `min_i C₀ S_k - λ_i S_k^{ii}` with `C₀ = 2 + K₀ C(n,k)/α`.
    pub uniform_share: f64,
}

pub fn bounded_spectrum_margins(
    op: &SumHessianOp,
    lam: &Spectrum,
    n0: f64,
    eps0: f64,
) -> Result<BoundedSpectrumMargins> {
    let (n, k, alpha) = (op.n(), op.k(), op.alpha());
    if k < 2 {
        return Err(Error::Argument("bounds need k >= 2".into()));
    }
    if !cones::in_gamma_k_with(lam, k, 0.0).member || symfun::sigma(lam, k as isize) <= 0.0 {
        return Err(Error::Domain(format!("spectrum {:?} is not in the k-convex cone", lam.values())));
    }
    let s_k = symfun::sum_hessian(op, lam, k as isize);
    if s_k > n0 {
        return Err(Error::Precondition(format!("S_k = {s_k} exceeds N0 = {n0}")));
    }
    let root = (n0 / alpha).powf(1.0 / (k - 1) as f64);
    let k0 = n as f64 * root;
    let c0 = 2.0 + k0 * crate::solver::binomial(n, k) / alpha;
    let sorted = lam.sorted();
    let v = sorted.values();
    let grad = symfun::first_derivative(op, &sorted);
    let kappa: Vec<f64> = v.iter().map(|x| x + k0).collect();
    let p = (k + 2) as i32;
    let lead = 2.0 * kappa[0].powi(p) * grad[0];
    Ok(BoundedSpectrumMargins {
        k0,
        c0,
        upper: root - v[k - 2],
        lower: v[n - 1] + k0,
        leading_weight: (0..n).map(|i| lead - kappa[i].powi(p) * grad[i]).fold(f64::INFINITY, f64::min),
        leading_share: s_k - (1.0 - eps0) * v[0] * grad[0],
        uniform_share: (0..n).map(|i| c0 * s_k - v[i] * grad[i]).fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ProbeOutcome {
    Margin(f64),
    /// The midpoint left the cone; nothing was tested.
    Skipped,
}

/// Midpoint concavity of `S_k^{1/k}` (`l = None`) or `(S_k/S_l)^{1/(k-l)}`:
/// `g(mid) - (g(a) + g(b))/2`, normalized by `1 + max(|g|)`.
pub fn concavity_probe(op: &SumHessianOp, l: Option<usize>, a: &Spectrum, b: &Spectrum) -> Result<ProbeOutcome> {
    let k = op.k();
    let l = l.unwrap_or(0);
    if l >= k {
        return Err(Error::Argument(format!("need l < k, got l={l}, k={k}")));
    }
    admissible(op, a)?;
    admissible(op, b)?;
    let mid = Spectrum::new(a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect())?;
    if !cones::strictly_admissible(op, &mid) {
        return Ok(ProbeOutcome::Skipped);
    }
    let g = |lam: &Spectrum| {
        let num = symfun::sum_hessian(op, lam, k as isize);
        let den = symfun::sum_hessian(op, lam, l as isize);
        (num / den).powf(1.0 / (k - l) as f64)
    };
    let (ga, gb, gm) = (g(a), g(b), g(&mid));
    let scale = 1.0 + ga.abs().max(gb.abs()).max(gm.abs());
    Ok(ProbeOutcome::Margin((gm - 0.5 * (ga + gb)) / scale))
}

/// `(σ_{k-1} - σ₁^{1/(k-1)} σ_k^{(k-2)/(k-1)}, σ_k σ_{k-1} - σ_{k-2} σ_{k+1})`,
/// each normalized by `1 + |lhs| + |rhs|`.
pub fn newton_maclaurin_margins(lam: &Spectrum, k: usize) -> Result<(f64, f64)> {
    if k < 2 || k > lam.n() {
        return Err(Error::Argument(format!("need 2 <= k <= n, got k={k}")));
    }
    let s = |j: isize| symfun::sigma(lam, j);
    let ki = k as isize;
    if s(ki) < 0.0 {
        return Err(Error::Precondition(format!("σ_k = {} is negative", s(ki))));
    }
    if !cones::in_gamma_k_with(lam, k, 0.0).member {
        return Err(Error::Domain(format!("spectrum {:?} is not in the k-convex cone", lam.values())));
    }
    let e = 1.0 / (k - 1) as f64;
    let first = Margin {
        lhs: s(ki - 1),
        rhs: s(1).powf(e) * s(ki).powf((k - 2) as f64 * e),
    };
    let second = Margin {
        lhs: s(ki) * s(ki - 1),
        rhs: s(ki - 2) * s(ki + 1),
    };
    Ok((first.normalized(), second.normalized()))
}

// Hyper-dual numbers a + b ε₁ + c ε₂ + d ε₁ε₂ for exact first and mixed second
// derivatives of the coefficient recurrence.
#[derive(Debug, Clone, Copy)]
struct Hd(f64, f64, f64, f64);

impl Hd {
    fn mul(self, o: Hd) -> Hd {
        Hd(
            self.0 * o.0,
            self.0 * o.1 + self.1 * o.0,
            self.0 * o.2 + self.2 * o.0,
            self.0 * o.3 + self.1 * o.2 + self.2 * o.1 + self.3 * o.0,
        )
    }

    fn add(self, o: Hd) -> Hd {
        Hd(self.0 + o.0, self.1 + o.1, self.2 + o.2, self.3 + o.3)
    }
}

/// `(S_m, ∂_p S_m, ∂_q S_m, ∂_p∂_q S_m)` by automatic differentiation.
fn dual_sum_hessian(alpha: f64, values: &[f64], m: usize, p: usize, q: usize) -> Hd {
    let mut e = vec![Hd(0.0, 0.0, 0.0, 0.0); m + 1];
    e[0] = Hd(1.0, 0.0, 0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let x = Hd(v, (i == p) as u8 as f64, (i == q) as u8 as f64, 0.0);
        for j in (1..=m.min(i + 1)).rev() {
            e[j] = e[j].add(x.mul(e[j - 1]));
        }
    }
    let top = e[m];
    let below = if m >= 1 { e[m - 1] } else { Hd(0.0, 0.0, 0.0, 0.0) };
    top.add(Hd(alpha * below.0, alpha * below.1, alpha * below.2, alpha * below.3))
}

/// Residuals of all five operator identities at `λ`, each divided by its scale:
/// gradient and Hessian against automatic differentiation (scale
/// `1 + |S_k| + max |entry|`), then the three expansion identities
/// (scale `1 + |S_k|`).
pub fn identity_residuals_all(op: &SumHessianOp, lam: &Spectrum) -> [f64; 5] {
    let v = lam.values();
    let n = v.len();
    let k = op.k();
    let s_k = symfun::sum_hessian(op, lam, k as isize);
    let grad = symfun::first_derivative(op, lam);
    let hess = symfun::second_derivative(op, lam);
    let mut grad_res = 0.0f64;
    let mut grad_scale = 1.0 + s_k.abs();
    let mut hess_res = 0.0f64;
    let mut hess_scale = 1.0 + s_k.abs();
    for p in 0..n {
        for q in p..n {
            let d = dual_sum_hessian(op.alpha(), v, k, p, q);
            if p == q {
                grad_res = grad_res.max((d.1 - grad[p]).abs());
                grad_scale = grad_scale.max(1.0 + s_k.abs() + d.1.abs());
            }
            hess_res = hess_res.max((d.3 - hess[(p, q)]).abs());
            hess_scale = hess_scale.max(1.0 + s_k.abs() + d.3.abs());
        }
    }
    let [a, b, c] = symfun::identity_residuals(op, lam);
    let scale = 1.0 + s_k.abs();
    [grad_res / grad_scale, hess_res / hess_scale, a / scale, b / scale, c / scale]
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Samples per `(n, k, α)` configuration.
    pub samples: usize,
    pub seed: u64,
    pub min_dim: usize,
    pub max_dim: usize,
    pub alphas: Vec<f64>,
    /// Half-width of the sampling box.
    pub radius: f64,
    pub tolerance: f64,
    pub deltas: Vec<f64>,
    /// Random `(A, B)` pairs for the spectral second-derivative check.
    pub spectral_pairs: usize,
    pub spectral_tolerance: f64,
    pub spectral_step: f64,
    /// Negates every margin before it is recorded (negative control).
    pub flip_signs: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            samples: 1000,
            seed: 0x5eed,
            min_dim: 2,
            max_dim: 6,
            alphas: vec![0.1, 1.0, 10.0],
            radius: 5.0,
            tolerance: 1e-9,
            deltas: vec![0.5, 0.1, 0.01],
            spectral_pairs: 500,
            spectral_tolerance: 1e-4,
            spectral_step: 1e-4,
            flip_signs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub margin: f64,
    pub lambda: Vec<f64>,
    /// Direction, second spectrum or order, depending on the check.
    pub extra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    /// Whether this component decides `passed`.
    pub asserted: bool,
    pub samples: usize,
    pub skipped: usize,
    pub worst_margin: f64,
    /// Up to five smallest margins, first occurrence wins ties.
    pub witnesses: Vec<Witness>,
}

impl Component {
    fn new(name: &str, asserted: bool) -> Self {
        Component {
            name: name.to_string(),
            asserted,
            samples: 0,
            skipped: 0,
            worst_margin: f64::INFINITY,
            witnesses: Vec::new(),
        }
    }

    fn offer(&mut self, margin: f64, flip: bool, make: impl FnOnce(f64) -> Witness) {
        let margin = if flip { -margin } else { margin };
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        self.samples += 1;
        self.worst_margin = self.worst_margin.min(margin);
        if self.witnesses.len() < WITNESSES || margin < self.witnesses[WITNESSES - 1].margin {
            let pos = self.witnesses.partition_point(|w| w.margin <= margin);
            self.witnesses.insert(pos, make(margin));
            self.witnesses.truncate(WITNESSES);
        }
    }
}

const WITNESSES: usize = 5;

/// Empirical threshold for a conditional inequality in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub name: String,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    /// Samples the value is computed from.
    pub samples: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub name: String,
    pub samples: usize,
    pub worst_margin: f64,
    pub witnesses: Vec<Witness>,
    pub passed: bool,
    pub tolerance: f64,
    pub components: Vec<Component>,
    pub thresholds: Vec<Threshold>,
    pub notes: Vec<String>,
}

impl LemmaReport {
    fn from_components(name: &str, tolerance: f64, components: Vec<Component>) -> Self {
        let asserted: Vec<&Component> = components.iter().filter(|c| c.asserted).collect();
        let worst = asserted
            .iter()
            .copied()
            .min_by(|a, b| a.worst_margin.total_cmp(&b.worst_margin));
        LemmaReport {
            name: name.to_string(),
            samples: components.iter().map(|c| c.samples).max().unwrap_or(0),
            worst_margin: worst.map_or(f64::INFINITY, |c| c.worst_margin),
            witnesses: worst.map_or_else(Vec::new, |c| c.witnesses.clone()),
            passed: asserted.iter().all(|c| c.worst_margin >= -tolerance),
            tolerance,
            components,
            thresholds: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
struct Config {
    n: usize,
    k: usize,
    alpha: f64,
    index: u64,
}

impl Config {
    fn op(&self) -> SumHessianOp {
        SumHessianOp::new(self.n, self.k, self.alpha).expect("sweep configurations are valid")
    }

    fn rng(&self, seed: u64, stream: u64) -> ChaCha8Rng {
        let mut x = seed ^ (self.index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ChaCha8Rng::seed_from_u64(x ^ (x >> 31))
    }

    fn witness(&self, margin: f64, lambda: &Spectrum, extra: Vec<f64>) -> Witness {
        Witness {
            n: self.n,
            k: self.k,
            alpha: self.alpha,
            margin,
            lambda: lambda.values().to_vec(),
            extra,
        }
    }
}

fn configs(cfg: &SweepConfig, min_k: usize) -> Vec<Config> {
    let mut out = Vec::new();
    let mut index = 0;
    for n in cfg.min_dim..=cfg.max_dim {
        for k in min_k.max(1)..=n {
            for &alpha in &cfg.alphas {
                out.push(Config { n, k, alpha, index });
                index += 1;
            }
        }
    }
    out
}

fn uniform_box(n: usize, count: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Spectrum> {
    (0..count)
        .map(|_| Spectrum::new((0..n).map(|_| rng.random_range(-radius..=radius)).collect()).unwrap())
        .collect()
}

fn directions(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect()
}

/// Gradient, Hessian and the three expansion identities on uniform samples.
pub fn sweep_identities(cfg: &SweepConfig) -> LemmaReport {
    let names = ["gradient", "hessian", "expansion", "deleted_sum", "weighted_sum"];
    let mut comps: Vec<Component> = names.iter().map(|n| Component::new(n, true)).collect();
    for c in configs(cfg, 1) {
        let op = c.op();
        let samples = uniform_box(c.n, cfg.samples, cfg.radius, &mut c.rng(cfg.seed, 0));
        let res: Vec<[f64; 5]> = samples.par_iter().map(|l| identity_residuals_all(&op, l)).collect();
        for (lam, r) in samples.iter().zip(&res) {
            for (comp, &v) in comps.iter_mut().zip(r) {
                comp.offer(-v, cfg.flip_signs, |m| c.witness(m, lam, vec![]));
            }
        }
    }
    let mut report = LemmaReport::from_components("expansion_identities", cfg.tolerance, comps);
    report.notes.push("margin = -residual / scale".into());
    report
}

/// Second-order quotient concavity along random directions, every `l < k`,
/// in both the plain and the `δ`-weighted forms.
pub fn sweep_quotient_concavity(cfg: &SweepConfig) -> (LemmaReport, LemmaReport) {
    let mut plain = Component::new("all_orders", true);
    let mut weighted: Vec<Component> = cfg
        .deltas
        .iter()
        .map(|d| Component::new(&format!("delta_{d}"), true))
        .collect();
    for c in configs(cfg, 2) {
        let op = c.op();
        let mut rng = c.rng(cfg.seed, 1);
        let samples = cones::sample_cone(&op, cfg.samples, cfg.radius, &mut rng);
        let dirs = directions(c.n, cfg.samples, &mut rng);
        let evals: Vec<Vec<(f64, Vec<f64>)>> = samples
            .par_iter()
            .zip(&dirs)
            .map(|(lam, w)| quotient_all_orders(&op, lam, w, &cfg.deltas))
            .collect();
        for ((lam, w), per_l) in samples.iter().zip(&dirs).zip(&evals) {
            for (i, (p, ws)) in per_l.iter().enumerate() {
                let extra = || {
                    let mut e = vec![(i + 1) as f64];
                    e.extend(w);
                    e
                };
                plain.offer(*p, cfg.flip_signs, |m| c.witness(m, lam, extra()));
                for (comp, &v) in weighted.iter_mut().zip(ws) {
                    comp.offer(v, cfg.flip_signs, |m| c.witness(m, lam, extra()));
                }
            }
        }
    }
    let first = LemmaReport::from_components("quotient_concavity", cfg.tolerance, vec![plain]);
    let mut second = LemmaReport::from_components("quotient_concavity_weighted", cfg.tolerance, weighted);
    let smallest = cfg
        .deltas
        .iter()
        .zip(&second.components)
        .filter(|(_, c)| c.worst_margin >= -cfg.tolerance)
        .map(|(d, _)| *d)
        .fold(f64::INFINITY, f64::min);
    second.notes.push(format!("smallest passing delta: {smallest}"));
    (first, second)
}

/// Admissibility extends to order `k+1` when `S_{k+1} > 0`; equivalence of the
/// two cone descriptions; positivity of the linearization coefficients.
pub fn sweep_cone_structure(cfg: &SweepConfig) -> LemmaReport {
    let mut extension = Component::new("extension", true);
    let mut equivalence = Component::new("equivalence", true);
    let mut ellipticity = Component::new("ellipticity", true);
    for c in configs(cfg, 1) {
        let op = c.op();
        let mut rng = c.rng(cfg.seed, 2);
        let samples = cones::sample_cone(&op, cfg.samples, cfg.radius, &mut rng);
        let raw = uniform_box(c.n, cfg.samples, cfg.radius, &mut rng);
        let ext: Vec<Option<f64>> = samples
            .par_iter()
            .map(|lam| {
                if c.k == c.n || symfun::sum_hessian(&op, lam, c.k as isize + 1) <= 0.0 {
                    return None;
                }
                let s = symfun::sigma(lam, c.k as isize);
                Some(s / (1.0 + s.abs()))
            })
            .collect();
        let ell: Vec<f64> = samples
            .par_iter()
            .map(|lam| {
                let g = symfun::first_derivative(&op, lam);
                let scale = 1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                cones::ellipticity_margin(&op, lam) / scale
            })
            .collect();
        let eq: Vec<bool> = raw.par_iter().map(|lam| cones::equivalence_check(&op, lam)).collect();
        for (i, lam) in samples.iter().enumerate() {
            match ext[i] {
                Some(v) => extension.offer(v, cfg.flip_signs, |m| c.witness(m, lam, vec![])),
                None => extension.skipped += 1,
            }
            ellipticity.offer(ell[i], cfg.flip_signs, |m| c.witness(m, lam, vec![]));
        }
        for (lam, &ok) in raw.iter().zip(&eq) {
            equivalence.offer(if ok { 1.0 } else { -1.0 }, cfg.flip_signs, |m| c.witness(m, lam, vec![]));
        }
    }
    LemmaReport::from_components("cone_structure", cfg.tolerance, vec![extension, equivalence, ellipticity])
}

/// Ordered-product lower bounds for `S_s`, `s < k`, and the empirical `θ`.
pub fn sweep_ordered_products(cfg: &SweepConfig) -> LemmaReport {
    let mut stated = Component::new("with_alpha", true);
    let mut products = Component::new("product_only", false);
    let mut thresholds = Vec::new();
    for c in configs(cfg, 2) {
        let op = c.op();
        let samples = cones::sample_cone(&op, cfg.samples, cfg.radius, &mut c.rng(cfg.seed, 3));
        let res: Vec<OrderedProductMargins> = samples
            .par_iter()
            .map(|lam| ordered_product_margins(&op, lam).expect("samples are admissible"))
            .collect();
        let mut theta = f64::INFINITY;
        for (lam, r) in samples.iter().zip(&res) {
            stated.offer(r.with_alpha_normalized, cfg.flip_signs, |m| c.witness(m, lam, vec![]));
            products.offer(r.product_only, cfg.flip_signs, |m| c.witness(m, lam, vec![]));
            theta = theta.min(r.theta);
        }
        thresholds.push(Threshold {
            name: "theta".into(),
            n: c.n,
            k: c.k,
            alpha: c.alpha,
            samples: samples.len(),
            value: theta,
        });
    }
    let mut report = LemmaReport::from_components("ordered_products", cfg.tolerance, vec![stated, products]);
    report.thresholds = thresholds;
    report.notes.push("theta: infimum of λ_j S_k^{jj} / S_k over j < k, reported only".into());
    report
}

pub fn sweep_sum_newton(cfg: &SweepConfig) -> LemmaReport {
    let mut inner = Component::new("k_below_n", true);
    let mut top = Component::new("k_equals_n", true);
    for c in configs(cfg, 1) {
        let op = c.op();
        let samples = cones::sample_cone(&op, cfg.samples, cfg.radius, &mut c.rng(cfg.seed, 4));
        let res: Vec<SumNewtonMargin> = samples
            .par_iter()
            .map(|lam| sum_newton_margin(&op, lam).expect("samples are admissible"))
            .collect();
        let comp = if c.k == c.n { &mut top } else { &mut inner };
        for (lam, r) in samples.iter().zip(&res) {
            comp.offer(r.margin, cfg.flip_signs, |m| c.witness(m, lam, vec![]));
        }
    }
    let mut report = LemmaReport::from_components("sum_newton", cfg.tolerance, vec![inner, top]);
    report.notes.push("k = n uses S_{n+1} = α σ_n".into());
    report
}

pub fn sweep_newton_maclaurin(cfg: &SweepConfig) -> LemmaReport {
    let mut first = Component::new("power_mean", true);
    let mut second = Component::new("adjacent_products", true);
    for c in configs(cfg, 2) {
        // The inequalities do not involve α; every α reuses the same cone.
        let samples = cones::sample_gamma_k(c.n, c.k, cfg.samples, cfg.radius, &mut c.rng(cfg.seed, 5));
        let res: Vec<(f64, f64)> = samples
            .par_iter()
            .map(|lam| newton_maclaurin_margins(lam, c.k).unwrap_or((f64::NEG_INFINITY, f64::NEG_INFINITY)))
            .collect();
        for (lam, r) in samples.iter().zip(&res) {
            first.offer(r.0, cfg.flip_signs, |m| c.witness(m, lam, vec![]));
            second.offer(r.1, cfg.flip_signs, |m| c.witness(m, lam, vec![]));
        }
    }
    LemmaReport::from_components("newton_maclaurin", cfg.tolerance, vec![first, second])
}

/// Midpoint concavity of `S_k^{1/k}` and of every quotient `(S_k/S_l)^{1/(k-l)}`.
pub fn sweep_midpoint_concavity(cfg: &SweepConfig) -> LemmaReport {
    let mut root = Component::new("root", true);
    let mut quotient = Component::new("quotient", true);
    for c in configs(cfg, 1) {
        let op = c.op();
        let mut rng = c.rng(cfg.seed, 6);
        let a = cones::sample_cone(&op, cfg.samples, cfg.radius, &mut rng);
        let b = cones::sample_cone(&op, cfg.samples, cfg.radius, &mut rng);
        let res: Vec<Vec<ProbeOutcome>> = a
            .par_iter()
            .zip(&b)
            .map(|(x, y)| {
                (0..c.k)
                    .map(|l| {
                        let l = if l == 0 { None } else { Some(l) };
                        concavity_probe(&op, l, x, y).unwrap_or(ProbeOutcome::Margin(f64::NEG_INFINITY))
                    })
                    .collect()
            })
            .collect();
        for ((x, y), per_l) in a.iter().zip(&b).zip(&res) {
            for (l, outcome) in per_l.iter().enumerate() {
                let comp = if l == 0 { &mut root } else { &mut quotient };
                match *outcome {
                    ProbeOutcome::Margin(v) => {
                        comp.offer(v, cfg.flip_signs, |m| {
                            let mut extra = vec![l as f64];
                            extra.extend(y.values());
                            c.witness(m, x, extra)
                        })
                    }
                    ProbeOutcome::Skipped => comp.skipped += 1,
                }
            }
        }
    }
    LemmaReport::from_components("midpoint_concavity", cfg.tolerance, vec![root, quotient])
}

/// Bounds on spectra in `Γ_k` with bounded `S_k`. The ordering bounds and the
/// uniform share bound are asserted; the two leading-eigenvalue bounds only
/// hold for large `λ₁`, so the sweep reports `Λ*`, the smallest `λ₁` above
/// which no sample violates them.
pub fn sweep_bounded_spectrum(cfg: &SweepConfig) -> LemmaReport {
    const EPS0: f64 = 0.1;
    let mut ordering = Component::new("ordering", true);
    let mut uniform = Component::new("uniform_share", true);
    let mut weight = Component::new("leading_weight", false);
    let mut share = Component::new("leading_share", false);
    let mut thresholds = Vec::new();
    for c in configs(cfg, 2) {
        let op = c.op();
        let mut rng = c.rng(cfg.seed, 7);
        let samples = cones::sample_gamma_k(c.n, c.k, cfg.samples, cfg.radius, &mut rng);
        // Family with a stretched leading eigenvalue; N₀ is its median S_k.
        let stretched: Vec<Spectrum> = samples
            .iter()
            .map(|lam| {
                let s = 10f64.powf(rng.random_range(0.0..=2.0));
                let mut v = lam.sorted_desc();
                v[0] *= s;
                Spectrum::new(v).unwrap()
            })
            .collect();
        let tight: Vec<Option<BoundedSpectrumMargins>> = samples
            .par_iter()
            .map(|lam| {
                let n0 = symfun::sum_hessian(&op, lam, c.k as isize);
                bounded_spectrum_margins(&op, lam, n0, EPS0).ok()
            })
            .collect();
        let mut levels: Vec<f64> = stretched.iter().map(|l| symfun::sum_hessian(&op, l, c.k as isize)).collect();
        levels.sort_by(f64::total_cmp);
        let n0 = levels.get(levels.len() / 2).copied().unwrap_or(1.0);
        let family: Vec<Option<(f64, BoundedSpectrumMargins)>> = stretched
            .par_iter()
            .map(|lam| {
                bounded_spectrum_margins(&op, lam, n0, EPS0)
                    .ok()
                    .map(|m| (lam.sorted_desc()[0], m))
            })
            .collect();
        for (lam, r) in samples.iter().zip(&tight) {
            match r {
                Some(m) => {
                    let ord = Margin { lhs: m.upper, rhs: 0.0 }
                        .normalized()
                        .min(Margin { lhs: m.lower, rhs: 0.0 }.normalized());
                    ordering.offer(ord, cfg.flip_signs, |v| c.witness(v, lam, vec![m.k0]));
                    let scale = 1.0 + m.c0 * symfun::sum_hessian(&op, lam, c.k as isize).abs();
                    uniform.offer(m.uniform_share / scale, cfg.flip_signs, |v| c.witness(v, lam, vec![m.k0, m.c0]));
                }
                None => ordering.skipped += 1,
            }
        }
        let mut lw_star = 0.0f64;
        let mut ls_star = 0.0f64;
        let mut used = 0;
        for (lam, r) in stretched.iter().zip(&family) {
            let Some((l1, m)) = r else {
                weight.skipped += 1;
                share.skipped += 1;
                continue;
            };
            used += 1;
            let squash = |x: f64| x / (1.0 + x.abs());
            weight.offer(squash(m.leading_weight), false, |v| c.witness(v, lam, vec![n0]));
            share.offer(squash(m.leading_share), false, |v| c.witness(v, lam, vec![n0]));
            if m.leading_weight < 0.0 {
                lw_star = lw_star.max(*l1);
            }
            if m.leading_share < 0.0 {
                ls_star = ls_star.max(*l1);
            }
        }
        for (name, value) in [("leading_weight", lw_star), ("leading_share", ls_star)] {
            thresholds.push(Threshold {
                name: name.into(),
                n: c.n,
                k: c.k,
                alpha: c.alpha,
                samples: used,
                value,
            });
        }
    }
    let mut report = LemmaReport::from_components("bounded_spectrum", cfg.tolerance, vec![ordering, uniform, weight, share]);
    let finite = thresholds.iter().all(|t| t.value.is_finite());
    report.passed &= finite;
    report.thresholds = thresholds;
    report
        .notes
        .push(format!("Λ*: largest λ₁ of a violating sample (0 if none); N₀: median S_k of the stretched family; ε₀ = {EPS0}"));
    report
}

/// Compares `spectral_second_derivative` with second central differences of
/// `t ↦ F(A + tB)` evaluated from principal minors.
pub fn sweep_spectral_second_derivative(cfg: &SweepConfig) -> LemmaReport {
    let mut comp = Component::new("finite_difference", true);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xBA11);
    let h = cfg.spectral_step;
    let cases: Vec<(SymFn, Vec<f64>, DMatrix<f64>)> = (0..cfg.spectral_pairs)
        .map(|_| {
            let n = rng.random_range(cfg.min_dim..=cfg.max_dim);
            let k = rng.random_range(1..=n);
            let f = if rng.random_bool(0.5) {
                SymFn::Sigma(k)
            } else {
                let alpha = cfg.alphas[rng.random_range(0..cfg.alphas.len())];
                SymFn::SumHessian(SumHessianOp::new(n, k, alpha).unwrap())
            };
            let kappa = loop {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
                let gap_ok = (0..n).all(|i| ((i + 1)..n).all(|j| (v[i] - v[j]).abs() >= 0.1));
                if gap_ok {
                    break v;
                }
            };
            let mut b = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let x = rng.random_range(-1.0..=1.0);
                    b[(i, j)] = x;
                    b[(j, i)] = x;
                }
            }
            (f, kappa, b)
        })
        .collect();
    let res: Vec<f64> = cases
        .par_iter()
        .map(|(f, kappa, b)| {
            let a = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(kappa));
            let fd = (f.of_matrix(&(&a + b * h)) - 2.0 * f.of_matrix(&a) + f.of_matrix(&(&a - b * h))) / (h * h);
            match spectral_second_derivative(f, kappa, b) {
                Ok(v) => (v - fd).abs() / (1.0 + fd.abs()),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    for ((f, kappa, b), &rel) in cases.iter().zip(&res) {
        let n = kappa.len();
        let (k, alpha) = match f {
            SymFn::Sigma(k) => (*k, 0.0),
            SymFn::SumHessian(op) => (op.k(), op.alpha()),
        };
        comp.offer(-rel, cfg.flip_signs, |m| Witness {
            n,
            k,
            alpha,
            margin: m,
            lambda: kappa.clone(),
            extra: b.iter().copied().collect(),
        });
    }
    let mut report = LemmaReport::from_components("spectral_second_derivative", cfg.spectral_tolerance, vec![comp]);
    report.notes.push("margin = -relative error, relative to 1 + |finite difference|".into());
    report
}

/// Every sweep, in a fixed order.
pub fn run_all(cfg: &SweepConfig) -> Vec<LemmaReport> {
    let (plain, weighted) = sweep_quotient_concavity(cfg);
    vec![
        sweep_identities(cfg),
        plain,
        weighted,
        sweep_spectral_second_derivative(cfg),
        sweep_cone_structure(cfg),
        sweep_ordered_products(cfg),
        sweep_sum_newton(cfg),
        sweep_newton_maclaurin(cfg),
        sweep_midpoint_concavity(cfg),
        sweep_bounded_spectrum(cfg),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    fn op(n: usize, k: usize, a: f64) -> SumHessianOp {
        SumHessianOp::new(n, k, a).unwrap()
    }

    #[test]
    fn quotient_concavity_examples() {
        let o = op(3, 2, 1.0);
        let ones = spec(&[1.0, 1.0, 1.0]);
        let m = quotient_concavity_margin(&o, 1, &ones, &[0.0; 3]).unwrap();
        assert_eq!(m.value(), 0.0);
        // Hand evaluation: S₂ = 6, S₁ = 4, Ṡ₂ = 3, Ṡ₁ = 1, S₂^{pp,qq} = 1 off the
        // diagonal, S₁^{pp,qq} = 0, ϑ = 1; w = e₁ kills the quadratic forms.
        // lhs = 0, rhs = (1/2 - 1/4)(0 - 2/4) = -1/8.
        let m = quotient_concavity_margin(&o, 1, &ones, &[1.0, 0.0, 0.0]).unwrap();
        assert!((m.lhs - 0.0).abs() < 1e-15);
        assert!((m.rhs + 0.125).abs() < 1e-15);
        assert!(m.value() >= 0.0);
        assert!(matches!(
            quotient_concavity_margin(&o, 1, &spec(&[1.0, -0.5, -0.6]), &[1.0, 0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(quotient_concavity_margin(&o, 2, &ones, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn weighted_form_examples() {
        let o = op(3, 2, 1.0);
        let ones = spec(&[1.0, 1.0, 1.0]);
        assert_eq!(quotient_concavity_weighted_margin(&o, 1, 0.5, &ones, &[0.0; 3]).unwrap().value(), 0.0);
        // w = (1, -1, 0): Σ S₂^{pp,qq} w_p w_q = 2·(1·(-1)) = -2, Ṡ₂ = 0, Ṡ₁ = 0,
        // S₁^{pp,qq} = 0. lhs = 2, rhs = 0.
        let m = quotient_concavity_weighted_margin(&o, 1, 0.5, &ones, &[1.0, -1.0, 0.0]).unwrap();
        assert!((m.lhs - 2.0).abs() < 1e-14 && m.rhs.abs() < 1e-14);
        assert!(quotient_concavity_weighted_margin(&o, 1, 1.5, &ones, &[1.0, -1.0, 0.0]).is_err());
    }

    #[test]
    fn shared_terms_match_public_oracles() {
        let o = op(4, 3, 0.5);
        let lam = spec(&[3.0, 1.2, 0.4, -0.3]);
        let w = [0.3, -1.0, 0.7, 0.2];
        let all = quotient_all_orders(&o, &lam, &w, &[0.5, 0.1]);
        for (i, (p, ws)) in all.iter().enumerate() {
            let l = i + 1;
            assert_eq!(*p, quotient_concavity_margin(&o, l, &lam, &w).unwrap().normalized());
            for (d, v) in [0.5, 0.1].iter().zip(ws) {
                assert_eq!(*v, quotient_concavity_weighted_margin(&o, l, *d, &lam, &w).unwrap().normalized());
            }
        }
    }

    #[test]
    fn principal_minors_match_eigenvalue_sums() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, -1.5]);
        let lam = crate::linalg::symmetric_eigen(&m).values;
        for k in 0..=3 {
            assert!((principal_minor_sum(&m, k) - symfun::sigma_of(&lam, k as isize)).abs() < 1e-12);
        }
        assert_eq!(principal_minor_sum(&m, 4), 0.0);
    }

    #[test]
    fn spectral_second_derivative_examples() {
        let f = SymFn::SumHessian(op(2, 2, 1.0));
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let v = spectral_second_derivative(&f, &[2.0, 1.0], &b).unwrap();
        assert!((v + 2.0).abs() < 1e-14);
        let diag = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.5]);
        let f3 = SymFn::Sigma(2);
        let kappa = [1.0, 2.0, 3.0];
        let pure = quadratic_form(&f3.hessian(&kappa), &[1.0, -2.0, 0.5]);
        assert!((spectral_second_derivative(&f3, &kappa, &diag).unwrap() - pure).abs() < 1e-14);
        assert!(matches!(
            spectral_second_derivative(&f3, &[1.0, 1.0 + 1e-7, 3.0], &diag),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ordered_product_examples() {
        let r = ordered_product_margins(&op(3, 2, 1.0), &spec(&[2.0, 1.0, 0.5])).unwrap();
        assert!((r.with_alpha - 1.5).abs() < 1e-14);
        let r = ordered_product_margins(&op(2, 2, 1.0), &spec(&[1.0, 1.0])).unwrap();
        assert!((r.with_alpha - 1.0).abs() < 1e-14);
        // Storage order is irrelevant.
        let r = ordered_product_margins(&op(3, 2, 1.0), &spec(&[0.5, 2.0, 1.0])).unwrap();
        assert!((r.with_alpha - 1.5).abs() < 1e-14);
        assert!(ordered_product_margins(&op(3, 2, 1.0), &spec(&[1.0, -0.5, -0.6])).is_err());
    }

    #[test]
    fn ordered_product_bound_with_alpha_fails_for_large_alpha() {
        // (3, -1) is admissible for α = 10 (S₁ = 12, S₂ = 17) but S₁ < λ₁ + α = 13.
        let r = ordered_product_margins(&op(2, 2, 10.0), &spec(&[3.0, -1.0])).unwrap();
        assert!((r.with_alpha + 1.0).abs() < 1e-14);
        assert!(r.product_only > 0.0);
    }

    #[test]
    fn sum_newton_examples() {
        let r = sum_newton_margin(&op(3, 2, 1.0), &spec(&[1.0, 1.0, 1.0])).unwrap();
        assert!((r.margin - 20.0 / 37.0).abs() < 1e-14);
        assert!(!r.top_order_convention);
        // n = 2, k = 1, λ = (t, t): S₁² - S₀S₂ = 3t² + 2t + 1.
        let t = 1e-6;
        let r = sum_newton_margin(&op(2, 1, 1.0), &spec(&[t, t])).unwrap();
        let s1 = 2.0 * t + 1.0;
        assert!((r.margin - (3.0 * t * t + 2.0 * t + 1.0) / (1.0 + s1 * s1)).abs() < 1e-14);
        // n = k = 1: S₁² - S₀·(α σ₁) = λ² + αλ + α².
        let (l, a) = (0.7, 2.0);
        let r = sum_newton_margin(&op(1, 1, a), &spec(&[l])).unwrap();
        assert!(r.top_order_convention);
        assert!((r.margin - (l * l + a * l + a * a) / (1.0 + (l + a) * (l + a))).abs() < 1e-14);
    }

    #[test]
    fn bounded_spectrum_examples() {
        let o = op(3, 2, 1.0);
        let m = bounded_spectrum_margins(&o, &spec(&[2.0, 0.5, 0.1]), 4.0, 0.1).unwrap();
        assert!((m.upper - 2.0).abs() < 1e-14);
        assert!((m.k0 - 12.0).abs() < 1e-14);
        assert!((m.c0 - 38.0).abs() < 1e-12);
        assert!(m.uniform_share >= 0.0);
        assert!(matches!(
            bounded_spectrum_margins(&o, &spec(&[2.0, 0.5, 0.1]), 1.0, 0.1),
            Err(Error::Precondition(_))
        ));
        assert!(bounded_spectrum_margins(&op(3, 1, 1.0), &spec(&[2.0, 0.5, 0.1]), 4.0, 0.1).is_err());
    }

    #[test]
    fn concavity_probe_examples() {
        let o = op(3, 2, 1.0);
        let a = spec(&[3.0, 1.0, 1.0]);
        assert_eq!(concavity_probe(&o, None, &a, &a).unwrap(), ProbeOutcome::Margin(0.0));
        // S₂ = σ₂ + σ₁: at (3,1,1) and (1,1,3): 7 + 5 = 12, midpoint (2,1,2): 8 + 5 = 13.
        let b = spec(&[1.0, 1.0, 3.0]);
        let expect = (13f64.sqrt() - 12f64.sqrt()) / (1.0 + 13f64.sqrt());
        match concavity_probe(&o, None, &a, &b).unwrap() {
            ProbeOutcome::Margin(v) => assert!((v - expect).abs() < 1e-14 && v > 0.0),
            ProbeOutcome::Skipped => panic!("midpoint is admissible"),
        }
        assert!(concavity_probe(&o, Some(2), &a, &b).is_err());
    }

    #[test]
    fn newton_maclaurin_examples() {
        let (a, b) = newton_maclaurin_margins(&spec(&[1.0, 1.0, 1.0]), 2).unwrap();
        assert!(a.abs() < 1e-15);
        // σ₂σ₁ - σ₀σ₃ = 9 - 1, normalized by 1 + 9 + 1.
        assert!((b - 8.0 / 11.0).abs() < 1e-14);
        // For k = 2 the first inequality reads σ₁ >= σ₁.
        let (a, _) = newton_maclaurin_margins(&spec(&[2.0, 1.0, 1.0]), 2).unwrap();
        assert_eq!(a, 0.0);
        let (a, _) = newton_maclaurin_margins(&spec(&[1.0, 1.0, 1.0]), 3).unwrap();
        let r3 = 3f64.sqrt();
        assert!((a - (3.0 - r3) / (4.0 + r3)).abs() < 1e-14);
        assert!(matches!(
            newton_maclaurin_margins(&spec(&[1.0, -3.0, 0.5]), 3),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn dual_numbers_agree_with_deletions() {
        let o = op(4, 3, 0.7);
        let lam = spec(&[1.5, -2.0, 0.3, 4.0]);
        let r = identity_residuals_all(&o, &lam);
        assert!(r.iter().all(|&v| v < 1e-14), "{r:?}");
    }

    fn small() -> SweepConfig {
        SweepConfig {
            samples: 60,
            max_dim: 4,
            spectral_pairs: 60,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn sweeps_are_deterministic_and_sign_flip_fails() {
        let cfg = small();
        let a = sweep_midpoint_concavity(&cfg);
        let b = sweep_midpoint_concavity(&cfg);
        assert_eq!(a, b);
        assert!(a.passed);
        let flipped = sweep_midpoint_concavity(&SweepConfig { flip_signs: true, ..cfg });
        assert!(!flipped.passed);
    }

    #[test]
    fn witnesses_are_sorted_and_bounded() {
        let r = sweep_identities(&small());
        for c in &r.components {
            assert!(c.witnesses.len() <= 5);
            assert!(c.witnesses.windows(2).all(|w| w[0].margin <= w[1].margin));
            assert_eq!(c.witnesses[0].margin, c.worst_margin);
        }
        assert!(r.passed, "{:?}", r.worst_margin);
    }

    #[test]
    fn small_sweeps_pass() {
        let cfg = small();
        for r in run_all(&cfg) {
            if r.name == "ordered_products" {
                assert!(!r.passed);
                assert!(r.component("product_only").unwrap().worst_margin > 0.0);
                continue;
            }
            assert!(r.passed, "{} {:?}", r.name, r.worst_margin);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn admissible_case() -> impl Strategy<Value = (SumHessianOp, Spectrum, Vec<f64>)> {
            (2usize..=5, 0usize..3, any::<u64>()).prop_flat_map(|(n, ai, seed)| {
                (1..n).prop_map(move |k| {
                    let o = SumHessianOp::new(n, k + 1, [0.1, 1.0, 10.0][ai]).unwrap();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let lam = cones::sample_cone(&o, 1, 3.0, &mut rng).pop().unwrap();
                    let w = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    (o, lam, w)
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn quotient_concavity_holds((o, lam, w) in admissible_case()) {
                for l in 1..o.k() {
                    prop_assert!(quotient_concavity_margin(&o, l, &lam, &w).unwrap().normalized() >= -1e-9);
                    prop_assert!(quotient_concavity_weighted_margin(&o, l, 0.5, &lam, &w).unwrap().normalized() >= -1e-9);
                }
            }

            #[test]
            fn sum_newton_and_midpoint_concavity_hold((o, lam, w) in admissible_case()) {
                prop_assert!(sum_newton_margin(&o, &lam).unwrap().margin >= -1e-9);
                let shifted = Spectrum::new(lam.values().iter().zip(&w).map(|(x, y)| x + y.abs()).collect()).unwrap();
                if let ProbeOutcome::Margin(v) = concavity_probe(&o, None, &lam, &shifted).unwrap() {
                    prop_assert!(v >= -1e-9);
                }
            }

            #[test]
            fn identities_hold_everywhere(v in proptest::collection::vec(-4.0f64..4.0, 2..=6), a in 0.05f64..10.0, kk in 0usize..6) {
                let n = v.len();
                let o = SumHessianOp::new(n, kk % n + 1, a).unwrap();
                let r = identity_residuals_all(&o, &Spectrum::new(v).unwrap());
                prop_assert!(r.iter().all(|&x| x <= 1e-9), "{:?}", r);
            }
        }
    }
}
