//! Garding cone `Γ_k = {σ_m > 0, m ≤ k}` and the admissible cone
//! `Γ̃_k = {S_m > 0, m ≤ k}` of the Sum Hessian operator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::symfun::{self, Spectrum, SumHessianOp};

/// Default relative slack for the strict inequalities.
pub const CONE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeVerdict {
    pub member: bool,
    /// The tested quantities for `m = 1..k`.
    pub margins: Vec<f64>,
    pub tolerance: f64,
}

impl ConeVerdict {
    fn from_margins(margins: Vec<f64>, tolerance: f64) -> Self {
        let scale = 1.0 + margins.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let member = margins.iter().all(|&m| m > -tolerance * scale);
        ConeVerdict {
            member,
            margins,
            tolerance,
        }
    }

    /// Smallest tested quantity, `+∞` when nothing was tested.
    pub fn worst_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn in_gamma_k(lam: &Spectrum, k: usize) -> ConeVerdict {
    in_gamma_k_with(lam, k, CONE_TOLERANCE)
}

pub fn in_gamma_k_with(lam: &Spectrum, k: usize, tolerance: f64) -> ConeVerdict {
    assert!(k >= 1 && k <= lam.n(), "order k={k} outside 1..={}", lam.n());
    let sigmas = symfun::sigma_all(lam);
    ConeVerdict::from_margins(sigmas[1..=k].to_vec(), tolerance)
}

pub fn in_gamma_tilde_k(op: &SumHessianOp, lam: &Spectrum) -> ConeVerdict {
    in_gamma_tilde_k_with(op, lam, CONE_TOLERANCE)
}

pub fn in_gamma_tilde_k_with(op: &SumHessianOp, lam: &Spectrum, tolerance: f64) -> ConeVerdict {
    ConeVerdict::from_margins(admissible_margins(op, lam), tolerance)
}

/// `(S_1, …, S_k)` at `λ`.
pub fn admissible_margins(op: &SumHessianOp, lam: &Spectrum) -> Vec<f64> {
    let sigmas = symfun::sigma_all(lam);
    (1..=op.k())
        .map(|m| sigmas[m] + op.alpha() * sigmas[m - 1])
        .collect()
}

/// Plain-sign test `S_m > 0` for all `m ≤ k`, no slack.
pub(crate) fn strictly_admissible(op: &SumHessianOp, lam: &Spectrum) -> bool {
    admissible_margins(op, lam).iter().all(|&m| m > 0.0)
}

/// Compares `Γ_{k-1} ∩ {S_k > 0}` against `{S_m > 0, m = 1..k}`.
pub fn equivalence_check(op: &SumHessianOp, lam: &Spectrum) -> bool {
    let k = op.k();
    let lower = k == 1 || in_gamma_k(lam, k - 1).member;
    let s_k = symfun::sum_hessian(op, lam, k as isize);
    let s_k_positive = ConeVerdict::from_margins(vec![s_k], CONE_TOLERANCE).member;
    let intersection = lower && s_k_positive;
    intersection == in_gamma_tilde_k(op, lam).member
}

/// Smallest component of the linearization coefficients `S_k^{pp}`.
pub fn ellipticity_margin(op: &SumHessianOp, lam: &Spectrum) -> f64 {
    symfun::first_derivative(op, lam)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

const REJECTION_BUDGET: usize = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Rejection sampling in `[-radius, radius]^n` restricted to `accept`.
///
/// When fewer than one draw in `10^4` is accepted after `10^6` draws, the
/// remaining points come from the positive orthant with a small perturbation
/// (re-drawn until `accept` holds, the unperturbed point being the last resort).
pub fn sample_where<R, F>(n: usize, count: usize, radius: f64, rng: &mut R, accept: F) -> Vec<Spectrum>
where
    R: Rng + ?Sized,
    F: Fn(&Spectrum) -> bool,
{
    assert!(count >= 1 && radius > 0.0);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    let mut fallback = false;
    while out.len() < count {
        if !fallback {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-radius..=radius)).collect();
            let lam = Spectrum::new(v).expect("finite draw");
            draws += 1;
            if accept(&lam) {
                out.push(lam);
            }
            if draws >= REJECTION_BUDGET && (out.len() as f64) < MIN_ACCEPTANCE * draws as f64 {
                fallback = true;
            }
        } else {
            out.push(orthant_draw(n, radius, rng, &accept));
        }
    }
    out
}

fn orthant_draw<R, F>(n: usize, radius: f64, rng: &mut R, accept: &F) -> Spectrum
where
    R: Rng + ?Sized,
    F: Fn(&Spectrum) -> bool,
{
    let base: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.05 * radius..=radius))
        .collect();
    for _ in 0..64 {
        let v: Vec<f64> = base
            .iter()
            .map(|b| b + rng.random_range(-0.02 * radius..=0.02 * radius))
            .collect();
        let lam = Spectrum::new(v).expect("finite draw");
        if accept(&lam) {
            return lam;
        }
    }
    Spectrum::new(base).expect("finite draw")
}

/// Samples of `Γ̃_k` in the box `[-radius, radius]^n`.
pub fn sample_cone<R: Rng + ?Sized>(op: &SumHessianOp, count: usize, radius: f64, rng: &mut R) -> Vec<Spectrum> {
    sample_where(op.n(), count, radius, rng, |l| strictly_admissible(op, l))
}

/// Samples of `Γ_k` in the box `[-radius, radius]^n`.
pub fn sample_gamma_k<R: Rng + ?Sized>(n: usize, k: usize, count: usize, radius: f64, rng: &mut R) -> Vec<Spectrum> {
    sample_where(n, count, radius, rng, |l| {
        symfun::sigma_all(l)[1..=k].iter().all(|&s| s > 0.0)
    })
}
