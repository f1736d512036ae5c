//! Numerical toolkit for the Sum Hessian operator
//! `S_k(λ) = σ_k(λ) + α σ_{k-1}(λ)`: symmetric functions, admissible cones,
//! inequality sweeps, a finite-difference Dirichlet solver, a posteriori
//! estimates and entire-solution rigidity checks.

// Index loops mirror the stencil formulas; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cones;
pub mod error;
pub mod estimates;
pub mod fdgrid;
pub mod inequalities;
pub mod linalg;
pub mod rigidity;
pub mod solver;
pub mod symfun;

pub use cones::{ConeVerdict, CONE_TOLERANCE};
pub use error::{Error, Result};
pub use fdgrid::{Grid, GridField, HessianSample};
pub use symfun::{Spectrum, SumHessianOp};
