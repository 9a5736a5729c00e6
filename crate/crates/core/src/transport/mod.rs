//! Exact discrete optimal transport: the monotone coupling on the line and
//! a network simplex for general cost matrices, plus an entropic solver.
//!
//! Every `cost` reported here is the total transport cost with the ground
//! cost as given; for squared distances that is `W₂²`, never `W₂`.

mod one_d;
mod simplex;
mod sinkhorn;

pub use one_d::{quantile, w2_point_1d, CouplingStep, MonotoneCoupling};
pub use simplex::solve_exact;
pub use sinkhorn::solve_sinkhorn;

pub(crate) use one_d::{coupling_cost, walk_coupling};

use crate::linalg::Matrix;

/// Maximum allowed difference between the two marginal totals.
pub const MARGINAL_TOLERANCE: f64 = 1e-7;

/// Kantorovich potentials with `f_i + g_j ≤ c_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    /// `Σ γ_ij c_ij`.
    pub cost: f64,
    /// `K₀ × K₁` plan with marginals `w0` and `w1`.
    pub plan: Matrix,
    pub potentials: DualPotentials,
    /// Set by the entropic solver.
    pub approximate: bool,
    /// False when an iterative solver stopped at its iteration limit.
    pub converged: bool,
}

impl TransportResult {
    /// Dual objective `Σ w0_i f_i + Σ w1_j g_j`.
    pub fn dual_objective(&self, w0: &[f64], w1: &[f64]) -> f64 {
        let a: f64 = w0.iter().zip(&self.potentials.f).map(|(w, f)| w * f).sum();
        let b: f64 = w1.iter().zip(&self.potentials.g).map(|(w, g)| w * g).sum();
        a + b
    }
}

pub(crate) fn validate_problem(cost: &Matrix, w0: &[f64], w1: &[f64]) -> crate::Result<()> {
    use crate::error::{check_dim, invalid};
    check_dim(cost.rows(), w0.len())?;
    check_dim(cost.cols(), w1.len())?;
    if w0.is_empty() || w1.is_empty() {
        return Err(invalid("transport marginals must be nonempty"));
    }
    if cost.as_slice().iter().any(|c| !c.is_finite()) {
        return Err(invalid("cost matrix has non-finite entries"));
    }
    if w0.iter().chain(w1).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(invalid("marginal weights must be finite and nonnegative"));
    }
    let s0: f64 = w0.iter().sum();
    let s1: f64 = w1.iter().sum();
    if (s0 - s1).abs() > MARGINAL_TOLERANCE {
        return Err(invalid(format!("marginal totals differ: {s0} vs {s1}")));
    }
    Ok(())
}
