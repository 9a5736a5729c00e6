use std::time::Instant;

use rayon::prelude::*;

use super::DistanceValue;
use crate::error::{check_dim, invalid, Result};
use crate::linalg::{gemm, sqrtm_psd, sym_eigvals, Matrix, PsdMatrix, SymMatrix};
use crate::mixture::{GaussianComponent, Gmm};
use crate::transport::{solve_exact, TransportResult};

/// Covariance data reused across all pairs that involve one component.
struct CovInfo<'a> {
    cov: &'a PsdMatrix,
    trace: f64,
    zero: bool,
    diagonal: Option<Vec<f64>>,
    sqrt: Option<PsdMatrix>,
}

impl<'a> CovInfo<'a> {
    fn new(cov: &'a PsdMatrix, need_sqrt: bool) -> Self {
        let d = cov.dim();
        let m = cov.as_matrix().as_slice();
        let zero = m.iter().all(|&x| x == 0.0);
        let is_diag = (0..d).all(|i| (0..d).all(|j| i == j || m[i * d + j] == 0.0));
        let diagonal = is_diag.then(|| (0..d).map(|i| m[i * d + i]).collect());
        let sqrt = (need_sqrt && !zero && !is_diag).then(|| cov.sqrt());
        CovInfo { cov, trace: cov.trace(), zero, diagonal, sqrt }
    }

    fn sqrt_matrix(&self) -> PsdMatrix {
        match &self.sqrt {
            Some(s) => s.clone(),
            None => sqrtm_psd(self.cov.as_sym()).unwrap_or_else(|_| self.cov.clone()),
        }
    }
}

/// `tr((Σ₀^{1/2} Σ₁ Σ₀^{1/2})^{1/2})`.
fn bures_cross_term(a: &CovInfo, b: &CovInfo) -> Result<f64> {
    if a.zero || b.zero {
        return Ok(0.0);
    }
    if let (Some(da), Some(db)) = (&a.diagonal, &b.diagonal) {
        return Ok(da.iter().zip(db).map(|(x, y)| (x.max(0.0) * y.max(0.0)).sqrt()).sum());
    }
    let s0 = match &a.sqrt {
        Some(s) => s.clone(),
        None => a.sqrt_matrix(),
    };
    let t = gemm(s0.as_matrix(), false, b.cov.as_matrix(), false);
    let m = gemm(&t, false, s0.as_matrix(), false);
    let vals = sym_eigvals(&SymMatrix::from_matrix(m)?)?;
    Ok(vals.iter().map(|&l| l.max(0.0).sqrt()).sum())
}

fn w2_from_info(m0: &[f64], a: &CovInfo, m1: &[f64], b: &CovInfo) -> Result<f64> {
    if m0 == m1 && a.cov == b.cov {
        return Ok(0.0);
    }
    let mean_term: f64 = m0.iter().zip(m1).map(|(x, y)| (x - y) * (x - y)).sum();
    let cov_term = (a.trace + b.trace - 2.0 * bures_cross_term(a, b)?).max(0.0);
    Ok(mean_term + cov_term)
}

/// Squared 2-Wasserstein distance between two Gaussians (closed form).
pub fn gaussian_w2(g0: &GaussianComponent, g1: &GaussianComponent) -> Result<f64> {
    check_dim(g0.dim(), g1.dim())?;
    let a = CovInfo::new(g0.cov(), true);
    let b = CovInfo::new(g1.cov(), false);
    w2_from_info(g0.mean(), &a, g1.mean(), &b)
}

/// Squared 2-Wasserstein distance between `N(m0, s0²)` and `N(m1, s1²)`.
pub fn gaussian_w2_1d(m0: f64, s0: f64, m1: f64, s1: f64) -> Result<f64> {
    if !(s0 >= 0.0 && s1 >= 0.0) {
        return Err(invalid("standard deviations must be nonnegative"));
    }
    Ok((m0 - m1) * (m0 - m1) + (s0 - s1) * (s0 - s1))
}

/// Pairwise squared Gaussian distances between the components of two mixtures.
pub fn mw_cost_matrix(mu0: &Gmm, mu1: &Gmm) -> Result<Matrix> {
    check_dim(mu0.dim(), mu1.dim())?;
    let left: Vec<CovInfo> = mu0.components().par_iter().map(|c| CovInfo::new(c.cov(), true)).collect();
    let right: Vec<CovInfo> = mu1.components().iter().map(|c| CovInfo::new(c.cov(), false)).collect();
    let rows: Vec<Vec<f64>> = left
        .par_iter()
        .zip(mu0.components())
        .map(|(a, c0)| {
            right
                .iter()
                .zip(mu1.components())
                .map(|(b, c1)| w2_from_info(c0.mean(), a, c1.mean(), b))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Optimal component coupling for the mixture Wasserstein distance.
pub fn mw_plan(mu0: &Gmm, mu1: &Gmm) -> Result<TransportResult> {
    let cost = mw_cost_matrix(mu0, mu1)?;
    solve_exact(&cost, mu0.weights(), mu1.weights())
}

/// Mixture Wasserstein distance: discrete transport between components with
/// closed-form Gaussian costs.
pub fn mw(mu0: &Gmm, mu1: &Gmm) -> Result<DistanceValue> {
    let start = Instant::now();
    let plan = mw_plan(mu0, mu1)?;
    Ok(DistanceValue::exact(plan.cost, start.elapsed()))
}
