use crate::distances::{gaussian_w2, msw, SliceSet};
use crate::error::{invalid, Result};
use crate::linalg::PsdMatrix;
use crate::mixture::{GaussianComponent, Gmm};

/// Directions of the circle quadrature used for the sliced side.
const CURVE_SLICES: usize = 3600;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergencePoint {
    pub eps: f64,
    /// `W₂(μ_ε, μ) = √ε`.
    pub mw: f64,
    /// Sliced distance on a 3600-direction circle quadrature.
    pub msw: f64,
    /// `mw / msw`.
    pub ratio: f64,
    /// `mw² / msw²`.
    pub ratio_sq: f64,
}

/// Ratio of the mixture distance to its sliced counterpart between
/// `N(0, diag(1, ε))` and `N(0, diag(1, 0))`, which grows without bound as
/// `ε → 0`: the two distances are not equivalent.
pub fn covariance_collapse_curve(eps_list: &[f64]) -> Result<Vec<DivergencePoint>> {
    let slices = SliceSet::equispaced2d(CURVE_SLICES, 1)?;
    let flat = GaussianComponent::new(vec![0.0, 0.0], PsdMatrix::from_diag(&[1.0, 0.0])?)?;
    let target = Gmm::single(flat.clone());
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(invalid(format!("eps must lie in (0, 1], got {eps}")));
            }
            let g = GaussianComponent::new(vec![0.0, 0.0], PsdMatrix::from_diag(&[1.0, eps])?)?;
            let w = gaussian_w2(&g, &flat)?.sqrt();
            let s = msw(&Gmm::single(g), &target, &slices)?.value;
            Ok(DivergencePoint { eps, mw: w, msw: s, ratio: w / s, ratio_sq: (w * w) / (s * s) })
        })
        .collect()
}
