//! Distances between Gaussians and Gaussian mixtures.
//!
//! Sliced quantities average over the uniform probability measure on the
//! sphere (and on the angle circle), matching the `1/L` Monte Carlo
//! averages, so bound utilities return their normalized forms.

mod gaussian;
mod quadrature;
mod sliced;

pub use gaussian::{gaussian_w2, gaussian_w2_1d, mw, mw_cost_matrix, mw_plan};
pub use quadrature::{gauss_legendre, gmm1d_cdf, gmm1d_quantile, sw_gmm, w2_1d_gmm, DEFAULT_QUAD_NODES};
pub use sliced::{dsmw, msw, msw_plan, smw, sw_empirical};

pub(crate) use sliced::{project_all, sort_into};

use std::time::Duration;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::mixture::Gmm;
use crate::rng::rng_from;

/// How the directions of a [`SliceSet`] were generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMode {
    /// `L` independent pairs `(θ, φ)`, uniform on the sphere times the circle.
    MonteCarlo,
    /// Equispaced circle directions in `d = 2` with an independent
    /// equispaced angle grid, used as a tensor product.
    Equispaced2d,
}

/// A reproducible set of projection directions and angles.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSet {
    dim: usize,
    thetas: Vec<f64>,
    phis: Vec<f64>,
    seed: u64,
    mode: SliceMode,
}

impl SliceSet {
    /// `count` directions drawn uniformly from the unit sphere (normalized
    /// Gaussian vectors) with angles uniform on `[0, 2π)`.
    pub fn monte_carlo(dim: usize, count: usize, seed: u64) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(invalid("slice sets need a positive dimension and count"));
        }
        let mut rng = rng_from(seed, &[0x534C_4943]);
        let mut thetas = Vec::with_capacity(dim * count);
        let mut phis = Vec::with_capacity(count);
        let mut v = vec![0.0; dim];
        for _ in 0..count {
            loop {
                for x in v.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    thetas.extend(v.iter().map(|x| x / norm));
                    break;
                }
            }
            phis.push(rng.random::<f64>() * std::f64::consts::TAU);
        }
        Ok(SliceSet { dim, thetas, phis, seed, mode: SliceMode::MonteCarlo })
    }

    /// `θ_j = (cos 2πj/n_theta, sin 2πj/n_theta)` and `φ_k = 2πk/n_phi`.
    pub fn equispaced2d(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(invalid("equispaced grids need positive sizes"));
        }
        let tau = std::f64::consts::TAU;
        let mut thetas = Vec::with_capacity(2 * n_theta);
        for j in 0..n_theta {
            let (s, c) = (tau * j as f64 / n_theta as f64).sin_cos();
            thetas.push(c);
            thetas.push(s);
        }
        let phis = (0..n_phi).map(|k| tau * k as f64 / n_phi as f64).collect();
        Ok(SliceSet { dim: 2, thetas, phis, seed: 0, mode: SliceMode::Equispaced2d })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> SliceMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_thetas(&self) -> usize {
        self.thetas.len() / self.dim
    }

    pub fn num_phis(&self) -> usize {
        self.phis.len()
    }

    #[inline]
    pub fn theta(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.dim..(i + 1) * self.dim]
    }

    /// All directions, row-major `num_thetas × dim`.
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    /// The `(direction index, angle)` pairs that make up the doubly sliced
    /// estimator: paired up in Monte Carlo mode, a full tensor product in
    /// equispaced mode.
    pub fn angle_pairs(&self) -> Vec<(usize, f64)> {
        match self.mode {
            SliceMode::MonteCarlo => self.phis.iter().copied().enumerate().collect(),
            SliceMode::Equispaced2d => (0..self.num_thetas())
                .flat_map(|i| self.phis.iter().map(move |&p| (i, p)))
                .collect(),
        }
    }

    pub(crate) fn check_dim(&self, mu: &Gmm) -> Result<()> {
        crate::error::check_dim(self.dim, mu.dim())
    }
}

/// Output of a distance evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceValue {
    /// The distance itself (not squared).
    pub value: f64,
    pub squared: f64,
    pub slices_used: usize,
    /// Standard error of the per-slice average; zero for deterministic
    /// quadrature and for exact (unsliced) distances.
    pub stderr: f64,
    pub elapsed: Duration,
}

impl DistanceValue {
    pub(crate) fn exact(squared: f64, elapsed: Duration) -> Self {
        let squared = squared.max(0.0);
        DistanceValue { value: squared.sqrt(), squared, slices_used: 0, stderr: 0.0, elapsed }
    }

    /// Averages per-slice values in index order; `stochastic` enables the
    /// standard-error estimate.
    pub(crate) fn from_slices(per_slice: &[f64], stochastic: bool, elapsed: Duration) -> Self {
        let n = per_slice.len();
        let sum: f64 = per_slice.iter().sum();
        let mean = (sum / n as f64).max(0.0);
        let stderr = if stochastic && n > 1 {
            let var = per_slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        DistanceValue { value: mean.sqrt(), squared: mean, slices_used: n, stderr, elapsed }
    }
}

/// `√(2 Σ ωᵏ tr(Σᵏ)/d)`: the covariance term bounding how far the sliced
/// mixture distance can exceed sliced Wasserstein.
pub fn smw_cov_bound_term(mu: &Gmm) -> f64 {
    let d = mu.dim() as f64;
    let s: f64 = mu.weights().iter().zip(mu.components()).map(|(w, c)| w * c.cov().trace()).sum();
    (2.0 * s / d).max(0.0).sqrt()
}

/// Surface area of the unit sphere in `R^d`, `2π^{d/2}/Γ(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / libm::tgamma(h)
}

/// Lower bound `2σ²π^{(d+2)/2}/Γ(d/2)` on the squared doubly sliced distance
/// between a point mass and `N(·, σ²I)` under unnormalized sphere and circle
/// measures.
pub fn dsmw_lower_bound_unnormalized(sigma: f64, d: usize) -> Result<f64> {
    if !(sigma >= 0.0) || d == 0 {
        return Err(invalid("need sigma >= 0 and d >= 1"));
    }
    let h = d as f64 / 2.0;
    Ok(2.0 * sigma * sigma * std::f64::consts::PI.powf(h + 1.0) / libm::tgamma(h))
}

/// The same bound under the probability measures used here: `σ²/2`.
pub fn dsmw_lower_bound(sigma: f64, d: usize) -> Result<f64> {
    if !(sigma >= 0.0) || d == 0 {
        return Err(invalid("need sigma >= 0 and d >= 1"));
    }
    Ok(0.5 * sigma * sigma)
}
