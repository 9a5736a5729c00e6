use rayon::prelude::*;

use crate::distances::{dsmw, sw_empirical, SliceSet};
use crate::error::{check_dim, invalid, Result};
use crate::mixture::{Gmm, PointCloud};
use crate::rng::derive_seed;

/// Directions of the reference quadrature.
const REFERENCE_THETAS: usize = 7200;
/// Angles per direction for the doubly sliced reference.
const REFERENCE_PHIS: usize = 720;

/// The estimator under study and the pair it is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum RateProblem<'a> {
    SwEmpirical(&'a PointCloud, &'a PointCloud),
    Dsmw(&'a Gmm, &'a Gmm),
}

impl RateProblem<'_> {
    fn dim(&self) -> Result<usize> {
        match self {
            RateProblem::SwEmpirical(a, b) => {
                check_dim(a.dim(), b.dim())?;
                Ok(a.dim())
            }
            RateProblem::Dsmw(a, b) => {
                check_dim(a.dim(), b.dim())?;
                Ok(a.dim())
            }
        }
    }

    fn squared(&self, slices: &SliceSet) -> Result<f64> {
        Ok(match self {
            RateProblem::SwEmpirical(a, b) => sw_empirical(a, b, slices, 2)?.squared,
            RateProblem::Dsmw(a, b) => dsmw(a, b, slices)?.squared,
        })
    }

    /// The squared distance on an equispaced grid of `n` directions.
    pub fn reference(&self, n: usize) -> Result<f64> {
        let phis = match self {
            RateProblem::SwEmpirical(..) => 1,
            RateProblem::Dsmw(..) => REFERENCE_PHIS,
        };
        self.squared(&SliceSet::equispaced2d(n, phis)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub slices: usize,
    /// Mean over trials of `|estimate² − reference²|`.
    pub mean_abs_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub reference: f64,
    /// Least-squares slope of `log error` against `log L`; `None` when
    /// some error is zero.
    pub slope: Option<f64>,
    pub degenerate: bool,
}

/// Mean absolute error of the Monte Carlo estimator at each slice count,
/// against a fine equispaced quadrature, and the fitted log-log slope
/// (`-1/2` for the expected `L^{-1/2}` rate).
pub fn verify_mc_rate(problem: RateProblem, slice_counts: &[usize], trials: usize, seed: u64) -> Result<RateReport> {
    let d = problem.dim()?;
    if d != 2 {
        return Err(invalid(format!("the reference quadrature needs d = 2, got d = {d}")));
    }
    if slice_counts.is_empty() || slice_counts[0] == 0 || slice_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("slice counts must be positive and strictly increasing"));
    }
    if trials < 2 {
        return Err(invalid("at least two trials are required"));
    }
    let reference = problem.reference(REFERENCE_THETAS)?;
    let rows = slice_counts
        .iter()
        .map(|&l| {
            let errors = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let slices = SliceSet::monte_carlo(2, l, derive_seed(seed, &[l as u64, t as u64]))?;
                    Ok((problem.squared(&slices)? - reference).abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(RateRow { slices: l, mean_abs_error: errors.iter().sum::<f64>() / trials as f64, trials })
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate = rows.len() < 2 || rows.iter().any(|r| !(r.mean_abs_error > 0.0));
    let slope = if degenerate {
        None
    } else {
        let xs: Vec<f64> = rows.iter().map(|r| (r.slices as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.mean_abs_error.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    };
    Ok(RateReport { rows, reference, slope, degenerate })
}
