use rayon::prelude::*;

use crate::distances::{dsmw, msw, mw, SliceSet};
use crate::error::{invalid, Result};
use crate::mixture::{em_fit, EmConfig, Gmm, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMetric {
    Mw,
    Msw,
    Dsmw,
}

impl ClusterMetric {
    pub fn name(self) -> &'static str {
        match self {
            ClusterMetric::Mw => "mw",
            ClusterMetric::Msw => "msw",
            ClusterMetric::Dsmw => "dsmw",
        }
    }

    fn distance(self, a: &Gmm, b: &Gmm, slices: &SliceSet) -> Result<f64> {
        Ok(match self {
            ClusterMetric::Mw => mw(a, b)?.value,
            ClusterMetric::Msw => msw(a, b, slices)?.value,
            ClusterMetric::Dsmw => dsmw(a, b, slices)?.value,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    /// Shared directions for the sliced metrics.
    pub slices: SliceSet,
    /// EM settings; the seed for `k` components is `em.seed ^ k`.
    pub em: EmConfig,
    pub tau: f64,
    /// Lower bound on the curve maximum used in the threshold, in data
    /// units. Keeps a curve with no drop at all (a single cluster) from
    /// being judged only against itself.
    pub scale_floor: f64,
}

impl ClusterConfig {
    pub fn new(slices: SliceSet) -> Self {
        ClusterConfig { slices, em: EmConfig::default(), tau: 0.1, scale_floor: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    /// Entry `k - 1` is the distance between the `k`- and `(k+1)`-component
    /// fits, or `None` when either fit failed.
    pub distances: Vec<Option<f64>>,
    pub detected_k: Option<usize>,
    pub threshold: f64,
    pub metric: ClusterMetric,
    /// EM seed used for each `k = 1..=k_max+1`.
    pub fit_seeds: Vec<u64>,
}

/// Fits `k = 1..=k_max+1` components and tracks the distance between
/// consecutive fits. The detected count is the smallest `k` whose distance
/// to the next fit is below `tau · max(curve maximum, scale_floor)`.
pub fn detect_clusters(data: &PointCloud, k_max: usize, metric: ClusterMetric, config: &ClusterConfig) -> Result<ClusterReport> {
    if k_max < 2 {
        return Err(invalid("k_max must be at least 2"));
    }
    if !(config.tau > 0.0) || !(config.scale_floor >= 0.0) {
        return Err(invalid("tau must be positive and the scale floor non-negative"));
    }
    if metric != ClusterMetric::Mw && config.slices.dim() != data.dim() {
        return Err(crate::Error::DimensionMismatch { expected: data.dim(), got: config.slices.dim() });
    }
    let fit_seeds: Vec<u64> = (1..=k_max + 1).map(|k| config.em.seed ^ k as u64).collect();
    let fits: Vec<Option<Gmm>> = fit_seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| em_fit(data, i + 1, &EmConfig { seed, ..config.em.clone() }).ok().map(|f| f.gmm))
        .collect();
    let distances = (0..k_max)
        .into_par_iter()
        .map(|i| match (&fits[i], &fits[i + 1]) {
            (Some(a), Some(b)) => metric.distance(a, b, &config.slices).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    let curve_max = distances.iter().flatten().copied().fold(0.0, f64::max);
    let threshold = config.tau * curve_max.max(config.scale_floor);
    let detected_k = distances.iter().position(|d| matches!(d, Some(v) if *v < threshold)).map(|i| i + 1);
    Ok(ClusterReport { distances, detected_k, threshold, metric, fit_seeds })
}
