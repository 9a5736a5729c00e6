//! Weighted expectation-maximization for Gaussian mixtures.

use rand::Rng;
use rayon::prelude::*;

use super::{GaussianComponent, Gmm, PointCloud};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, PsdMatrix, SymMatrix};
use crate::rng::rng_from;

/// Responsibility mass below which a component counts as empty.
const EMPTY_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    /// Ridge added to every covariance after the M-step. `None` uses
    /// `1e-6 · tr(data covariance) / d` (or `1e-6` for a cloud without spread).
    pub cov_reg: Option<f64>,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iters: 200, tol: 1e-8, cov_reg: None, seed: 0 }
    }
}

/// Outcome of [`em_fit`].
#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Mean weighted log-likelihood after every E-step.
    pub log_likelihood: Vec<f64>,
    /// Indices into `log_likelihood` of iterations that re-seeded a component;
    /// monotonicity is not expected across those.
    pub reseed_iterations: Vec<usize>,
    /// Number of empty-component re-seeds performed.
    pub reseeds: usize,
    pub iterations: usize,
    pub converged: bool,
    pub cov_reg: f64,
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
}

/// Per-component Cholesky data for log-density evaluation.
struct LogPdf {
    log_norm: f64,
    mean: Vec<f64>,
    chol: Vec<f64>,
}

impl LogPdf {
    fn new(weight: f64, mean: &[f64], cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let sym = SymMatrix::new(d, cov.to_vec())?;
        let l = cholesky(&sym)?;
        let chol = l.as_matrix().as_slice().to_vec();
        let mut log_det = 0.0;
        for i in 0..d {
            let lii = chol[i * d + i];
            if !(lii > 0.0) {
                return Err(Error::Numerical("singular covariance in EM".into()));
            }
            log_det += 2.0 * lii.ln();
        }
        let log_norm = weight.ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(LogPdf { log_norm, mean: mean.to_vec(), chol })
    }

    /// `log(w N(x | m, S))`.
    fn eval(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = x.len();
        let mut maha = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            let row = &self.chol[i * d..i * d + i];
            for (lij, zj) in row.iter().zip(&scratch[..i]) {
                s -= lij * zj;
            }
            let z = s / self.chol[i * d + i];
            scratch[i] = z;
            maha += z * z;
        }
        self.log_norm - 0.5 * maha
    }
}

/// Fits a `k`-component mixture to a (possibly weighted) point cloud.
///
/// Seeding is k-means++ on the data; each covariance receives `cov_reg · I`
/// after its M-step. Components whose responsibility mass vanishes are
/// re-seeded at the worst-explained datum.
pub fn em_fit(data: &PointCloud, k: usize, config: &EmConfig) -> Result<EmFit> {
    let n = data.len();
    let d = data.dim();
    if k == 0 {
        return Err(invalid("component count must be at least 1"));
    }
    if n < k {
        return Err(invalid(format!("{n} points cannot support {k} components")));
    }
    let w = data.weights_or_uniform();
    let (_, data_cov) = data.moments();
    let spread: f64 = (0..d).map(|i| data_cov[i * d + i]).sum::<f64>() / d as f64;
    let cov_reg = config.cov_reg.unwrap_or(if spread > 0.0 { 1e-6 * spread } else { 1e-6 });
    if !(cov_reg >= 0.0) || !cov_reg.is_finite() {
        return Err(invalid("cov_reg must be a nonnegative number"));
    }

    let centers = kmeans_pp(data, &w, k, config.seed);
    let mut resp = vec![0.0; n * k];
    for i in 0..n {
        let x = data.point(i);
        let best = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .unwrap_or(0);
        resp[i * k + best] = 1.0;
    }

    let mut reseeds = 0;
    let mut reseed_iterations = Vec::new();
    let mut params = m_step(data, &w, &resp, k, cov_reg, &data_cov);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut point_ll = vec![0.0; n];
    for iter in 0..config.max_iters.max(1) {
        iterations = iter + 1;
        let ll = e_step(data, &w, &params, &mut resp, &mut point_ll)?;
        trace.push(ll);
        let mut reseeded = false;
        for c in 0..k {
            let mass: f64 = (0..n).map(|i| w[i] * resp[i * k + c]).sum();
            if mass < EMPTY_MASS {
                let worst = (0..n).min_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b])).unwrap_or(0);
                for j in 0..k {
                    resp[worst * k + j] = if j == c { 1.0 } else { 0.0 };
                }
                point_ll[worst] = f64::INFINITY;
                reseeds += 1;
                reseeded = true;
            }
        }
        if reseeded {
            reseed_iterations.push(trace.len());
        }
        if trace.len() >= 2 && !reseeded {
            let prev = trace[trace.len() - 2];
            if (ll - prev).abs() < config.tol * prev.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        params = m_step(data, &w, &resp, k, cov_reg, &data_cov);
    }

    let components = params
        .means
        .into_iter()
        .zip(params.covs)
        .map(|(m, c)| GaussianComponent::new(m, PsdMatrix::new(SymMatrix::new(d, c)?)?))
        .collect::<Result<Vec<_>>>()?;
    let gmm = Gmm::new(params.weights, components)?;
    Ok(EmFit { gmm, log_likelihood: trace, reseed_iterations, reseeds, iterations, converged, cov_reg })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &PointCloud, w: &[f64], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut rng = rng_from(seed, &[0x4B4D_5050]);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, scores: &[f64]| -> usize {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return rng.random_range(0..n);
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, s) in scores.iter().enumerate() {
            acc += s;
            if u < acc {
                return i;
            }
        }
        scores.iter().rposition(|&s| s > 0.0).unwrap_or(n - 1)
    };
    let first = pick(&mut rng, w);
    let mut centers = vec![data.point(first).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data.point(i), &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = dist.iter().zip(w).map(|(d, w)| d * w).collect();
        let next = pick(&mut rng, &scores);
        let c = data.point(next).to_vec();
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(data.point(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn m_step(data: &PointCloud, w: &[f64], resp: &[f64], k: usize, cov_reg: f64, data_cov: &[f64]) -> Params {
    let n = data.len();
    let d = data.dim();
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut covs = vec![vec![0.0; d * d]; k];
    for c in 0..k {
        let mut mass = 0.0;
        let mean = &mut means[c];
        for i in 0..n {
            let r = w[i] * resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            mass += r;
            for (m, x) in mean.iter_mut().zip(data.point(i)) {
                *m += r * x;
            }
        }
        weights[c] = mass;
        if mass <= 0.0 {
            // No support at all; keep a broad placeholder until it is re-seeded.
            covs[c] = data_cov.to_vec();
            for a in 0..d {
                covs[c][a * d + a] += cov_reg.max(f64::MIN_POSITIVE);
            }
            continue;
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        let cov = &mut covs[c];
        for i in 0..n {
            let r = w[i] * resp[i * k + c];
            if r == 0.0 {
                continue;
            }
            let x = data.point(i);
            for a in 0..d {
                let da = r * (x[a] - means[c][a]);
                for b in 0..=a {
                    cov[a * d + b] += da * (x[b] - means[c][b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / mass;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += cov_reg;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|x| *x /= total);
    Params { weights, means, covs }
}

/// Fills responsibilities and per-point log densities; returns the weighted
/// mean log-likelihood.
fn e_step(data: &PointCloud, w: &[f64], params: &Params, resp: &mut [f64], point_ll: &mut [f64]) -> Result<f64> {
    let k = params.weights.len();
    let d = data.dim();
    let pdfs = params
        .weights
        .iter()
        .zip(params.means.iter().zip(&params.covs))
        .map(|(&wk, (m, c))| if wk > 0.0 { LogPdf::new(wk, m, c).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>>>()?;
    resp.par_chunks_mut(k).zip(point_ll.par_iter_mut()).enumerate().for_each(|(i, (r, ll))| {
        let x = data.point(i);
        let mut scratch = vec![0.0; d];
        for (rc, p) in r.iter_mut().zip(&pdfs) {
            *rc = p.as_ref().map_or(f64::NEG_INFINITY, |p| p.eval(x, &mut scratch));
        }
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = r.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for rc in r.iter_mut() {
            *rc = (*rc - lse).exp();
        }
        *ll = lse;
    });
    let ll: f64 = w.iter().zip(point_ll.iter()).map(|(wi, l)| wi * l).sum();
    if !ll.is_finite() {
        return Err(Error::Numerical("EM log-likelihood is not finite".into()));
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::sample;

    fn assert_monotone(fit: &EmFit) {
        for (i, pair) in fit.log_likelihood.windows(2).enumerate() {
            if fit.reseed_iterations.contains(&(i + 1)) {
                continue;
            }
            assert!(pair[1] >= pair[0] - 1e-8 * pair[0].abs().max(1.0), "step {i}: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn identical_points_single_component() {
        let cloud = PointCloud::new(2, [1.5, -2.0].repeat(20), None).unwrap();
        let fit = em_fit(&cloud, 1, &EmConfig { cov_reg: Some(1e-3), ..Default::default() }).unwrap();
        let c = fit.gmm.component(0);
        assert!((c.mean()[0] - 1.5).abs() < 1e-14 && (c.mean()[1] + 2.0).abs() < 1e-14);
        let cov = c.cov().to_rows();
        assert!((cov[0][0] - 1e-3).abs() < 1e-15 && (cov[1][1] - 1e-3).abs() < 1e-15);
        assert!(cov[0][1].abs() < 1e-15);
    }

    #[test]
    fn single_component_is_weighted_mle() {
        let pts = vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 1.0];
        let weights = vec![1.0, 2.0, 3.0, 4.0];
        let cloud = PointCloud::new(2, pts, Some(weights)).unwrap();
        let reg = 0.01;
        let fit = em_fit(&cloud, 1, &EmConfig { cov_reg: Some(reg), ..Default::default() }).unwrap();
        // hand-computed weighted moments, weights (.1,.2,.3,.4)
        let mean = [0.2 + 1.2, 0.6 + 0.4];
        let c = fit.gmm.component(0);
        assert!((c.mean()[0] - mean[0]).abs() < 1e-12 && (c.mean()[1] - mean[1]).abs() < 1e-12);
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let w = [0.1, 0.2, 0.3, 0.4];
        for a in 0..2 {
            for b in 0..2 {
                let mut s: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p[a] - mean[a]) * (p[b] - mean[b])).sum();
                if a == b {
                    s += reg;
                }
                assert!((c.cov().get(a, b) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_blobs_recovered() {
        let blobs = Gmm::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::isotropic(vec![5.0, 0.0], 1.0).unwrap(),
                GaussianComponent::isotropic(vec![-5.0, 0.0], 1.0).unwrap(),
            ],
        )
        .unwrap();
        let cloud = sample(&blobs, 1000, 21).unwrap();
        let fit = em_fit(&cloud, 2, &EmConfig { seed: 4, ..Default::default() }).unwrap();
        assert_monotone(&fit);
        let mut comps: Vec<_> = fit.gmm.components().iter().zip(fit.gmm.weights()).collect();
        comps.sort_by(|a, b| a.0.mean()[0].total_cmp(&b.0.mean()[0]));
        // oracle: sample statistics of each generated half
        let left: Vec<&[f64]> = (0..cloud.len()).map(|i| cloud.point(i)).filter(|p| p[0] < 0.0).collect();
        let lm = left.iter().map(|p| p[0]).sum::<f64>() / left.len() as f64;
        assert!((comps[0].0.mean()[0] - lm).abs() < 0.05);
        assert!((comps[0].0.mean()[0] + 5.0).abs() < 0.2);
        assert!((comps[1].0.mean()[0] - 5.0).abs() < 0.2);
        assert!(comps.iter().all(|(_, w)| (**w - 0.5).abs() < 0.05));
    }

    #[test]
    fn many_components_monotone_and_deterministic() {
        let mix = Gmm::new(
            vec![0.2, 0.3, 0.5],
            vec![
                GaussianComponent::isotropic(vec![0.0, 0.0], 1.0).unwrap(),
                GaussianComponent::isotropic(vec![2.0, 1.0], 0.5).unwrap(),
                GaussianComponent::isotropic(vec![-1.0, 3.0], 0.8).unwrap(),
            ],
        )
        .unwrap();
        let cloud = sample(&mix, 800, 2).unwrap();
        for k in 1..=6 {
            let cfg = EmConfig { seed: k as u64, max_iters: 300, ..Default::default() };
            let fit = em_fit(&cloud, k, &cfg).unwrap();
            assert_monotone(&fit);
            let again = em_fit(&cloud, k, &cfg).unwrap();
            assert_eq!(fit.gmm, again.gmm);
        }
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Three distinct locations, duplicated; k-means++ may still pick a
        // duplicate, so force a degenerate start through k = n.
        let cloud = PointCloud::new(1, vec![0.0, 0.0, 0.0, 10.0], None).unwrap();
        let fit = em_fit(&cloud, 4, &EmConfig { cov_reg: Some(1e-2), ..Default::default() }).unwrap();
        assert_eq!(fit.gmm.len(), 4);
        assert!(fit.gmm.weights().iter().all(|w| w.is_finite()));
    }

    #[test]
    fn rejects_too_few_points() {
        let cloud = PointCloud::new(1, vec![0.0, 1.0], None).unwrap();
        assert!(matches!(em_fit(&cloud, 3, &EmConfig::default()), Err(Error::InvalidInput(_))));
    }
}
