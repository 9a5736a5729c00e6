use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use super::adam::{Adam, AdamConfig};
use super::grad::mixture_grad;
use super::params::softmax;
use crate::distances::{mw_plan, sort_into, sw_empirical, SliceSet};
use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{gemm, sqrtm_psd, sym_eig, Matrix, PsdMatrix, SymMatrix};
use crate::mixture::{normalize_weights, GaussianComponent, Gmm, PointCloud};
use crate::rng::{derive_seed, rng_from};
use crate::transport::walk_coupling;

const INIT_TAG: u64 = 0x1417;
const STEP_TAG: u64 = 0x5713;
const EVAL_TAG: u64 = 0xE7A1;

/// Largest candidate table `K₁·…·K_I` accepted by [`barycenter_fixed`].
pub const MAX_FIXED_COMPONENTS: usize = 1_000_000;


#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBarycenterConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GaussianBarycenterConfig {
    fn default() -> Self {
        GaussianBarycenterConfig { max_iters: 200, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBarycenter {
    pub component: GaussianComponent,
    pub iterations: usize,
    /// `false` when `max_iters` ran out; `component` is then the last iterate.
    pub converged: bool,
    /// Frobenius change of the covariance at each iteration.
    pub residuals: Vec<f64>,
}

/// `W₂` barycenter of Gaussians with weights `lambda`.
///
/// The mean is the weighted mean. The covariance comes from the fixed point
/// `S ← S^{-1/2} (Σ λᵢ (S^{1/2} Σᵢ S^{1/2})^{1/2})² S^{-1/2}` started at
/// `Σ λᵢ Σᵢ + 1e-12·I`.
pub fn gaussian_barycenter(components: &[GaussianComponent], lambda: &[f64], config: GaussianBarycenterConfig) -> Result<GaussianBarycenter> {
    if components.is_empty() {
        return Err(invalid("at least one component is required"));
    }
    check_dim(components.len(), lambda.len())?;
    let d = components[0].dim();
    for c in components {
        check_dim(d, c.dim())?;
    }
    let lambda = normalize_weights(lambda)?;
    let active: Vec<usize> = (0..components.len()).filter(|&i| lambda[i] > 0.0).collect();

    let mut mean = vec![0.0; d];
    for &i in &active {
        for (m, x) in mean.iter_mut().zip(components[i].mean()) {
            *m += lambda[i] * x;
        }
    }
    let first = components[active[0]].cov();
    if active.iter().all(|&i| components[i].cov() == first) {
        let mean = if active.len() == 1 { components[active[0]].mean().to_vec() } else { mean };
        return Ok(GaussianBarycenter { component: GaussianComponent::new(mean, first.clone())?, iterations: 0, converged: true, residuals: Vec::new() });
    }

    let covs: Vec<&SymMatrix> = active.iter().map(|&i| components[i].cov().as_sym()).collect();
    let lam: Vec<f64> = active.iter().map(|&i| lambda[i]).collect();
    let mut s = SymMatrix::weighted_sum(&covs, &lam)?;
    let mut shifted = s.as_matrix().clone();
    for i in 0..d {
        shifted.set(i, i, shifted.get(i, i) + 1e-12);
    }
    s = SymMatrix::from_matrix(shifted)?;

    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let eig = sym_eig(&s)?;
        let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let root: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0).sqrt()).collect();
        let inv_root: Vec<f64> = eig.values.iter().map(|&v| if v > 1e-14 * top && v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        let half = eig.recompose_with(&root);
        let inv_half = eig.recompose_with(&inv_root);
        let mut t = Matrix::zeros(d, d);
        for (c, &l) in covs.iter().zip(&lam) {
            let inner = gemm(&gemm(half.as_matrix(), false, c.as_matrix(), false), false, half.as_matrix(), false);
            let r = sqrtm_psd(&SymMatrix::from_matrix(inner)?)?;
            for (o, x) in t.as_mut_slice().iter_mut().zip(r.as_matrix().as_slice()) {
                *o += l * x;
            }
        }
        let t2 = gemm(&t, false, &t, false);
        let next = SymMatrix::from_matrix(gemm(&gemm(inv_half.as_matrix(), false, &t2, false), false, inv_half.as_matrix(), false))?;
        let change = next.as_matrix().sub(s.as_matrix()).frobenius_norm();
        residuals.push(change);
        s = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let cov = PsdMatrix::new(s)?;
    Ok(GaussianBarycenter { component: GaussianComponent::new(mean, cov)?, iterations: residuals.len(), converged, residuals })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedConfig {
    pub slices: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub gaussian: GaussianBarycenterConfig,
}

impl Default for FixedConfig {
    fn default() -> Self {
        FixedConfig { slices: 100, steps: 10, lr: 0.03, seed: 0, gaussian: GaussianBarycenterConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedBarycenter {
    /// The barycenter, with candidates of weight below `1e-12` removed.
    pub gmm: Gmm,
    /// Weights over the full candidate table before pruning.
    pub weights: Vec<f64>,
    /// Objective at each step, before its update.
    pub trace: Vec<f64>,
    /// Candidates whose Gaussian barycenter hit the iteration limit.
    pub unconverged: usize,
    pub elapsed: Duration,
}

/// Barycenter with frozen components: one Gaussian barycenter per tuple of
/// input components, reweighted by Adam on the λ-weighted sum of squared
/// doubly sliced distances to the inputs.
///
/// Initial weights glue the mixture Wasserstein plans from the first input
/// to every other input, so that a single input is reproduced exactly.
pub fn barycenter_fixed(inputs: &[Gmm], lambda: &[f64], config: &FixedConfig) -> Result<FixedBarycenter> {
    let start = Instant::now();
    if inputs.is_empty() {
        return Err(invalid("at least one input mixture is required"));
    }
    check_dim(inputs.len(), lambda.len())?;
    if config.slices == 0 {
        return Err(invalid("at least one slice is required"));
    }
    let d = inputs[0].dim();
    for g in inputs {
        check_dim(d, g.dim())?;
    }
    let lambda = normalize_weights(lambda)?;
    let sizes: Vec<usize> = inputs.iter().map(Gmm::len).collect();
    let total = sizes
        .iter()
        .try_fold(1usize, |acc, &k| acc.checked_mul(k).filter(|&t| t <= MAX_FIXED_COMPONENTS))
        .ok_or_else(|| {
            Error::ResourceLimit(format!(
                "the fixed-component table would have {} candidates (limit {MAX_FIXED_COMPONENTS}); use the free-component barycenter instead",
                sizes.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("x")
            ))
        })?;

    let tuple = |mut idx: usize| -> Vec<usize> {
        let mut out = vec![0; sizes.len()];
        for i in (0..sizes.len()).rev() {
            out[i] = idx % sizes[i];
            idx /= sizes[i];
        }
        out
    };

    let bary = (0..total)
        .into_par_iter()
        .map(|t| {
            let ks = tuple(t);
            let comps: Vec<GaussianComponent> = ks.iter().zip(inputs).map(|(&k, g)| g.component(k).clone()).collect();
            gaussian_barycenter(&comps, &lambda, config.gaussian)
        })
        .collect::<Result<Vec<_>>>()?;
    let unconverged = bary.iter().filter(|b| !b.converged).count();
    let components: Vec<GaussianComponent> = bary.into_iter().map(|b| b.component).collect();

    let plans = inputs[1..].iter().map(|g| mw_plan(&inputs[0], g).map(|r| r.plan)).collect::<Result<Vec<_>>>()?;
    let w0 = inputs[0].weights();
    let mut logits: Vec<f64> = (0..total)
        .map(|t| {
            let ks = tuple(t);
            let base = w0[ks[0]];
            let mut w = base;
            if base > 0.0 {
                for (plan, &k) in plans.iter().zip(&ks[1..]) {
                    w *= plan.get(ks[0], k) / base;
                }
            }
            // empty candidates keep exactly zero weight: their softmax
            // gradient is proportional to their weight
            if w > 0.0 {
                w.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();

    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), total);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let slices = SliceSet::monte_carlo(d, config.slices, derive_seed(config.seed, &[STEP_TAG, step as u64]))?;
        let alpha = softmax(&logits);
        // zero-weight atoms change neither the loss nor the gradient but
        // would select a nonzero subgradient at a kink of the loss
        let active: Vec<usize> = (0..total).filter(|&i| alpha[i] > 0.0).collect();
        let mu = Gmm::new(active.iter().map(|&i| alpha[i]).collect(), active.iter().map(|&i| components[i].clone()).collect())?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; total];
        for (input, &l) in inputs.iter().zip(&lambda) {
            if l == 0.0 {
                continue;
            }
            let g = mixture_grad(&mu, input, &slices, false)?;
            loss += l * g.loss;
            let mean_f: f64 = active.iter().zip(&g.weights).map(|(&i, f)| alpha[i] * f).sum();
            for (&i, f) in active.iter().zip(&g.weights) {
                grad[i] += l * alpha[i] * (f - mean_f);
            }
        }
        trace.push(loss);
        adam.step(&mut logits, &grad);
    }

    let weights = softmax(&logits);
    let (kept_w, kept_c): (Vec<f64>, Vec<GaussianComponent>) =
        weights.iter().zip(&components).filter(|(w, _)| **w >= 1e-12).map(|(w, c)| (*w, c.clone())).unzip();
    let gmm = Gmm::new(kept_w, kept_c)?;
    Ok(FixedBarycenter { gmm, weights, trace, unconverged, elapsed: start.elapsed() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointBarycenterConfig {
    pub slices: usize,
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Directions used to compare restarts; `None` means ten times `slices`.
    pub eval_slices: Option<usize>,
}

impl Default for PointBarycenterConfig {
    fn default() -> Self {
        PointBarycenterConfig { slices: 100, steps: 200, lr: 0.03, restarts: 1, seed: 0, eval_slices: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointBarycenter {
    pub points: PointCloud,
    pub traces: Vec<Vec<f64>>,
    pub eval_initial: Vec<f64>,
    pub eval_final: Vec<f64>,
    pub best_restart: usize,
    pub elapsed: Duration,
}

fn sw_objective(points: &PointCloud, inputs: &[PointCloud], lambda: &[f64], slices: &SliceSet) -> Result<f64> {
    let mut total = 0.0;
    for (input, &l) in inputs.iter().zip(lambda) {
        if l != 0.0 {
            total += l * sw_empirical(points, input, slices, 2)?.squared;
        }
    }
    Ok(total)
}

/// Loss and gradient in the `N × d` support points of a uniform cloud.
fn sw_step(x: &[f64], n: usize, d: usize, inputs: &[PointCloud], lambda: &[f64], slices: &SliceSet) -> Result<(f64, Vec<f64>)> {
    let l = slices.num_thetas();
    let theta = Matrix::from_vec(l, d, slices.thetas().to_vec())?;
    let px = gemm(&theta, false, &Matrix::from_vec(n, d, x.to_vec())?, true);
    let wx = vec![1.0 / n as f64; n];
    let projected: Vec<(Matrix, Vec<f64>, f64)> = inputs
        .iter()
        .zip(lambda)
        .filter(|(_, &lam)| lam != 0.0)
        .map(|(c, &lam)| Ok((gemm(&theta, false, &Matrix::from_vec(c.len(), d, c.points().to_vec())?, true), c.weights_or_uniform(), lam)))
        .collect::<Result<_>>()?;
    let per_slice: Vec<(f64, Vec<f64>)> = (0..l)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(ox, oy), li| {
                let xs = px.row(li);
                sort_into(xs, ox);
                let mut g = vec![0.0; n];
                let mut cost = 0.0;
                for (py, wy, lam) in &projected {
                    let ys = py.row(li);
                    sort_into(ys, oy);
                    walk_coupling(ox, &wx, oy, wy, |i, j, m, _| {
                        let r = xs[i] - ys[j];
                        cost += lam * m * r * r;
                        g[i] += 2.0 * lam * m * r;
                    });
                }
                (cost, g)
            },
        )
        .collect();
    let loss = per_slice.iter().map(|p| p.0).sum::<f64>() / l as f64;
    let mut gm = Matrix::zeros(l, n);
    for (li, (_, g)) in per_slice.iter().enumerate() {
        for (i, v) in g.iter().enumerate() {
            gm.set(li, i, v / l as f64);
        }
    }
    Ok((loss, gemm(&gm, true, &theta, false).into_vec()))
}

/// Sliced Wasserstein barycenter of point clouds: `n` uniformly weighted
/// points moved by Adam to minimize the λ-weighted sum of squared sliced
/// distances to the inputs.
pub fn sw_barycenter_points(inputs: &[PointCloud], lambda: &[f64], n: usize, config: &PointBarycenterConfig) -> Result<PointBarycenter> {
    let start = Instant::now();
    if inputs.is_empty() || n == 0 {
        return Err(invalid("need at least one input cloud and one support point"));
    }
    if config.slices == 0 || config.restarts == 0 {
        return Err(invalid("slices and restarts must be at least 1"));
    }
    check_dim(inputs.len(), lambda.len())?;
    let d = inputs[0].dim();
    for c in inputs {
        check_dim(d, c.dim())?;
    }
    let lambda = normalize_weights(lambda)?;
    let eval = SliceSet::monte_carlo(d, config.eval_slices.unwrap_or(10 * config.slices), derive_seed(config.seed, &[EVAL_TAG]))?;
    let cumulative = |w: &[f64]| -> Vec<f64> {
        w.iter()
            .scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    };
    let lam_cum = cumulative(&lambda);
    let input_cum: Vec<Vec<f64>> = inputs.iter().map(|c| cumulative(&c.weights_or_uniform())).collect();
    let pick = |cum: &[f64], u: f64| cum.iter().position(|&c| u * cum[cum.len() - 1] < c).unwrap_or(cum.len() - 1);

    let outcomes = (0..config.restarts)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, f64, f64, Vec<f64>)> {
            let mut rng = rng_from(config.seed, &[INIT_TAG, r as u64]);
            let mut x = Vec::with_capacity(n * d);
            for _ in 0..n {
                let i = pick(&lam_cum, rng.random::<f64>());
                let j = pick(&input_cum[i], rng.random::<f64>());
                x.extend_from_slice(inputs[i].point(j));
            }
            let initial = sw_objective(&PointCloud::new(d, x.clone(), None)?, inputs, &lambda, &eval)?;
            let mut adam = Adam::new(AdamConfig::with_lr(config.lr), n * d);
            let mut trace = Vec::with_capacity(config.steps);
            for step in 0..config.steps {
                let slices = SliceSet::monte_carlo(d, config.slices, derive_seed(config.seed, &[STEP_TAG, r as u64, step as u64]))?;
                let (loss, grad) = sw_step(&x, n, d, inputs, &lambda, &slices)?;
                trace.push(loss);
                adam.step(&mut x, &grad);
            }
            let last = sw_objective(&PointCloud::new(d, x.clone(), None)?, inputs, &lambda, &eval)?;
            Ok((trace, initial, last, x))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best_restart = 0;
    for (r, o) in outcomes.iter().enumerate() {
        if o.2 < outcomes[best_restart].2 {
            best_restart = r;
        }
    }
    let points = PointCloud::new(d, outcomes[best_restart].3.clone(), None)?;
    let mut traces = Vec::new();
    let mut eval_initial = Vec::new();
    let mut eval_final = Vec::new();
    for (t, i, f, _) in outcomes {
        traces.push(t);
        eval_initial.push(i);
        eval_final.push(f);
    }
    Ok(PointBarycenter { points, traces, eval_initial, eval_final, best_restart, elapsed: start.elapsed() })
}
