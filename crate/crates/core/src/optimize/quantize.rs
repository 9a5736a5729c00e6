use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::adam::{Adam, AdamConfig};
use super::grad::{mixture_grad, QuantGrad};
use super::params::{realize, QuantParams};
use crate::distances::{dsmw, SliceSet};
use crate::error::{check_dim, invalid, Result};
use crate::mixture::{normalize_weights, sample, Gmm};
use crate::rng::derive_seed;

const INIT_TAG: u64 = 0x1417;
const STEP_TAG: u64 = 0x5713;
const EVAL_TAG: u64 = 0xE7A1;

/// Initial factor diagonal, relative to the covariance floor.
const FACTOR_INIT: f64 = 1e-3;

/// Settings shared by [`quantize`] and [`barycenter_free`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    /// Directions per stochastic step.
    pub slices: usize,
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub sigma_floor: f64,
    pub seed: u64,
    /// Directions of the frozen evaluation set used to pick the best
    /// restart; `None` means ten times `slices`.
    pub eval_slices: Option<usize>,
}

impl OptimConfig {
    pub fn quantize_defaults() -> Self {
        OptimConfig { slices: 100, steps: 200, lr: 0.03, restarts: 20, sigma_floor: 1.0, seed: 0, eval_slices: None }
    }

    pub fn barycenter_defaults() -> Self {
        OptimConfig { restarts: 10, sigma_floor: 0.3, ..Self::quantize_defaults() }
    }

    fn eval_count(&self) -> usize {
        self.eval_slices.unwrap_or(10 * self.slices)
    }

    fn validate(&self) -> Result<()> {
        if self.slices == 0 || self.restarts == 0 || self.eval_count() == 0 {
            return Err(invalid("slices, restarts and evaluation slices must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Outcome of a multi-restart optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimReport {
    /// Per restart, the stochastic loss at every step before its update.
    pub traces: Vec<Vec<f64>>,
    /// Held-out objective of each restart's initialization.
    pub eval_initial: Vec<f64>,
    /// Held-out objective of each restart's final parameters.
    pub eval_final: Vec<f64>,
    /// Smallest entry of `eval_final`.
    pub best_loss: f64,
    pub best_restart: usize,
    pub best_params: QuantParams,
    pub best: Gmm,
    pub adam: AdamConfig,
    pub warnings: Vec<String>,
    pub elapsed: Duration,
}

fn weighted_objective(params: &QuantParams, inputs: &[Gmm], lambda: &[f64], slices: &SliceSet) -> Result<(f64, QuantGrad)> {
    let mu = realize(params);
    let mut loss = 0.0;
    let mut grad = QuantGrad::zeros(params);
    for (input, &l) in inputs.iter().zip(lambda) {
        if l == 0.0 {
            continue;
        }
        let g = mixture_grad(&mu, input, slices, true)?;
        loss += l * g.loss;
        grad.accumulate(params, &g, l);
    }
    Ok((loss, grad))
}

fn held_out(params: &QuantParams, inputs: &[Gmm], lambda: &[f64], slices: &SliceSet) -> Result<f64> {
    let mu = realize(params);
    let mut total = 0.0;
    for (input, &l) in inputs.iter().zip(lambda) {
        if l != 0.0 {
            total += l * dsmw(&mu, input, slices)?.squared;
        }
    }
    Ok(total)
}

/// The λ-weighted mixture of the inputs with nonzero λ, used to draw
/// initial means.
fn init_mixture(inputs: &[Gmm], lambda: &[f64]) -> Result<Gmm> {
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for (input, &l) in inputs.iter().zip(lambda) {
        if l > 0.0 {
            weights.extend(input.weights().iter().map(|w| l * w));
            comps.extend(input.components().iter().cloned());
        }
    }
    Gmm::new(weights, comps)
}

struct RestartOutcome {
    trace: Vec<f64>,
    initial: f64,
    last: f64,
    params: QuantParams,
}

fn run_restart(r: usize, inputs: &[Gmm], lambda: &[f64], k: usize, init: &Gmm, eval: &SliceSet, config: &OptimConfig) -> Result<RestartOutcome> {
    let d = init.dim();
    let starts = sample(init, k, derive_seed(config.seed, &[INIT_TAG, r as u64]))?;
    let means = (0..k).map(|i| starts.point(i).to_vec()).collect();
    let mut params = QuantParams::at_means_scaled(means, config.sigma_floor, FACTOR_INIT * config.sigma_floor)?;
    let initial = held_out(&params, inputs, lambda, eval)?;
    let adam_config = AdamConfig::with_lr(config.lr);
    let mut adam = Adam::new(adam_config, params.flat_len());
    let mut flat = params.to_flat();
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let slices = SliceSet::monte_carlo(d, config.slices, derive_seed(config.seed, &[STEP_TAG, r as u64, step as u64]))?;
        let (loss, grad) = weighted_objective(&params, inputs, lambda, &slices)?;
        trace.push(loss);
        adam.step(&mut flat, &grad.to_flat());
        params.set_flat(&flat);
        params.project_diagonals();
        flat = params.to_flat();
    }
    let last = held_out(&params, inputs, lambda, eval)?;
    Ok(RestartOutcome { trace, initial, last, params })
}

/// Free-support barycenter: a `k`-component mixture minimizing the
/// λ-weighted sum of squared doubly sliced distances to the inputs, by
/// Adam on fresh random directions each step, over several restarts.
///
/// Restart `r` starts from means drawn from the λ-weighted mixture of the
/// inputs, zero logits and factors `10⁻³σ·I`; factor diagonals are clamped at
/// zero after every step. The restart with the smallest objective on a
/// frozen evaluation set of directions is returned.
pub fn barycenter_free(inputs: &[Gmm], lambda: &[f64], k: usize, config: &OptimConfig) -> Result<OptimReport> {
    let start = Instant::now();
    config.validate()?;
    if inputs.is_empty() {
        return Err(invalid("at least one input mixture is required"));
    }
    if k == 0 {
        return Err(invalid("the fitted mixture needs at least one component"));
    }
    check_dim(inputs.len(), lambda.len())?;
    let d = inputs[0].dim();
    for g in inputs {
        check_dim(d, g.dim())?;
    }
    let lambda = normalize_weights(lambda)?;
    let init = init_mixture(inputs, &lambda)?;
    let eval = SliceSet::monte_carlo(d, config.eval_count(), derive_seed(config.seed, &[EVAL_TAG]))?;

    let outcomes = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(r, inputs, &lambda, k, &init, &eval, config))
        .collect::<Result<Vec<_>>>()?;

    let mut best_restart = 0;
    for (r, o) in outcomes.iter().enumerate() {
        if o.last < outcomes[best_restart].last {
            best_restart = r;
        }
    }
    let best_params = outcomes[best_restart].params.clone();
    let best = realize(&best_params);
    let mut traces = Vec::with_capacity(outcomes.len());
    let mut eval_initial = Vec::with_capacity(outcomes.len());
    let mut eval_final = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        traces.push(o.trace);
        eval_initial.push(o.initial);
        eval_final.push(o.last);
    }
    Ok(OptimReport {
        traces,
        best_loss: eval_final[best_restart],
        eval_initial,
        eval_final,
        best_restart,
        best_params,
        best,
        adam: AdamConfig::with_lr(config.lr),
        warnings: Vec::new(),
        elapsed: start.elapsed(),
    })
}

/// Approximates `target` by a `k`-component mixture under the squared
/// doubly sliced distance. Equivalent to [`barycenter_free`] with the single
/// input `target`.
pub fn quantize(target: &Gmm, k: usize, config: &OptimConfig) -> Result<OptimReport> {
    let mut report = barycenter_free(std::slice::from_ref(target), &[1.0], k, config)?;
    if k >= target.len() {
        report.warnings.push(format!(
            "requested {k} components for a target with {}; the fit is not a reduction",
            target.len()
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::mw;
    use crate::linalg::PsdMatrix;
    use crate::mixture::GaussianComponent;

    fn small(restarts: usize) -> OptimConfig {
        OptimConfig { restarts, steps: 200, ..OptimConfig::quantize_defaults() }
    }

    fn blobs() -> Gmm {
        let comps = (0..6)
            .map(|i| {
                let a = i as f64;
                GaussianComponent::new(vec![3.0 * (a * 1.1).cos(), 3.0 * (a * 1.1).sin()], PsdMatrix::from_diag(&[0.3, 0.2]).unwrap()).unwrap()
            })
            .collect();
        Gmm::new(vec![1.0 / 6.0; 6], comps).unwrap()
    }

    #[test]
    fn recovers_a_single_gaussian() {
        let t = Gmm::single(GaussianComponent::new(vec![2.0, -1.0], PsdMatrix::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap()).unwrap());
        let cfg = OptimConfig { sigma_floor: 0.3, ..small(2) };
        let r = quantize(&t, 1, &cfg).unwrap();
        assert!(mw(&r.best, &t).unwrap().value < 0.05 * 2.0, "{}", mw(&r.best, &t).unwrap().value);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn report_bookkeeping_and_determinism() {
        let cfg = OptimConfig { steps: 15, sigma_floor: 0.3, ..small(3) };
        let a = quantize(&blobs(), 3, &cfg).unwrap();
        let b = quantize(&blobs(), 3, &cfg).unwrap();
        assert_eq!(a.traces.len(), 3);
        assert!(a.traces.iter().all(|t| t.len() == 15));
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.best_loss, a.eval_final.iter().copied().fold(f64::INFINITY, f64::min));
        assert!(a.warnings.is_empty());
        assert_eq!(a.adam, AdamConfig::default());
    }

    #[test]
    fn degenerate_lambda_reduces_to_quantize() {
        let cfg = OptimConfig { steps: 20, sigma_floor: 0.3, ..small(2) };
        let other = Gmm::single(GaussianComponent::isotropic(vec![10.0, 10.0], 1.0).unwrap());
        let q = quantize(&blobs(), 3, &cfg).unwrap();
        let f = barycenter_free(&[blobs(), other], &[1.0, 0.0], 3, &cfg).unwrap();
        assert_eq!(q.traces, f.traces);
        assert_eq!(q.best_params, f.best_params);
    }

    #[test]
    fn identical_inputs_are_matched() {
        let cfg = OptimConfig::barycenter_defaults();
        let r = barycenter_free(&[blobs(), blobs()], &[0.5, 0.5], 6, &cfg).unwrap();
        assert!(r.best_loss < 0.01 * r.eval_initial[r.best_restart], "{} vs {}", r.best_loss, r.eval_initial[r.best_restart]);
    }
}
