use super::{validate_problem, DualPotentials, TransportResult};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;

/// Row-marginal violation (L1) at which the iteration stops.
const STOP_VIOLATION: f64 = 1e-9;

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Entropic transport by log-domain Sinkhorn iterations.
///
/// The result is flagged `approximate`. If the marginals are not matched
/// within `1e-9` after `max_iters` sweeps, the iterate with the smallest
/// violation is returned with `converged = false`.
pub fn solve_sinkhorn(cost: &Matrix, w0: &[f64], w1: &[f64], epsilon: f64, max_iters: usize) -> Result<TransportResult> {
    validate_problem(cost, w0, w1)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid("epsilon must be positive"));
    }
    let (m, n) = (cost.rows(), cost.cols());
    let log_a: Vec<f64> = w0.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = w1.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let plan_of = |f: &[f64], g: &[f64]| {
        let mut p = Matrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let v = log_a[i] + log_b[j] + (f[i] + g[j] - cost.get(i, j)) / epsilon;
                p.set(i, j, v.exp());
            }
        }
        p
    };
    let row_violation = |p: &Matrix| -> f64 { (0..m).map(|i| ((0..n).map(|j| p.get(i, j)).sum::<f64>() - w0[i]).abs()).sum() };

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        for i in 0..m {
            let lse = log_sum_exp((0..n).map(|j| log_b[j] + (g[j] - cost.get(i, j)) / epsilon));
            f[i] = if lse.is_finite() { -epsilon * lse } else { 0.0 };
        }
        for j in 0..n {
            let lse = log_sum_exp((0..m).map(|i| log_a[i] + (f[i] - cost.get(i, j)) / epsilon));
            g[j] = if lse.is_finite() { -epsilon * lse } else { 0.0 };
        }
        let viol = row_violation(&plan_of(&f, &g));
        if best.as_ref().is_none_or(|b| viol < b.0) {
            best = Some((viol, f.clone(), g.clone()));
        }
        if viol < STOP_VIOLATION {
            converged = true;
            break;
        }
    }
    let (_, f, g) = best.unwrap_or((0.0, f, g));
    let plan = plan_of(&f, &g);
    let total = plan.as_slice().iter().zip(cost.as_slice()).map(|(p, c)| p * c).sum();
    Ok(TransportResult { cost: total, plan, potentials: DualPotentials { f, g }, approximate: true, converged })
}
