use rayon::prelude::*;

use super::params::{realize, QuantParams};
use crate::distances::{project_all, sort_into, DistanceValue, SliceSet};
use crate::error::{check_dim, Result};
use crate::linalg::LowerTriangular;
use crate::mixture::{xi_atom, Gmm};
use crate::transport::{coupling_cost, walk_coupling, MonotoneCoupling};

/// Squared doubly sliced distance from `mu` to `target` with its gradient
/// in the weights, means and projected standard deviations of `mu`.
#[derive(Debug, Clone)]
pub(crate) struct MixtureGrad {
    pub loss: f64,
    /// Derivative in each weight (defined up to an additive constant).
    pub weights: Vec<f64>,
    /// `K × d`, row-major.
    pub means: Vec<f64>,
    /// `Σ_ℓ (∂loss/∂sᵏ_ℓ / sᵏ_ℓ) θ_ℓ θ_ℓᵀ` per component, `K × d × d`.
    pub stdev_scatter: Vec<f64>,
}

pub(crate) fn mixture_grad(mu: &Gmm, target: &Gmm, slices: &SliceSet, support: bool) -> Result<MixtureGrad> {
    check_dim(mu.dim(), target.dim())?;
    slices.check_dim(mu)?;
    let (k, d, l) = (mu.len(), mu.dim(), slices.num_thetas());
    let p0 = project_all(mu, slices);
    let p1 = project_all(target, slices);
    let pairs = slices.angle_pairs();
    let (w0, w1) = (mu.weights(), target.weights());

    // per pair: cost, weight potentials, and support derivative in each atom
    let per_pair: Vec<(f64, Vec<f64>, Vec<f64>)> = pairs
        .par_iter()
        .map_init(
            || (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
            |(xa, xb, oa, ob), &(li, phi)| {
                let (s, c) = phi.sin_cos();
                xa.clear();
                xa.extend(p0.means(li).iter().zip(p0.stdevs(li)).map(|(&m, &sd)| xi_atom(m, sd, c, s)));
                xb.clear();
                xb.extend(p1.means(li).iter().zip(p1.stdevs(li)).map(|(&m, &sd)| xi_atom(m, sd, c, s)));
                sort_into(xa, oa);
                sort_into(xb, ob);
                let cost = coupling_cost(xa, w0, oa, xb, w1, ob);
                let coupling = MonotoneCoupling::from_orders(oa, w0, ob, w1);
                let f = coupling.potentials(k, xb.len(), |i, j| (xa[i] - xb[j]).powi(2)).f;
                let mut dp = vec![0.0; if support { k } else { 0 }];
                if support {
                    walk_coupling(oa, w0, ob, w1, |i, j, m, _| dp[i] += 2.0 * m * (xa[i] - xb[j]));
                }
                (cost, f, dp)
            },
        )
        .collect();

    let costs: Vec<f64> = per_pair.iter().map(|p| p.0).collect();
    let loss = DistanceValue::from_slices(&costs, false, Default::default()).squared;
    let n = pairs.len() as f64;

    let mut weights = vec![0.0; k];
    let mut g_mean = vec![0.0; if support { l * k } else { 0 }];
    let mut g_std = vec![0.0; if support { l * k } else { 0 }];
    for (&(li, phi), (_, f, dp)) in pairs.iter().zip(&per_pair) {
        for (w, fi) in weights.iter_mut().zip(f) {
            *w += fi / n;
        }
        if support {
            let (s, c) = phi.sin_cos();
            for i in 0..k {
                g_mean[li * k + i] += dp[i] * c;
                g_std[li * k + i] += dp[i] * s;
            }
        }
    }

    let mut means = vec![0.0; if support { k * d } else { 0 }];
    let mut stdev_scatter = vec![0.0; if support { k * d * d } else { 0 }];
    if support {
        for li in 0..l {
            let theta = slices.theta(li);
            let sd = p0.stdevs(li);
            for i in 0..k {
                let gm = g_mean[li * k + i] / n;
                for a in 0..d {
                    means[i * d + a] += gm * theta[a];
                }
                // d s / d Σ is θθᵀ/(2s); at s = 0 the zero subgradient is used
                if sd[i] > 0.0 {
                    let gs = g_std[li * k + i] / (n * sd[i]);
                    let block = &mut stdev_scatter[i * d * d..(i + 1) * d * d];
                    for a in 0..d {
                        for b in 0..d {
                            block[a * d + b] += gs * theta[a] * theta[b];
                        }
                    }
                }
            }
        }
    }
    Ok(MixtureGrad { loss, weights, means, stdev_scatter })
}

/// Gradient of the squared doubly sliced distance in the blocks of
/// [`QuantParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrad {
    pub logits: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub factors: Vec<LowerTriangular>,
}

impl QuantGrad {
    pub(crate) fn zeros(params: &QuantParams) -> Self {
        let (k, d) = (params.len(), params.dim());
        QuantGrad { logits: vec![0.0; k], means: vec![vec![0.0; d]; k], factors: vec![LowerTriangular::zeros(d); k] }
    }

    /// Same layout as [`QuantParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.means.first().map_or(0, Vec::len);
        let mut out: Vec<f64> = self.logits.clone();
        for m in &self.means {
            out.extend_from_slice(m);
        }
        for q in &self.factors {
            for i in 0..d {
                for j in 0..=i {
                    out.push(q.get(i, j));
                }
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += scale · (gradient of one target)`.
    pub(crate) fn accumulate(&mut self, params: &QuantParams, g: &MixtureGrad, scale: f64) {
        let d = params.dim();
        let alpha = params.weights();
        // softmax Jacobian; removes the arbitrary constant in the potentials
        let mean_f: f64 = alpha.iter().zip(&g.weights).map(|(a, f)| a * f).sum();
        for (i, out) in self.logits.iter_mut().enumerate() {
            *out += scale * alpha[i] * (g.weights[i] - mean_f);
        }
        for (i, out) in self.means.iter_mut().enumerate() {
            for a in 0..d {
                out[a] += scale * g.means[i * d + a];
            }
        }
        for (i, (out, q)) in self.factors.iter_mut().zip(&params.factors).enumerate() {
            let scatter = &g.stdev_scatter[i * d * d..(i + 1) * d * d];
            // ∂s/∂Q = θθᵀQ / s, lower triangle only
            for a in 0..d {
                for b in 0..=a {
                    let mut acc = 0.0;
                    for c in b..d {
                        acc += scatter[a * d + c] * q.get(c, b);
                    }
                    out.set(a, b, out.get(a, b) + scale * acc);
                }
            }
        }
    }
}

/// Squared doubly sliced distance between `realize(params)` and `target`
/// over `slices`, and its analytic gradient.
///
/// The loss is computed exactly as [`crate::distances::dsmw`] computes its
/// squared value, so the two agree bit for bit. At tied projected atoms
/// the stable-sort coupling gives a valid subgradient.
pub fn dsmw_sq_grad(params: &QuantParams, target: &Gmm, slices: &SliceSet) -> Result<(f64, QuantGrad)> {
    let mu = realize(params);
    let g = mixture_grad(&mu, target, slices, true)?;
    let mut out = QuantGrad::zeros(params);
    out.accumulate(params, &g, 1.0);
    Ok((g.loss, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::dsmw;
    use crate::linalg::PsdMatrix;
    use crate::mixture::GaussianComponent;

    fn params() -> QuantParams {
        QuantParams::new(
            vec![0.2, -0.4, 0.1],
            vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![-1.5, 0.5]],
            vec![
                LowerTriangular::from_rows(&[vec![0.7, 0.0], vec![0.2, 0.4]]).unwrap(),
                LowerTriangular::from_rows(&[vec![0.3, 0.0], vec![-0.5, 1.1]]).unwrap(),
                LowerTriangular::zeros(2),
            ],
            0.2,
        )
        .unwrap()
    }

    fn target() -> Gmm {
        Gmm::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::new(vec![1.0, 1.0], PsdMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]]).unwrap()).unwrap(),
                GaussianComponent::isotropic(vec![-2.0, 0.0], 0.4).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn loss_matches_distance_bit_for_bit() {
        let p = params();
        for seed in 0..5 {
            let s = SliceSet::monte_carlo(2, 64, seed).unwrap();
            let (loss, _) = dsmw_sq_grad(&p, &target(), &s).unwrap();
            assert_eq!(loss, dsmw(&realize(&p), &target(), &s).unwrap().squared);
        }
        let s = SliceSet::equispaced2d(12, 7).unwrap();
        assert_eq!(dsmw_sq_grad(&p, &target(), &s).unwrap().0, dsmw(&realize(&p), &target(), &s).unwrap().squared);
    }

    #[test]
    fn realized_target_is_stationary() {
        let p = params();
        let s = SliceSet::monte_carlo(2, 64, 1).unwrap();
        let (loss, g) = dsmw_sq_grad(&p, &realize(&p), &s).unwrap();
        assert!(loss < 1e-10);
        assert!(g.norm() < 1e-6, "{}", g.norm());
    }

    #[test]
    fn single_component_mean_gradient_matches_differences() {
        let sigma = 0.5;
        let t = Gmm::single(GaussianComponent::isotropic(vec![1.0, -2.0, 0.5], sigma).unwrap());
        let p = QuantParams::at_means(vec![vec![0.3, 0.4, -0.2]], sigma).unwrap();
        let s = SliceSet::monte_carlo(3, 64, 11).unwrap();
        let (_, g) = dsmw_sq_grad(&p, &t, &s).unwrap();
        for a in 0..3 {
            let x = p.means()[0][a];
            let h = 1e-5 * x.abs().max(1.0);
            let eval = |v: f64| {
                let mut q = p.clone();
                q.means[0][a] = v;
                dsmw_sq_grad(&q, &t, &s).unwrap().0
            };
            let fd = (eval(x + h) - eval(x - h)) / (2.0 * h);
            assert!((fd - g.means[0][a]).abs() < 1e-4 * fd.abs().max(1e-8), "{fd} vs {}", g.means[0][a]);
        }
        assert_eq!(g.logits, vec![0.0]);
    }

    #[test]
    fn weight_gradient_vanishes_for_one_component() {
        let p = QuantParams::at_means(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let (_, g) = dsmw_sq_grad(&p, &target(), &SliceSet::monte_carlo(2, 16, 0).unwrap()).unwrap();
        assert_eq!(g.logits, vec![0.0]);
    }
}
