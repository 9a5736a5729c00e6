//! Quantile-based `W₂` between 1d mixtures and sliced Wasserstein between
//! mixtures in higher dimension.

use std::time::Instant;

use rayon::prelude::*;

use super::{project_all, DistanceValue, SliceMode, SliceSet};
use crate::error::{check_dim, invalid, Result};
use crate::mixture::{Gmm, Gmm1d};

pub const DEFAULT_QUAD_NODES: usize = 256;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        let wi = 1.0 / ((1.0 - z * z) * pp * pp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Quadrature rule for `∫₀¹ f(t) dt` with the endpoint-flattening change of
/// variables `t = s³(10 − 15s + 6s²)`, which tames the logarithmic growth of
/// Gaussian quantile functions at 0 and 1.
struct QuantileRule {
    /// `(t, 1 − t, weight)`, with `1 − t` computed without cancellation.
    nodes: Vec<(f64, f64, f64)>,
}

fn smoothstep(s: f64) -> f64 {
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

impl QuantileRule {
    fn new(n: usize) -> Self {
        let (xs, ws) = gauss_legendre(n);
        let nodes = xs
            .iter()
            .zip(&ws)
            .map(|(&s, &w)| {
                let jac = 30.0 * s * s * (1.0 - s) * (1.0 - s);
                (smoothstep(s), smoothstep(1.0 - s), w * jac)
            })
            .collect();
        QuantileRule { nodes }
    }
}

#[inline]
fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

/// Distribution function of a 1d mixture; point masses are unit steps
/// (right-continuous).
pub fn gmm1d_cdf(a: &Gmm1d, x: f64) -> f64 {
    cdf_raw(a.weights(), a.means(), a.stdevs(), x)
}

fn cdf_raw(w: &[f64], m: &[f64], s: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..w.len() {
        acc += w[k] * if s[k] > 0.0 { normal_cdf((x - m[k]) / s[k]) } else if x >= m[k] { 1.0 } else { 0.0 };
    }
    acc
}

fn survival_raw(w: &[f64], m: &[f64], s: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..w.len() {
        acc += w[k] * if s[k] > 0.0 { normal_cdf(-(x - m[k]) / s[k]) } else if x >= m[k] { 0.0 } else { 1.0 };
    }
    acc
}

fn pdf_raw(w: &[f64], m: &[f64], s: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..w.len() {
        if s[k] > 0.0 {
            let z = (x - m[k]) / s[k];
            acc += w[k] * INV_SQRT_TAU * (-0.5 * z * z).exp() / s[k];
        }
    }
    acc
}

/// Borrowed 1d mixture parameters.
#[derive(Clone, Copy)]
pub(crate) struct Mix1d<'a> {
    pub w: &'a [f64],
    pub m: &'a [f64],
    pub s: &'a [f64],
}

impl Mix1d<'_> {
    fn bracket(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..self.w.len() {
            lo = lo.min(self.m[k] - 50.0 * self.s[k]);
            hi = hi.max(self.m[k] + 50.0 * self.s[k]);
        }
        (lo - 1.0, hi + 1.0)
    }

    /// `inf{x : F(x) > t}` given `t` and `1 − t`; `guess` seeds Newton.
    fn quantile(&self, t: f64, upper: f64, guess: Option<f64>) -> f64 {
        let (mut lo, mut hi) = self.bracket();
        // g is increasing with g(lo) <= 0 < g(hi); the tail with the smaller
        // probability is used so that small levels keep relative accuracy.
        let use_lower = t <= 0.5;
        let g = |x: f64| {
            if use_lower {
                cdf_raw(self.w, self.m, self.s, x) - t
            } else {
                upper - survival_raw(self.w, self.m, self.s, x)
            }
        };
        let mut x = match guess {
            Some(x) if x > lo && x < hi => x,
            _ => 0.5 * (lo + hi),
        };
        for _ in 0..400 {
            let gx = g(x);
            if gx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let width_tol = 1e-12f64.max(4.0 * f64::EPSILON * x.abs());
            if hi - lo <= width_tol {
                return hi;
            }
            let p = pdf_raw(self.w, self.m, self.s, x);
            let mut next = 0.5 * (lo + hi);
            if p > 0.0 {
                let step = gx / p;
                let cand = x - step;
                if cand > lo && cand < hi {
                    if step.abs() <= 1e-14 * x.abs().max(1.0) {
                        return cand;
                    }
                    next = cand;
                }
            }
            x = next;
        }
        hi
    }
}

/// Quantile `inf{x : F(x) > t}` of a 1d mixture, `t ∈ (0, 1)`.
pub fn gmm1d_quantile(a: &Gmm1d, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(invalid(format!("quantile level {t} is outside (0, 1)")));
    }
    let mix = Mix1d { w: a.weights(), m: a.means(), s: a.stdevs() };
    Ok(mix.quantile(t, 1.0 - t, None))
}

fn w2_1d_mix(a: Mix1d, b: Mix1d, rule: &QuantileRule) -> f64 {
    if a.w.len() == 1 && b.w.len() == 1 {
        // two Gaussians: the quantile integral has a closed form
        let (dm, ds) = (a.m[0] - b.m[0], a.s[0] - b.s[0]);
        return dm * dm + ds * ds;
    }
    let (mut ga, mut gb) = (None, None);
    let mut acc = 0.0;
    for &(t, u, w) in &rule.nodes {
        let qa = a.quantile(t, u, ga);
        let qb = b.quantile(t, u, gb);
        ga = Some(qa);
        gb = Some(qb);
        let d = qa - qb;
        acc += w * d * d;
    }
    acc
}

/// Squared `W₂` between 1d mixtures by quadrature of the quantile functions.
pub fn w2_1d_gmm(a: &Gmm1d, b: &Gmm1d, quad_nodes: usize) -> Result<f64> {
    if quad_nodes < 16 {
        return Err(invalid("at least 16 quadrature nodes are required"));
    }
    if a == b {
        return Ok(0.0);
    }
    let rule = QuantileRule::new(quad_nodes);
    let ma = Mix1d { w: a.weights(), m: a.means(), s: a.stdevs() };
    let mb = Mix1d { w: b.weights(), m: b.means(), s: b.stdevs() };
    Ok(w2_1d_mix(ma, mb, &rule))
}

/// Sliced Wasserstein between two mixtures: the projected 1d mixtures are
/// compared through their quantile functions, direction by direction.
pub fn sw_gmm(mu0: &Gmm, mu1: &Gmm, slices: &SliceSet, quad_nodes: usize) -> Result<DistanceValue> {
    check_dim(mu0.dim(), mu1.dim())?;
    slices.check_dim(mu0)?;
    if quad_nodes < 16 {
        return Err(invalid("at least 16 quadrature nodes are required"));
    }
    let start = Instant::now();
    let rule = QuantileRule::new(quad_nodes);
    let p0 = project_all(mu0, slices);
    let p1 = project_all(mu1, slices);
    let per_slice: Vec<f64> = (0..slices.num_thetas())
        .into_par_iter()
        .map(|l| {
            let a = Mix1d { w: mu0.weights(), m: p0.means(l), s: p0.stdevs(l) };
            let b = Mix1d { w: mu1.weights(), m: p1.means(l), s: p1.stdevs(l) };
            if a.w == b.w && a.m == b.m && a.s == b.s {
                0.0
            } else {
                w2_1d_mix(a, b, &rule)
            }
        })
        .collect();
    Ok(DistanceValue::from_slices(&per_slice, slices.mode() == SliceMode::MonteCarlo, start.elapsed()))
}
