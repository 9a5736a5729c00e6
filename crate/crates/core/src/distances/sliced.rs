use std::time::Instant;

use rayon::prelude::*;

use super::{DistanceValue, SliceMode, SliceSet};
use crate::error::{check_dim, invalid, Result};
use crate::linalg::{gemm, Matrix};
use crate::mixture::{xi_atom, Gmm, PointCloud};
use crate::transport::{coupling_cost, solve_exact, TransportResult};

/// Projected means and standard deviations of every component along every
/// direction of a slice set, stored `num_thetas × K`.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    k: usize,
    means: Vec<f64>,
    stdevs: Vec<f64>,
}

impl Projection {
    #[inline]
    pub fn means(&self, l: usize) -> &[f64] {
        &self.means[l * self.k..(l + 1) * self.k]
    }

    #[inline]
    pub fn stdevs(&self, l: usize) -> &[f64] {
        &self.stdevs[l * self.k..(l + 1) * self.k]
    }
}

/// `θ·mᵏ` and `(θᵀΣᵏθ)^{1/2}` for all directions and components.
pub(crate) fn project_all(mu: &Gmm, slices: &SliceSet) -> Projection {
    let d = mu.dim();
    let k = mu.len();
    let l = slices.num_thetas();
    let theta = Matrix::from_vec(l, d, slices.thetas().to_vec()).expect("slice set shape");
    let mut mean_rows = Vec::with_capacity(k * d);
    for c in mu.components() {
        mean_rows.extend_from_slice(c.mean());
    }
    let means_t = Matrix::from_vec(k, d, mean_rows).expect("mean shape");
    let means = gemm(&theta, false, &means_t, true).into_vec();
    let mut stdevs = vec![0.0; l * k];
    for (ci, c) in mu.components().iter().enumerate() {
        let cov = c.cov().as_matrix();
        if cov.as_slice().iter().all(|&x| x == 0.0) {
            continue;
        }
        let tc = gemm(&theta, false, cov, false);
        for li in 0..l {
            let q: f64 = tc.row(li).iter().zip(slices.theta(li)).map(|(a, b)| a * b).sum();
            stdevs[li * k + ci] = q.max(0.0).sqrt();
        }
    }
    Projection { k, means, stdevs }
}

fn check_pair(mu0: &Gmm, mu1: &Gmm, slices: &SliceSet) -> Result<()> {
    check_dim(mu0.dim(), mu1.dim())?;
    slices.check_dim(mu0)
}

fn stochastic(slices: &SliceSet) -> bool {
    slices.mode() == SliceMode::MonteCarlo
}

/// Outer transport problem of the mixture sliced distance, plus the
/// per-direction costs of the optimal plan.
fn msw_solve(mu0: &Gmm, mu1: &Gmm, slices: &SliceSet) -> Result<(TransportResult, Vec<f64>)> {
    check_pair(mu0, mu1, slices)?;
    let p0 = project_all(mu0, slices);
    let p1 = project_all(mu1, slices);
    let (k0, k1) = (mu0.len(), mu1.len());
    let l = slices.num_thetas();
    let rows: Vec<Vec<f64>> = (0..k0)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; k1];
            for li in 0..l {
                let (ma, sa) = (p0.means(li)[i], p0.stdevs(li)[i]);
                let (mb, sb) = (p1.means(li), p1.stdevs(li));
                for j in 0..k1 {
                    let dm = ma - mb[j];
                    let ds = sa - sb[j];
                    row[j] += dm * dm + ds * ds;
                }
            }
            row.iter_mut().for_each(|x| *x /= l as f64);
            row
        })
        .collect();
    let cost = Matrix::from_rows(&rows)?;
    let plan = solve_exact(&cost, mu0.weights(), mu1.weights())?;
    let support: Vec<(usize, usize, f64)> = (0..k0)
        .flat_map(|i| (0..k1).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let g = plan.plan.get(i, j);
            (g > 0.0).then_some((i, j, g))
        })
        .collect();
    let per_slice = (0..l)
        .map(|li| {
            support
                .iter()
                .map(|&(i, j, g)| {
                    let dm = p0.means(li)[i] - p1.means(li)[j];
                    let ds = p0.stdevs(li)[i] - p1.stdevs(li)[j];
                    g * (dm * dm + ds * ds)
                })
                .sum()
        })
        .collect();
    Ok((plan, per_slice))
}

/// Component coupling of the mixture sliced distance: transport between
/// components with the direction-averaged 1d Gaussian cost.
pub fn msw_plan(mu0: &Gmm, mu1: &Gmm, slices: &SliceSet) -> Result<TransportResult> {
    Ok(msw_solve(mu0, mu1, slices)?.0)
}

/// Mixture sliced Wasserstein: the component cost is the sliced Gaussian
/// distance averaged over the shared directions, then one exact transport.
pub fn msw(mu0: &Gmm, mu1: &Gmm, slices: &SliceSet) -> Result<DistanceValue> {
    let start = Instant::now();
    let (plan, per_slice) = msw_solve(mu0, mu1, slices)?;
    let n = per_slice.len();
    let squared = plan.cost.max(0.0);
    let stderr = if stochastic(slices) && n > 1 {
        let mean = per_slice.iter().sum::<f64>() / n as f64;
        let var = per_slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(DistanceValue { value: squared.sqrt(), squared, slices_used: n, stderr, elapsed: start.elapsed() })
}

/// Sliced mixture Wasserstein: per direction, exact transport between the
/// `(mean, stdev)` atoms of the projected mixtures.
pub fn smw(mu0: &Gmm, mu1: &Gmm, slices: &SliceSet) -> Result<DistanceValue> {
    check_pair(mu0, mu1, slices)?;
    let start = Instant::now();
    let p0 = project_all(mu0, slices);
    let p1 = project_all(mu1, slices);
    let (k0, k1) = (mu0.len(), mu1.len());
    let per_slice = (0..slices.num_thetas())
        .into_par_iter()
        .map(|li| {
            let (ma, sa, mb, sb) = (p0.means(li), p0.stdevs(li), p1.means(li), p1.stdevs(li));
            let mut cost = Matrix::zeros(k0, k1);
            for i in 0..k0 {
                for j in 0..k1 {
                    let dm = ma[i] - mb[j];
                    let ds = sa[i] - sb[j];
                    cost.set(i, j, dm * dm + ds * ds);
                }
            }
            solve_exact(&cost, mu0.weights(), mu1.weights()).map(|r| r.cost)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DistanceValue::from_slices(&per_slice, stochastic(slices), start.elapsed()))
}

/// Sorts `idx` by `xs`, ties by index.
#[inline]
pub(crate) fn sort_into(xs: &[f64], idx: &mut Vec<usize>) {
    idx.clear();
    idx.extend(0..xs.len());
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
}

/// Per-pair squared costs of the doubly sliced estimator, in pair order.
fn dsmw_per_slice(mu0: &Gmm, mu1: &Gmm, p0: &Projection, p1: &Projection, pairs: &[(usize, f64)]) -> Vec<f64> {
    let (w0, w1) = (mu0.weights(), mu1.weights());
    pairs
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
                coupling_cost(xa, w0, oa, xb, w1, ob)
            },
        )
        .collect()
}

/// Doubly sliced mixture Wasserstein: each projected mixture's
/// `(mean, stdev)` atoms are projected once more by an angle `φ` and
/// compared with 1d transport.
pub fn dsmw(mu0: &Gmm, mu1: &Gmm, slices: &SliceSet) -> Result<DistanceValue> {
    check_pair(mu0, mu1, slices)?;
    let start = Instant::now();
    let p0 = project_all(mu0, slices);
    let p1 = project_all(mu1, slices);
    let per_slice = dsmw_per_slice(mu0, mu1, &p0, &p1, &slices.angle_pairs());
    Ok(DistanceValue::from_slices(&per_slice, stochastic(slices), start.elapsed()))
}

/// Monte Carlo sliced Wasserstein-`p` between two point clouds.
pub fn sw_empirical(a: &PointCloud, b: &PointCloud, slices: &SliceSet, p: u32) -> Result<DistanceValue> {
    check_dim(a.dim(), b.dim())?;
    check_dim(slices.dim(), a.dim())?;
    if p != 1 && p != 2 {
        return Err(invalid(format!("sliced Wasserstein order must be 1 or 2, got {p}")));
    }
    let start = Instant::now();
    let l = slices.num_thetas();
    let d = a.dim();
    let theta = Matrix::from_vec(l, d, slices.thetas().to_vec())?;
    let pa = gemm(&theta, false, &Matrix::from_vec(a.len(), d, a.points().to_vec())?, true);
    let pb = gemm(&theta, false, &Matrix::from_vec(b.len(), d, b.points().to_vec())?, true);
    let (wa, wb) = (a.weights_or_uniform(), b.weights_or_uniform());
    let per_slice: Vec<f64> = (0..l)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(oa, ob), li| {
                let (xa, xb) = (pa.row(li), pb.row(li));
                sort_into(xa, oa);
                sort_into(xb, ob);
                if p == 2 {
                    coupling_cost(xa, &wa, oa, xb, &wb, ob)
                } else {
                    let mut cost = 0.0;
                    crate::transport::walk_coupling(oa, &wa, ob, &wb, |i, j, m, _| cost += m * (xa[i] - xb[j]).abs());
                    cost
                }
            },
        )
        .collect();
    let n = per_slice.len();
    let mean = (per_slice.iter().sum::<f64>() / n as f64).max(0.0);
    let value = if p == 2 { mean.sqrt() } else { mean };
    let stderr = if stochastic(slices) && n > 1 {
        let var = per_slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(DistanceValue { value, squared: value * value, slices_used: n, stderr, elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::{mw, sw_gmm};
    use crate::linalg::PsdMatrix;
    use crate::mixture::GaussianComponent;

    fn gauss(mean: Vec<f64>, diag: &[f64]) -> GaussianComponent {
        GaussianComponent::new(mean, PsdMatrix::from_diag(diag).unwrap()).unwrap()
    }

    fn two_blobs(shift: f64) -> Gmm {
        Gmm::new(
            vec![0.3, 0.7],
            vec![
                GaussianComponent::new(vec![shift, 1.0], PsdMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()).unwrap(),
                gauss(vec![-1.0, shift], &[0.3, 0.1]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let mu = two_blobs(0.5);
        let s = SliceSet::monte_carlo(2, 50, 3).unwrap();
        assert_eq!(msw(&mu, &mu, &s).unwrap().value, 0.0);
        assert_eq!(smw(&mu, &mu, &s).unwrap().value, 0.0);
        assert_eq!(dsmw(&mu, &mu, &s).unwrap().value, 0.0);
    }

    #[test]
    fn single_components_collapse_to_sliced_gaussian() {
        let a = Gmm::single(GaussianComponent::new(vec![0.0, 1.0, 2.0], PsdMatrix::from_rows(&[vec![2.0, 0.3, 0.0], vec![0.3, 1.0, 0.2], vec![0.0, 0.2, 0.5]]).unwrap()).unwrap());
        let b = Gmm::single(gauss(vec![1.0, -1.0, 0.0], &[0.2, 3.0, 1.0]));
        let s = SliceSet::monte_carlo(3, 200, 9).unwrap();
        let m = msw(&a, &b, &s).unwrap();
        let sm = smw(&a, &b, &s).unwrap();
        let sw = sw_gmm(&a, &b, &s, 256).unwrap();
        assert!((m.squared - sw.squared).abs() < 1e-10, "{} vs {}", m.squared, sw.squared);
        assert!((m.squared - sm.squared).abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_mixture_matches_mw() {
        let mk = |a: f64, b: f64| Gmm::new(vec![0.5, 0.5], vec![gauss(vec![a], &[1.0]), gauss(vec![b], &[1.0])]).unwrap();
        let (a, b) = (mk(0.0, 10.0), mk(1.0, 11.0));
        let s = SliceSet::monte_carlo(1, 17, 0).unwrap();
        assert!((msw(&a, &b, &s).unwrap().value - 1.0).abs() < 1e-12);
        assert!((mw(&a, &b).unwrap().value - 1.0).abs() < 1e-12);
        let plan = msw_plan(&a, &b, &s).unwrap();
        assert!((plan.plan.get(0, 0) - 0.5).abs() < 1e-12 && plan.plan.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn dirac_versus_isotropic_gaussian() {
        let dirac = Gmm::single(GaussianComponent::dirac(vec![0.0, 0.0]).unwrap());
        let sigma = 1.5;
        let g = Gmm::single(GaussianComponent::isotropic(vec![0.0, 0.0], sigma).unwrap());
        // equispaced φ averages sin² exactly
        let eq = dsmw(&dirac, &g, &SliceSet::equispaced2d(8, 12).unwrap()).unwrap();
        assert!((eq.squared - sigma * sigma / 2.0).abs() < 1e-12);
        assert_eq!(eq.stderr, 0.0);
        let mc = dsmw(&dirac, &Gmm::single(GaussianComponent::isotropic(vec![0.0, 0.0], 1.0).unwrap()), &SliceSet::monte_carlo(2, 10_000, 5).unwrap()).unwrap();
        assert!(mc.stderr > 0.0);
        assert!((mc.squared - 0.5).abs() < 3.0 * mc.stderr, "{} ± {}", mc.squared, mc.stderr);
    }

    #[test]
    fn chain_holds_per_shared_directions() {
        let (a, b) = (two_blobs(0.0), two_blobs(2.0));
        let s = SliceSet::equispaced2d(90, 90).unwrap();
        let d = dsmw(&a, &b, &s).unwrap().value;
        let sm = smw(&a, &b, &s).unwrap().value;
        let m = msw(&a, &b, &s).unwrap().value;
        let full = mw(&a, &b).unwrap().value;
        assert!(d <= sm + 1e-3 && sm <= m + 1e-12 && m <= full + 1e-12, "{d} {sm} {m} {full}");
    }

    #[test]
    fn empirical_examples() {
        let x = PointCloud::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = PointCloud::from_rows(&[vec![-0.5, 4.0]]).unwrap();
        let s = SliceSet::equispaced2d(360, 1).unwrap();
        let v = sw_empirical(&x, &y, &s, 2).unwrap();
        assert!((v.squared - (1.5f64.powi(2) + 4.0) / 2.0).abs() < 1e-6);

        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let a = PointCloud::from_rows(&rows).unwrap();
        assert_eq!(sw_empirical(&a, &a, &s, 2).unwrap().value, 0.0);
        let shift = [0.3, -1.2];
        let b = PointCloud::from_rows(&rows.iter().map(|r| vec![r[0] + shift[0], r[1] + shift[1]]).collect::<Vec<_>>()).unwrap();
        let mc = SliceSet::monte_carlo(2, 64, 1).unwrap();
        let expected: f64 = (0..64).map(|l| crate::linalg::dot(mc.theta(l), &shift).powi(2)).sum::<f64>() / 64.0;
        assert!((sw_empirical(&a, &b, &mc, 2).unwrap().squared - expected).abs() < 1e-12);
        let p1 = sw_empirical(&a, &b, &mc, 1).unwrap();
        let expected1: f64 = (0..64).map(|l| crate::linalg::dot(mc.theta(l), &shift).abs()).sum::<f64>() / 64.0;
        assert!((p1.value - expected1).abs() < 1e-12);
        assert!(sw_empirical(&a, &b, &mc, 3).is_err());
    }
}
