//! Gaussian mixtures, weighted point measures and the maps between them.

mod em;

pub use em::{em_fit, EmConfig, EmFit};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{cholesky, dot, PsdMatrix};
use crate::rng::rng_from;

/// Tolerance on `‖θ‖ = 1` for public projection entry points.
const UNIT_TOLERANCE: f64 = 1e-9;

/// Validates nonnegative finite weights and rescales them onto the simplex.
///
/// Weights already summing to one up to a few ulps are left untouched so
/// that repeated normalization is idempotent.
pub(crate) fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(invalid("weight vector is empty"));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(invalid(format!("weights must be finite and nonnegative, got {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(invalid("weights sum to zero"));
    }
    if (sum - 1.0).abs() <= 4.0 * weights.len() as f64 * f64::EPSILON {
        return Ok(weights.to_vec());
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

fn check_unit(theta: &[f64]) -> Result<()> {
    let n = dot(theta, theta).sqrt();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(format!("direction has norm {n}, expected a unit vector")));
    }
    Ok(())
}

/// A single Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    cov: PsdMatrix,
}

impl GaussianComponent {
    pub fn new(mean: Vec<f64>, cov: PsdMatrix) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(invalid("mean has non-finite entries"));
        }
        Ok(GaussianComponent { mean, cov })
    }

    /// `N(mean, σ² I)`.
    pub fn isotropic(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        let d = mean.len();
        let cov = PsdMatrix::from_diag(&vec![sigma * sigma; d])?;
        Self::new(mean, cov)
    }

    /// Point mass at `mean`.
    pub fn dirac(mean: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        Self::new(mean, PsdMatrix::zeros(d))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &PsdMatrix {
        &self.cov
    }
}

/// A Gaussian mixture `Σ ωᵏ N(mᵏ, Σᵏ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("a mixture needs at least one component"));
        }
        check_dim(components.len(), weights.len())?;
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        let weights = normalize_weights(&weights)?;
        Ok(Gmm { weights, components })
    }

    pub fn single(component: GaussianComponent) -> Self {
        Gmm { weights: vec![1.0], components: vec![component] }
    }

    /// Uniform mixture of point masses at the rows of `points`.
    pub fn empirical(points: &[Vec<f64>]) -> Result<Self> {
        let comps = points.iter().map(|p| GaussianComponent::dirac(p.clone())).collect::<Result<Vec<_>>>()?;
        let k = comps.len();
        Gmm::new(vec![1.0 / k.max(1) as f64; k], comps)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Number of components.
    #[inline]
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &GaussianComponent {
        &self.components[k]
    }

    /// Overall mean and covariance of the mixture.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (m, x) in mean.iter_mut().zip(c.mean()) {
                *m += w * x;
            }
        }
        let mut cov = vec![0.0; d * d];
        for (w, c) in self.weights.iter().zip(&self.components) {
            let cm = c.cov().as_matrix().as_slice();
            for i in 0..d {
                let di = c.mean()[i] - mean[i];
                for j in 0..d {
                    let dj = c.mean()[j] - mean[j];
                    cov[i * d + j] += w * (cm[i * d + j] + di * dj);
                }
            }
        }
        (mean, cov)
    }
}

/// A mixture on the real line; stdevs may be zero (point masses).
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm1d {
    weights: Vec<f64>,
    means: Vec<f64>,
    stdevs: Vec<f64>,
}

impl Gmm1d {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stdevs: Vec<f64>) -> Result<Self> {
        check_dim(weights.len(), means.len())?;
        check_dim(weights.len(), stdevs.len())?;
        if means.iter().chain(&stdevs).any(|x| !x.is_finite()) {
            return Err(invalid("non-finite mixture parameter"));
        }
        if stdevs.iter().any(|&s| s < 0.0) {
            return Err(invalid("standard deviations must be nonnegative"));
        }
        let weights = normalize_weights(&weights)?;
        Ok(Gmm1d { weights, means, stdevs })
    }

    pub fn gaussian(mean: f64, stdev: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![stdev])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stdevs(&self) -> &[f64] {
        &self.stdevs
    }
}

/// Weighted atoms on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeasure1d {
    supports: Vec<f64>,
    weights: Vec<f64>,
}

impl PointMeasure1d {
    pub fn new(supports: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_dim(supports.len(), weights.len())?;
        if supports.iter().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite support point"));
        }
        let weights = normalize_weights(&weights)?;
        Ok(PointMeasure1d { supports, weights })
    }

    pub fn uniform(supports: Vec<f64>) -> Result<Self> {
        let n = supports.len();
        Self::new(supports, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn supports(&self) -> &[f64] {
        &self.supports
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted atoms on the `(mean, stdev)` half-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeasure2d {
    supports: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

impl PointMeasure2d {
    pub fn new(supports: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self> {
        check_dim(supports.len(), weights.len())?;
        if supports.iter().any(|(m, s)| !m.is_finite() || !s.is_finite() || *s < 0.0) {
            return Err(invalid("support points need finite coordinates and nonnegative stdev"));
        }
        let weights = normalize_weights(&weights)?;
        Ok(PointMeasure2d { supports, weights })
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn supports(&self) -> &[(f64, f64)] {
        &self.supports
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `n` points in `R^d`, stored row-major, with optional weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(dim: usize, points: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "{} coordinates do not form a nonempty set of {dim}-dimensional points",
                points.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(invalid("point cloud has non-finite coordinates"));
        }
        let n = points.len() / dim;
        let weights = match weights {
            Some(w) => {
                check_dim(n, w.len())?;
                Some(normalize_weights(&w)?)
            }
            None => None,
        };
        Ok(PointCloud { dim, points, weights })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("ragged point rows"));
        }
        Self::new(dim, rows.concat(), None)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// The weights, or `1/n` each when the cloud is unweighted.
    pub fn weights_or_uniform(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.len() as f64; self.len()],
        }
    }

    /// Weighted mean and covariance (row-major `d×d`).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let w = self.weights_or_uniform();
        let mut mean = vec![0.0; d];
        for (i, wi) in w.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(self.point(i)) {
                *m += wi * x;
            }
        }
        let mut cov = vec![0.0; d * d];
        for (i, wi) in w.iter().enumerate() {
            let p = self.point(i);
            for a in 0..d {
                let da = p[a] - mean[a];
                for b in 0..d {
                    cov[a * d + b] += wi * da * (p[b] - mean[b]);
                }
            }
        }
        (mean, cov)
    }

    /// Projections `θ·xᵢ` of all points.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| dot(self.point(i), theta)).collect()
    }
}

/// Mixture density sampled at the centers of a regular 2d grid.
///
/// `values[iy * nx + ix]` is the density at
/// `(xmin + (ix + ½)·dx, ymin + (iy + ½)·dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub bounds: [f64; 4],
    pub resolution: (usize, usize),
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn cell_area(&self) -> f64 {
        let [x0, x1, y0, y1] = self.bounds;
        (x1 - x0) / self.resolution.0 as f64 * (y1 - y0) / self.resolution.1 as f64
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.resolution.0 + ix]
    }
}

/// `(θ·m, (θᵀΣθ)^{1/2})` without validation.
#[inline]
pub(crate) fn project_component_raw(theta: &[f64], g: &GaussianComponent) -> (f64, f64) {
    let m = dot(theta, g.mean());
    let c = g.cov().as_matrix();
    let d = theta.len();
    let mut q = 0.0;
    for i in 0..d {
        q += theta[i] * dot(c.row(i), theta);
    }
    (m, q.max(0.0).sqrt())
}

/// Pushes a Gaussian forward along the direction `theta`.
pub fn project_component(theta: &[f64], g: &GaussianComponent) -> Result<(f64, f64)> {
    check_dim(g.dim(), theta.len())?;
    check_unit(theta)?;
    Ok(project_component_raw(theta, g))
}

/// Componentwise projection of a mixture; weights are copied unchanged.
pub fn project_gmm(theta: &[f64], mu: &Gmm) -> Result<Gmm1d> {
    check_dim(mu.dim(), theta.len())?;
    check_unit(theta)?;
    let (means, stdevs) = mu.components().iter().map(|c| project_component_raw(theta, c)).unzip();
    Ok(Gmm1d { weights: mu.weights().to_vec(), means, stdevs })
}

/// A 1d mixture viewed as atoms at `(mean, stdev)`. Coincident atoms are kept.
pub fn nu_map(mu: &Gmm1d) -> PointMeasure2d {
    let supports = mu.means.iter().copied().zip(mu.stdevs.iter().copied()).collect();
    PointMeasure2d { supports, weights: mu.weights.clone() }
}

/// Atom position `m cos φ + s sin φ` of a projected component.
#[inline]
pub fn xi_atom(mean: f64, stdev: f64, cos_phi: f64, sin_phi: f64) -> f64 {
    mean * cos_phi + stdev * sin_phi
}

/// Projects the `(mean, stdev)` atoms of `π_θ μ` onto the direction `(cos φ, sin φ)`.
pub fn xi_projection(theta: &[f64], phi: f64, mu: &Gmm) -> Result<PointMeasure1d> {
    let projected = project_gmm(theta, mu)?;
    let (s, c) = phi.sin_cos();
    let supports = projected
        .means
        .iter()
        .zip(&projected.stdevs)
        .map(|(&m, &sd)| xi_atom(m, sd, c, s))
        .collect();
    Ok(PointMeasure1d { supports, weights: projected.weights })
}

/// Draws `n` points: a categorical component choice, then `mean + L z`.
pub fn sample(mu: &Gmm, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let d = mu.dim();
    let factors = mu.components().iter().map(|c| cholesky(c.cov().as_sym())).collect::<Result<Vec<_>>>()?;
    let mut cumulative = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for w in mu.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let mut rng = rng_from(seed, &[0x5A4D_504C]);
    let mut points = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let k = cumulative.iter().position(|&c| u < c).unwrap_or(mu.len() - 1);
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let l = factors[k].as_matrix();
        let m = mu.component(k).mean();
        for i in 0..d {
            points.push(m[i] + dot(&l.row(i)[..=i], &z[..=i]));
        }
    }
    PointCloud::new(d, points, None)
}

/// Evaluates a 2d mixture density at the centers of an `nx × ny` grid.
pub fn density_grid(mu: &Gmm, bounds: [f64; 4], resolution: (usize, usize)) -> Result<DensityGrid> {
    check_dim(2, mu.dim())?;
    let [x0, x1, y0, y1] = bounds;
    if bounds.iter().any(|b| !b.is_finite()) || !(x1 > x0) || !(y1 > y0) {
        return Err(invalid("grid bounds must have xmin < xmax and ymin < ymax"));
    }
    let (nx, ny) = resolution;
    if nx == 0 || ny == 0 {
        return Err(invalid("grid resolution must be positive"));
    }
    struct Pdf {
        mx: f64,
        my: f64,
        ia: f64,
        ib: f64,
        ic: f64,
        norm: f64,
    }
    let pdfs: Vec<Pdf> = mu
        .weights()
        .iter()
        .zip(mu.components())
        .filter(|(w, _)| **w > 0.0)
        .map(|(&w, c)| {
            let (mut a, b, mut cc) = (c.cov().get(0, 0), c.cov().get(0, 1), c.cov().get(1, 1));
            let tr = a + cc;
            let mut det = a * cc - b * b;
            if !(det > 1e-14 * tr * tr) || tr == 0.0 {
                let jitter = if tr > 0.0 { 1e-10 * tr } else { 1e-10 };
                a += jitter;
                cc += jitter;
                det = a * cc - b * b;
            }
            Pdf {
                mx: c.mean()[0],
                my: c.mean()[1],
                ia: cc / det,
                ib: -b / det,
                ic: a / det,
                norm: w / (2.0 * std::f64::consts::PI * det.sqrt()),
            }
        })
        .collect();
    let dx = (x1 - x0) / nx as f64;
    let dy = (y1 - y0) / ny as f64;
    let mut values = vec![0.0; nx * ny];
    for iy in 0..ny {
        let y = y0 + (iy as f64 + 0.5) * dy;
        for ix in 0..nx {
            let x = x0 + (ix as f64 + 0.5) * dx;
            let mut v = 0.0;
            for p in &pdfs {
                let (u, t) = (x - p.mx, y - p.my);
                let q = p.ia * u * u + 2.0 * p.ib * u * t + p.ic * t * t;
                v += p.norm * (-0.5 * q).exp();
            }
            values[iy * nx + ix] = v;
        }
    }
    Ok(DensityGrid { bounds, resolution, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::quad_form;
    use proptest::prelude::*;

    fn diag_comp(mean: &[f64], diag: &[f64]) -> GaussianComponent {
        GaussianComponent::new(mean.to_vec(), PsdMatrix::from_diag(diag).unwrap()).unwrap()
    }

    #[test]
    fn project_component_examples() {
        let g = diag_comp(&[3.0, 5.0], &[4.0, 9.0]);
        assert_eq!(project_component(&[1.0, 0.0], &g).unwrap(), (3.0, 2.0));
        assert_eq!(project_component(&[0.0, 1.0], &g).unwrap(), (5.0, 3.0));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (m, sd) = project_component(&[s, s], &diag_comp(&[0.0, 0.0], &[1.0, 1.0])).unwrap();
        assert_eq!(m, 0.0);
        assert!((sd - 1.0).abs() < 1e-15);
        assert!(project_component(&[1.0, 0.0, 0.0], &g).is_err());
        assert!(project_component(&[2.0, 0.0], &g).is_err());
    }

    #[test]
    fn project_gmm_examples() {
        let pair = Gmm::new(
            vec![0.5, 0.5],
            vec![GaussianComponent::dirac(vec![1.0, 7.0]).unwrap(), GaussianComponent::dirac(vec![-2.0, 3.0]).unwrap()],
        )
        .unwrap();
        let p = project_gmm(&[1.0, 0.0], &pair).unwrap();
        assert_eq!(p.means(), &[1.0, -2.0]);
        assert_eq!(p.stdevs(), &[0.0, 0.0]);

        let eps = 0.01;
        let mu = Gmm::single(diag_comp(&[0.0, 0.0], &[1.0, eps]));
        for phi in [0.1, 0.7, 2.0, 4.0] {
            let p = project_gmm(&[f64::cos(phi), f64::sin(phi)], &mu).unwrap();
            let expect = (phi.cos().powi(2) + eps * phi.sin().powi(2)).sqrt();
            assert!((p.stdevs()[0] - expect).abs() < 1e-15);
            assert_eq!(p.weights(), &[1.0]);
        }
    }

    #[test]
    fn nu_map_examples() {
        let g = Gmm1d::gaussian(0.0, 1.0).unwrap();
        assert_eq!(nu_map(&g).supports(), &[(0.0, 1.0)]);
        let g = Gmm1d::new(vec![0.5, 0.5], vec![0.0, 2.0], vec![1.0, 1.0]).unwrap();
        let nu = nu_map(&g);
        assert_eq!(nu.supports(), &[(0.0, 1.0), (2.0, 1.0)]);
        assert_eq!(nu.weights(), &[0.5, 0.5]);
        let g = Gmm1d::new(vec![0.5, 0.5], vec![0.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(nu_map(&g).supports(), &[(0.0, 0.0), (2.0, 0.0)]);
        let dup = Gmm1d::new(vec![0.5, 0.5], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(nu_map(&dup).len(), 2);
    }

    #[test]
    fn xi_projection_examples() {
        let mu = Gmm::new(vec![0.3, 0.7], vec![diag_comp(&[1.0, 2.0], &[4.0, 1.0]), diag_comp(&[-1.0, 0.5], &[0.25, 9.0])])
            .unwrap();
        let theta = [0.6, 0.8];
        let at0 = xi_projection(&theta, 0.0, &mu).unwrap();
        assert_eq!(at0.supports(), &[0.6 + 1.6, -0.6 + 0.4]);
        let at_half_pi = xi_projection(&theta, std::f64::consts::FRAC_PI_2, &mu).unwrap();
        let s0 = (0.36 * 4.0 + 0.64f64).sqrt();
        assert!((at_half_pi.supports()[0] - s0).abs() < 1e-15);

        let sigma = 1.7;
        let iso = Gmm::single(GaussianComponent::isotropic(vec![0.0; 3], sigma).unwrap());
        let t = [0.48, 0.6, 0.64];
        for phi in [0.3, 1.9, 5.0] {
            let p = xi_projection(&t, phi, &iso).unwrap();
            assert!((p.supports()[0] - sigma * phi.sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn sample_examples() {
        let dirac = Gmm::single(GaussianComponent::dirac(vec![2.0, -1.0]).unwrap());
        let s = sample(&dirac, 50, 3).unwrap();
        assert!(s.points().chunks(2).all(|p| p == [2.0, -1.0]));

        let n = 100_000;
        let std = Gmm::single(GaussianComponent::isotropic(vec![0.0, 0.0], 1.0).unwrap());
        let s = sample(&std, n, 1).unwrap();
        let (mean, _) = s.moments();
        assert!(mean.iter().all(|m| m.abs() < 3.0 / (n as f64).sqrt()));

        let pair = Gmm::new(
            vec![0.5, 0.5],
            vec![GaussianComponent::dirac(vec![0.0]).unwrap(), GaussianComponent::dirac(vec![1.0]).unwrap()],
        )
        .unwrap();
        let s = sample(&pair, 10_000, 8).unwrap();
        let frac = s.points().iter().filter(|&&x| x == 0.0).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() < 0.02);
        assert_eq!(sample(&pair, 100, 4).unwrap(), sample(&pair, 100, 4).unwrap());
    }

    #[test]
    fn density_peak_and_errors() {
        let std = Gmm::single(GaussianComponent::isotropic(vec![0.0, 0.0], 1.0).unwrap());
        let g = density_grid(&std, [-1.0, 1.0, -1.0, 1.0], (3, 3)).unwrap();
        assert!((g.get(1, 1) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!(density_grid(&std, [0.0, 0.0, -1.0, 1.0], (3, 3)).is_err());
        let again = density_grid(&std, [-1.0, 1.0, -1.0, 1.0], (3, 3)).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn density_mass_matches_sampling() {
        let mu = Gmm::new(
            vec![0.4, 0.6],
            vec![diag_comp(&[0.0, 0.0], &[1.0, 0.5]), diag_comp(&[2.5, 1.0], &[0.3, 2.0])],
        )
        .unwrap();
        let bounds = [-1.5, 3.0, -1.0, 2.5];
        let grid = density_grid(&mu, bounds, (300, 300)).unwrap();
        let mass: f64 = grid.values.iter().sum::<f64>() * grid.cell_area();
        let s = sample(&mu, 100_000, 17).unwrap();
        let inside = s
            .points()
            .chunks(2)
            .filter(|p| p[0] >= bounds[0] && p[0] <= bounds[1] && p[1] >= bounds[2] && p[1] <= bounds[3])
            .count() as f64
            / 1e5;
        assert!((mass - inside).abs() < 0.02 * inside, "grid {mass} vs sampled {inside}");
    }

    #[test]
    fn normalization_is_idempotent() {
        let w = normalize_weights(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(normalize_weights(&w).unwrap(), w);
        assert!(normalize_weights(&[0.0, 0.0]).is_err());
        assert!(normalize_weights(&[-0.1, 1.1]).is_err());
    }

    proptest! {
        #[test]
        fn projections_compose(
            m in proptest::collection::vec(-5.0f64..5.0, 3),
            l in proptest::collection::vec(-2.0f64..2.0, 9),
            t in proptest::collection::vec(-1.0f64..1.0, 3),
            phi in 0.0f64..std::f64::consts::TAU,
        ) {
            let norm = dot(&t, &t).sqrt();
            prop_assume!(norm > 1e-3);
            let theta: Vec<f64> = t.iter().map(|x| x / norm).collect();
            let lt = crate::linalg::LowerTriangular::from_rows(&[l[0..3].to_vec(), l[3..6].to_vec(), l[6..9].to_vec()]).unwrap();
            let cov = PsdMatrix::from_factor(&lt, 0.0);
            let g = GaussianComponent::new(m.clone(), cov.clone()).unwrap();
            let mu = Gmm::new(vec![0.25, 0.75], vec![g.clone(), diag_comp(&m, &[1.0, 2.0, 3.0])]).unwrap();
            let p = project_gmm(&theta, &mu).unwrap();
            prop_assert_eq!(p.weights(), mu.weights());
            let q = quad_form(cov.as_sym(), &theta).unwrap();
            prop_assert!((p.stdevs()[0] - q.sqrt()).abs() < 1e-12);
            let xi = xi_projection(&theta, phi, &mu).unwrap();
            let nu = nu_map(&p);
            for (a, &(mm, ss)) in xi.supports().iter().zip(nu.supports()) {
                prop_assert_eq!(*a, mm * phi.cos() + ss * phi.sin());
            }
        }
    }
}
