use crate::error::{check_dim, invalid, Result};
use crate::linalg::{LowerTriangular, PsdMatrix};
use crate::mixture::{GaussianComponent, Gmm};

/// Softmax with the usual max shift.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&w| (w - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Unconstrained parametrization of a `K`-component mixture: weight
/// logits, means and lower-triangular factors, with covariance
/// `Q Qᵀ + σ²I` for a fixed floor `σ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub(crate) logits: Vec<f64>,
    pub(crate) means: Vec<Vec<f64>>,
    pub(crate) factors: Vec<LowerTriangular>,
    pub(crate) sigma_floor: f64,
}

impl QuantParams {
    pub fn new(logits: Vec<f64>, means: Vec<Vec<f64>>, factors: Vec<LowerTriangular>, sigma_floor: f64) -> Result<Self> {
        if logits.is_empty() {
            return Err(invalid("at least one component is required"));
        }
        check_dim(logits.len(), means.len())?;
        check_dim(logits.len(), factors.len())?;
        if !(sigma_floor > 0.0 && sigma_floor.is_finite()) {
            return Err(invalid(format!("sigma floor must be positive, got {sigma_floor}")));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        for (m, q) in means.iter().zip(&factors) {
            check_dim(d, m.len())?;
            check_dim(d, q.dim())?;
            if m.iter().any(|x| !x.is_finite()) || !q.as_matrix().is_finite() {
                return Err(invalid("parameters must be finite"));
            }
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(invalid("logits must be finite"));
        }
        Ok(QuantParams { logits, means, factors, sigma_floor })
    }

    /// Zero logits and factors at the given means.
    pub fn at_means(means: Vec<Vec<f64>>, sigma_floor: f64) -> Result<Self> {
        let k = means.len();
        let d = means.first().map_or(0, Vec::len);
        Self::new(vec![0.0; k], means, vec![LowerTriangular::zeros(d); k], sigma_floor)
    }

    /// Zero logits and factors `scale·I` at the given means.
    ///
    /// The loss is stationary in a factor that is exactly zero, so
    /// optimization starts from a small multiple of the identity instead.
    pub fn at_means_scaled(means: Vec<Vec<f64>>, sigma_floor: f64, scale: f64) -> Result<Self> {
        let mut p = Self::at_means(means, sigma_floor)?;
        for q in &mut p.factors {
            for i in 0..q.dim() {
                q.set(i, i, scale);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn factors(&self) -> &[LowerTriangular] {
        &self.factors
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    /// Length of the flat vector: logits, then means, then packed factors.
    pub fn flat_len(&self) -> usize {
        let d = self.dim();
        self.len() * (1 + d + d * (d + 1) / 2)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&self.logits);
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

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.flat_len(), "flat parameter length");
        let (k, d) = (self.len(), self.dim());
        self.logits.copy_from_slice(&flat[..k]);
        let mut pos = k;
        for m in &mut self.means {
            m.copy_from_slice(&flat[pos..pos + d]);
            pos += d;
        }
        for q in &mut self.factors {
            for i in 0..d {
                for j in 0..=i {
                    q.set(i, j, flat[pos]);
                    pos += 1;
                }
            }
        }
    }

    /// Clamps factor diagonals at zero.
    pub fn project_diagonals(&mut self) {
        let d = self.dim();
        for q in &mut self.factors {
            for i in 0..d {
                if q.get(i, i) < 0.0 {
                    q.set(i, i, 0.0);
                }
            }
        }
    }
}

/// The mixture described by `params`: softmax weights and covariances
/// `Q Qᵀ + σ²I`.
pub fn realize(params: &QuantParams) -> Gmm {
    let s2 = params.sigma_floor * params.sigma_floor;
    let components = params
        .means
        .iter()
        .zip(&params.factors)
        .map(|(m, q)| GaussianComponent::new(m.clone(), PsdMatrix::from_factor(q, s2)).expect("validated parameters"))
        .collect();
    Gmm::new(params.weights(), components).expect("softmax weights lie on the simplex")
}
