//! Gradient-based fitting of mixtures under the doubly sliced distance:
//! quantization, barycenters with fixed or free components, point-cloud
//! sliced barycenters and the Gaussian `W₂` barycenter.

mod adam;
mod barycenter;
mod grad;
mod params;
mod quantize;

pub use adam::{Adam, AdamConfig};
pub use barycenter::{
    barycenter_fixed, gaussian_barycenter, sw_barycenter_points, FixedBarycenter, FixedConfig, GaussianBarycenter,
    GaussianBarycenterConfig, PointBarycenter, PointBarycenterConfig, MAX_FIXED_COMPONENTS,
};
pub use grad::{dsmw_sq_grad, QuantGrad};
pub use params::{realize, softmax, QuantParams};
pub use quantize::{barycenter_free, quantize, OptimConfig, OptimReport};
