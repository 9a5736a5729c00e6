//! Optimal transport distances between Gaussian mixture models.
//!
//! The crate computes the mixture Wasserstein distance (discrete transport
//! between components with closed-form Gaussian costs) and three sliced
//! relatives that are far cheaper to evaluate, along with gradient-based
//! quantization and barycenters, EM fitting and a few experiment harnesses.

pub mod error;
pub mod linalg;

pub use error::{Error, Result};
pub mod mixture;
pub mod rng;
pub mod transport;
pub mod distances;
pub mod optimize;
pub mod analysis;
