//! Drag-coefficient surrogate pipeline built around a dynamic-graph EdgeConv
//! regressor.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: STL parsing, vertex merging and watertightness checks.
//! - [`pointcloud`]: area-weighted surface sampling, normalisation, Chamfer
//!   distance and dataset diversity, plus the on-disk point-cloud cache.
//! - [`knn`]: exact k-nearest-neighbour graphs (brute force and a spatial
//!   hash grid for 3-D coordinates).
//! - [`autodiff`]: a small tape-based reverse-mode engine over the fixed
//!   operator set the network needs.
//! - [`model`]: the RegDGCNN network itself.
//! - [`training`]: splits, Adam, plateau scheduling, checkpoints and the
//!   training-set-size study.
//! - [`aerometrics`]: regression metrics and aerodynamic coefficients.
//! - [`synthetic`]: analytic toy designs for tests and demos.

pub mod aerometrics;
pub mod autodiff;
pub mod knn;
pub mod mesh;
pub mod model;
pub mod pointcloud;
pub mod real;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use real::{DType, Real};
