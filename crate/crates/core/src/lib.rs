//! fluidrpm: sequential visual matrix tests, generated and solved.
//!
//! The library builds Raven-style sequential matrix tests (a row of tiles
//! following a single feature rule, plus answer options) and solves them with
//! an unsupervised latent-prediction network that is optimized on the test's
//! own tiles. Everything is deterministic under explicit seeds.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod optim;
pub mod raster;
pub mod scalar;
pub mod selftest;
pub mod solver;
pub mod testgen;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Canvas in working precision.
pub type Canvas32 = raster::Canvas<f32>;
/// Canvas in reference precision.
pub type Canvas64 = raster::Canvas<f64>;
/// Model in working precision; training and experiments run here.
pub type Model32 = model::ModelParams<f32>;
/// Model in reference precision; gradient checks run here.
pub type Model64 = model::ModelParams<f64>;
/// Tensor in working precision.
pub type Tensor32 = autodiff::Tensor<f32>;
/// Tensor in reference precision.
pub type Tensor64 = autodiff::Tensor<f64>;
