//! Landscape of the spherical pure p-spin model with a k-th order spike.
//!
//! The scalar layer (`scalar_core`, `thresholds_gse`) is generic over the
//! floating point type; quadrature, Monte Carlo and simulation run in `f64`.

pub mod error;
pub mod kac_rice;
pub mod landscape_sim;
pub mod numerics;
pub mod quad;
pub mod rmt_mc;
pub mod scalar_core;
pub mod thresholds_gse;

pub use error::{Error, Result};
pub use scalar_core::Real;

/// Double precision model parameters.
pub type ModelParams = scalar_core::ModelParams<f64>;
/// Single precision model parameters.
pub type ModelParamsF32 = scalar_core::ModelParams<f32>;
pub type LandscapePoint = scalar_core::LandscapePoint<f64>;
pub type ThresholdReport = thresholds_gse::ThresholdReport<f64>;
pub type GsePrediction = thresholds_gse::GsePrediction<f64>;
