//! Direct multi-horizon NDVI forecasting from satellite patch archives.
//!
//! The pipeline runs from a synthetic archive generator through window
//! sampling and augmentation to a transformer forecaster that predicts any
//! horizon with a single encoder pass, plus baselines and a grid evaluator.

pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod encoder;
mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod sampling;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};
