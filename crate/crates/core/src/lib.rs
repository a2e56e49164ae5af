//! One-class adversarial reconstruction for optical-flow video liveness.
//!
//! The pipeline: [`flowprep`] turns videos into color-coded optical-flow patches,
//! [`gan`] trains a convolutional encoder-decoder generator against a
//! discriminator on live data only, and [`scoring`] turns reconstruction errors
//! into per-video maximum-mean-discrepancy scores against a live reference
//! distribution, with threshold calibration and HTER/AUC metrics. [`bench`]
//! holds the one-class image benchmark and a synthetic video generator.

pub mod arrays;
pub mod bench;
pub mod config;
pub mod error;
pub mod flowprep;
pub mod gan;
pub mod nn;
pub mod pipeline;
pub mod scoring;
pub mod util;

pub use error::{Error, Result};
