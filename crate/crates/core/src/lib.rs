//! Differentiable Gaussian splatting that renders camera images, echosounder
//! transients and forward-looking sonar images from one scene model, and fits
//! that model to any combination of the three.

pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod image;
pub mod math;
pub mod metrics;
pub mod plot;
pub mod render;
pub mod scene;
pub mod simulate;
pub mod train;

pub use error::{Error, Result};
