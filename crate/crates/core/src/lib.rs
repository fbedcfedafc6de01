//! Lane segmentation toolkit.
//!
//! Two networks are provided: a feature-pyramid model that predicts separate
//! left/right lane masks, and an attention-gated U-Net that predicts a single
//! lane mask. Around them sit the data pipeline (video ingest, colour
//! conversion, resizing, augmentation), a procedural road-scene generator,
//! dice/BCE losses, an Adam training loop with checkpoints, and pixel- and
//! frame-level metrics.

pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod raster;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use raster::{Mask, RgbImage};
pub use tensor::Tensor;
