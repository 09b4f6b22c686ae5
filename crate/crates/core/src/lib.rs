//! Two-stream mitosis detection for histopathology high-power fields.
//!
//! The pipeline tiles each frame, trains a U-net whose probability maps feed
//! the second stream of a region-based detector, fuses RGB and segmentation
//! RoI features by bilinear pooling, and scores detections with the
//! centroid-distance contest metric.

pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod nn;
pub mod unet;

pub use error::{Error, Result};
