//! Multi-task UNet for small-target detection and segmentation in infrared images.

pub mod backbone;
pub mod data;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod postprocess;
pub mod segmentation;
pub mod trainer;

pub use error::{Error, Result};
