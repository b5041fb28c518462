//! Single-encoder multiple-decoder point cloud generation.
//!
//! One convolutional encoder maps an RGB image to a latent vector; `N`
//! structurally identical decoders each emit `8/N` coordinate images for
//! the eight cube-corner viewpoints. The images are lifted into a common
//! world frame and fused into a point cloud. Training pretrains on the fixed
//! views, then fine-tunes end to end through a differentiable z-buffer
//! renderer against randomly posed depth/mask supervision.

pub mod autodiff;
pub mod camera;
pub mod coord_image;
pub mod error;
pub mod generator;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod pseudorender;
pub mod registry;
pub mod synthdata;

pub use error::{Error, Result};
