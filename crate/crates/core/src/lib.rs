//! trl3d: unsupervised recovery of per-token 3D world coordinates inside a
//! small vision Transformer, with pinhole-camera geometry, synthetic
//! multi-view data, and a quantitative multi-view evaluation suite.
//!
//! The layers are:
//! - [`tensor`]: a deterministic f64 tensor engine with reverse-mode
//!   differentiation and SGD.
//! - [`geometry`]: pinhole camera math shared by the learnable layer, the
//!   data generator, and the evaluators.
//! - [`layer`]: the token-coordinate layer (pseudo-depth estimator, camera
//!   estimator, world transform, positional-embedding fusion).
//! - [`backbone`]: a compact ViT-style encoder the layer plugs into.
//! - [`losses`] / [`metrics`]: training objectives and the alignment,
//!   depth-correlation, and camera-disparity evaluations.
//! - [`synthdata`]: deterministic synthetic multi-view worlds with exact
//!   ground truth.
//! - [`checkpoint`] / [`config`] / [`commands`]: serialization, run
//!   configuration, and the CLI entry points.

pub mod backbone;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod layer;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{backward, Sgd, Tensor};
