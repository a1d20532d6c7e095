//! mmWave radar point-cloud super-resolution toolkit.
//!
//! Sparse, noisy single-frame radar point clouds are densified to LiDAR-like
//! quality by working on *range images*: the radar cloud is sliced along range
//! and projected into a multi-channel range image, a conditional diffusion
//! model restores a dense range image from noise, and the result is
//! back-projected into 3-D. The crate provides every stage of that pipeline at
//! desk scale, plus the evaluation metrics used to judge it:
//!
//! - [`geom`] — point clouds, rigid transforms, angular fields of view
//! - [`projection`] — point cloud ↔ range image (forward/backward), radial
//!   slicing into multi-channel images, range normalization
//! - [`preprocess`] — shared-FOV cropping, RANSAC ground/ceiling removal,
//!   DBSCAN, radar-guided filtering of LiDAR supervision
//! - [`cfar`] — OS-CFAR detection on power maps, synthetic map generation
//! - [`diffusion`] — forward corruption, denoiser-score identity, probability
//!   flow ODE, deterministic Heun sampler
//! - [`model`] — small trainable conditional denoiser with in-repo
//!   reverse-mode gradients and a training loop
//! - [`losses`] — MSE / perceptual / per-pixel distance training objective
//! - [`metrics`] — Chamfer distance, modified Hausdorff distance, F-score,
//!   CDF export, exact k-d tree nearest neighbors
//! - [`io`] — binary point-cloud/range-image/checkpoint formats, ASCII PLY,
//!   pipeline configuration
//! - [`synth`] — seeded box-world scene generator producing paired
//!   LiDAR/radar data for training and evaluation
//! - [`cli`] — the `mmwave-sr` command-line pipeline driver
//!
//! Start with the runnable examples (`cargo run --release --example ...`);
//! each one exercises a single capability end to end.

pub mod cfar;
pub mod cli;
pub mod diffusion;
mod error;
pub mod geom;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod projection;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
