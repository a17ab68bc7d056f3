//! Self-supervised structure-from-motion toolkit.
//!
//! The crate covers the geometric and loss computations used to train depth,
//! pose and intrinsics from monocular video without 3D labels:
//!
//! * [`geometry`]: pinhole cameras, SE(3) poses, back-projection and
//!   differentiable view synthesis with analytic Jacobians.
//! * [`photometric`]: Charbonnier + SSIM penalty, pairwise and clip-level
//!   reconstruction objectives and their gradients.
//! * [`mvs`]: correspondence extraction, fundamental matrix / homography
//!   estimation and the parallax-based multi-view signal score.
//! * [`curriculum`]: corpus ECDF, floor filtering and threshold schedules.
//! * [`distill`]: scale-tolerant expert-to-student matching losses.
//! * [`optim`]: two-stage direct optimization of depth, pose and focal length.
//! * [`synth`]: procedurally rendered clips with known geometry.
//! * [`metrics`]: depth, trajectory and focal-length evaluation.
//! * [`corpus`]: tensor/image/manifest I/O, shot detection and k-means.

pub mod corpus;
pub mod curriculum;
pub mod distill;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod mvs;
pub mod optim;
pub mod photometric;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
