//! Pinhole cameras, rigid transforms and differentiable view synthesis.

mod camera;
mod image;
mod pose;
mod warp;

pub use camera::{backproject, project, Intrinsics, Pixel};
pub use image::{bilinear_sample, DepthMap, ImageBuffer, Mask};
pub use pose::{hat, relative_pose, rotation_angle, so3_exp, so3_log, Pose};
pub use warp::{synthesize_view, synthesize_with_jacobians, warp_jacobians, PixelJacobian, WarpJacobians};
