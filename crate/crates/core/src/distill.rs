//! Expert-to-student distillation losses.
//!
//! The student is pulled toward expert depth, pose and intrinsics while
//! tolerating the monocular ambiguities: depth is compared after a
//! least-squares scale-and-shift alignment, translation after a scalar
//! projection, rotation and intrinsics through `|R^T R* - I|_F` and
//! `|K^-1 K* - I|_F`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::{DepthMap, Intrinsics, Pose};
use crate::photometric::charbonnier;

/// Per-clip depth, pose and intrinsics, as produced by a model or the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub depths: Vec<DepthMap>,
    pub poses: Vec<Pose>,
    pub k: Intrinsics,
}

impl PredictionSet {
    pub fn validate(&self) -> Result<()> {
        if self.depths.len() != self.poses.len() {
            return Err(contract(format!("{} depth maps but {} poses", self.depths.len(), self.poses.len())));
        }
        for d in &self.depths {
            if d.width != self.k.width || d.height != self.k.height {
                return Err(contract("depth map size does not match intrinsics"));
            }
        }
        for p in &self.poses {
            p.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Which depth representation the scale-and-shift alignment operates on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthSpace {
    #[default]
    Raw,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub lambda_distill: f64,
    pub charbonnier_eps: f64,
    pub depth_space: DepthSpace,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { lambda_distill: 0.2, charbonnier_eps: 1e-3, depth_space: DepthSpace::Raw }
    }
}

/// Least-squares affine fit of `d` onto `d_star`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleShift {
    pub scale: f64,
    pub shift: f64,
    /// `d` had (numerically) zero variance; the fit fell back to `scale = 0`.
    pub degenerate: bool,
}

/// Solve `min_{s,b} sum (s d + b - d*)^2` through the 2x2 normal equations.
pub fn align_scale_shift(d: &[f64], d_star: &[f64]) -> Result<ScaleShift> {
    if d.len() != d_star.len() || d.is_empty() {
        return Err(contract(format!("alignment needs equal non-empty inputs, got {} and {}", d.len(), d_star.len())));
    }
    let n = d.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in d.iter().zip(d_star) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    let mean_x = sx / n;
    // det = n^2 var(d); compare against the data scale.
    if det.abs() <= 1e-12 * n * n * (1.0 + mean_x * mean_x) {
        return Ok(ScaleShift { scale: 0.0, shift: sy / n, degenerate: true });
    }
    let scale = (n * sxy - sx * sy) / det;
    let shift = (sy - scale * sx) / n;
    Ok(ScaleShift { scale, shift, degenerate: false })
}

fn depth_values(d: &DepthMap, space: DepthSpace) -> Vec<f64> {
    match space {
        DepthSpace::Raw => d.data.clone(),
        DepthSpace::Inverse => d.data.iter().map(|v| 1.0 / v).collect(),
    }
}

/// Mean Charbonnier residual after scale-and-shift alignment.
pub fn depth_match(d: &DepthMap, d_star: &DepthMap, cfg: &DistillConfig) -> Result<f64> {
    if d.width != d_star.width || d.height != d_star.height {
        return Err(contract("depth_match inputs must share dimensions"));
    }
    let x = depth_values(d, cfg.depth_space);
    let y = depth_values(d_star, cfg.depth_space);
    let fit = align_scale_shift(&x, &y)?;
    let total: f64 = x.iter().zip(&y).map(|(a, b)| charbonnier(fit.scale * a + fit.shift - b, cfg.charbonnier_eps)).sum();
    Ok(total / x.len() as f64)
}

/// Charbonnier of `|s t - t*|` with `s = <t, t*> / <t, t>` (0 when `t = 0`).
pub fn translation_match(t: &Vector3<f64>, t_star: &Vector3<f64>, cfg: &DistillConfig) -> f64 {
    let nn = t.dot(t);
    let s = if nn > 0.0 { t.dot(t_star) / nn } else { 0.0 };
    charbonnier((t * s - t_star).norm(), cfg.charbonnier_eps)
}

/// `|R^T R* - I|_F`, evaluated as `|R^T (R* - R)|_F` so equal inputs give exactly 0.
pub fn rotation_residual(r: &Matrix3<f64>, r_star: &Matrix3<f64>) -> f64 {
    (r.transpose() * (r_star - r)).norm()
}

/// `|K^-1 K* - I|_F`, evaluated as `|K^-1 (K* - K)|_F`.
pub fn intrinsics_residual(k: &Intrinsics, k_star: &Intrinsics) -> f64 {
    (k.inverse_matrix() * (k_star.matrix() - k.matrix())).norm()
}

/// Per-frame depth, translation and rotation terms averaged over the clip,
/// plus the intrinsics term once per clip.
pub fn distill_loss(student: &PredictionSet, expert: &PredictionSet, cfg: &DistillConfig) -> Result<f64> {
    if student.depths.len() != expert.depths.len() || student.poses.len() != expert.poses.len() {
        return Err(contract("student and expert prediction sets differ in length"));
    }
    if student.poses.len() != student.depths.len() {
        return Err(contract("prediction set has mismatched depth/pose counts"));
    }
    let n = student.poses.len();
    if n == 0 {
        return Err(contract("prediction sets are empty"));
    }
    let mut per_frame = 0.0;
    for f in 0..n {
        per_frame += depth_match(&student.depths[f], &expert.depths[f], cfg)?;
        per_frame += translation_match(&student.poses[f].translation, &expert.poses[f].translation, cfg);
        per_frame += rotation_residual(&student.poses[f].rotation, &expert.poses[f].rotation);
    }
    Ok(per_frame / n as f64 + intrinsics_residual(&student.k, &expert.k))
}

/// `photometric + lambda_distill * distill`.
pub fn total_loss(photometric: f64, distill: f64, cfg: &DistillConfig) -> Result<f64> {
    if !(cfg.lambda_distill >= 0.0) {
        return Err(contract(format!("lambda_distill must be non-negative, got {}", cfg.lambda_distill)));
    }
    Ok(photometric + cfg.lambda_distill * distill)
}
