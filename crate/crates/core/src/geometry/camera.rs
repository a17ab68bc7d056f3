use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel position. Pixel centers sit on integer coordinates, so the image
/// domain is `[0, W-1] x [0, H-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Pinhole intrinsics. The optimizer only ever produces centered intrinsics
/// (`cx = W/2`, `cy = H/2`); arbitrary principal points are accepted for
/// evaluation fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Domain(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::Domain("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// Focal guess used when no calibration is known: `1.2 * max(W, H)`.
    pub fn from_fov_prior(width: usize, height: usize) -> Self {
        let f = 1.2 * width.max(height) as f64;
        Self { fx: f, fy: f, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height }
    }

    pub fn is_centered(&self) -> bool {
        self.cx == self.width as f64 / 2.0 && self.cy == self.height as f64 / 2.0
    }

    /// Same principal point and size, focal lengths replaced.
    pub fn with_focal(&self, fx: f64, fy: f64) -> Self {
        Self { fx, fy, ..*self }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, 0.0, 1.0)
    }

    /// Ray through `p` with unit camera-z component, i.e. `K^-1 (u, v, 1)`.
    #[inline]
    pub fn ray(&self, p: Pixel) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn contains(&self, p: Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (self.width - 1) as f64 && p.v <= (self.height - 1) as f64
    }
}

/// Lift a pixel to camera coordinates: `depth * K^-1 (u, v, 1)`.
pub fn backproject(p: Pixel, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::Domain(format!("depth must be positive and finite, got {depth}")));
    }
    let mut x = k.ray(p) * depth;
    // Keep z bit-exact.
    x.z = depth;
    Ok(x)
}

/// Perspective projection `pi(K x)`. Returns `None` for points on or behind
/// the image plane; callers treat such pixels as masked.
#[inline]
pub fn project(x: &Vector3<f64>, k: &Intrinsics) -> Option<Pixel> {
    if !(x.z > 0.0) {
        return None;
    }
    Some(Pixel { u: k.fx * x.x / x.z + k.cx, v: k.fy * x.y / x.z + k.cy })
}
