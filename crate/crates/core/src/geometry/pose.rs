use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Skew-symmetric matrix `[w]_x` such that `[w]_x v = w x v`.
#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues formula for the rotation `exp([w]_x)`.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < 1e-10 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation matrix, angle in `[0, pi]`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return vee * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // Near pi the antisymmetric part vanishes; recover the axis from R + I = 2 a a^T.
    let s = (r + Matrix3::identity()) * 0.5;
    let i = (0..3).max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)])).unwrap_or(0);
    let mut axis = s.column(i).into_owned() / s[(i, i)].max(1e-300).sqrt();
    axis.normalize_mut();
    // Disambiguate the sign with the (small) antisymmetric part.
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rotation angle of `r` in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    so3_log(r).norm()
}

/// Rigid transform `x -> R x + t`.
///
/// Poses of frames are camera-to-world: `T_t` maps points expressed in camera
/// `t` to world coordinates. Consequently `T_i^-1 T_j` carries camera-`j`
/// coordinates into camera `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 12]", into = "[f64; 12]")]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Checked constructor: `rotation` must be orthonormal with determinant 1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let p = Self { rotation, translation };
        p.validate()?;
        Ok(p)
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: so3_exp(&axis_angle), translation }
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        let det = self.rotation.determinant();
        if !(ortho < ORTHO_TOL) || !((det - 1.0).abs() < ORTHO_TOL) {
            return Err(Error::Domain(format!("rotation is not in SO(3): |R^T R - I| = {ortho:e}, det = {det}")));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("translation must be finite".into()));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    #[inline]
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// SE(3) exponential of `xi = (rho, omega)`.
    pub fn exp(xi: &Vector6<f64>) -> Self {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let w = Vector3::new(xi[3], xi[4], xi[5]);
        let theta2 = w.norm_squared();
        let k = hat(&w);
        let (b, c) = if theta2 < 1e-10 {
            (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            let theta = theta2.sqrt();
            ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
        };
        let v = Matrix3::identity() + k * b + k * k * c;
        Self { rotation: so3_exp(&w), translation: v * rho }
    }

    /// Inverse of [`Pose::exp`].
    pub fn log(&self) -> Vector6<f64> {
        let w = so3_log(&self.rotation);
        let theta2 = w.norm_squared();
        let k = hat(&w);
        let coeff = if theta2 < 1e-10 {
            1.0 / 12.0 + theta2 / 720.0
        } else {
            let theta = theta2.sqrt();
            let half = theta / 2.0;
            (1.0 - half * half.cos() / half.sin()) / theta2
        };
        let v_inv = Matrix3::identity() - k * 0.5 + k * k * coeff;
        let rho = v_inv * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, w.x, w.y, w.z)
    }

    /// Left perturbation `exp(xi) * self`.
    pub fn perturbed(&self, xi: &Vector6<f64>) -> Self {
        Self::exp(xi) * *self
    }

    /// Adjoint such that `T exp(xi) T^-1 = exp(Ad_T xi)` for `xi = (rho, omega)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        let r = self.rotation;
        let tr = hat(&self.translation) * r;
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&tr);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad
    }

    /// Camera center in world coordinates (the translation, for camera-to-world poses).
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// 3x4 row-major `[R | t]`.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major_3x4(m: &[f64]) -> Result<Self> {
        if m.len() != 12 {
            return Err(Error::Contract(format!("expected 12 pose entries, got {}", m.len())));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::new(rotation, translation)
    }
}

impl TryFrom<[f64; 12]> for Pose {
    type Error = Error;

    fn try_from(m: [f64; 12]) -> Result<Self> {
        Self::from_row_major_3x4(&m)
    }
}

impl From<Pose> for [f64; 12] {
    fn from(p: Pose) -> Self {
        p.to_row_major_3x4()
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose { rotation: self.rotation * rhs.rotation, translation: self.rotation * rhs.translation + self.translation }
    }
}

/// `T_i^-1 T_j`: maps camera-`j` coordinates into camera `i`.
pub fn relative_pose(t_i: &Pose, t_j: &Pose) -> Pose {
    t_i.inverse() * *t_j
}
