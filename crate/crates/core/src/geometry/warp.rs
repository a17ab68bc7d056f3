//! Inverse warping of a source frame into a target frame.
//!
//! For each target pixel `p` with depth `D(p)`, the point `D(p) K_tgt^-1 p`
//! is moved into the source camera by `rel` and projected with `K_src`; the
//! source image is then sampled bilinearly. `rel` maps target-camera
//! coordinates to source-camera coordinates, i.e. for camera-to-world poses
//! `rel = relative_pose(T_src, T_tgt)`.

use nalgebra::{Matrix3x2, Vector3};

use crate::error::{contract, Result};
use crate::geometry::{DepthMap, ImageBuffer, Intrinsics, Mask, Pixel, Pose};

/// Derivatives of one sampled channel value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixelJacobian {
    /// With respect to the log-depth of the target pixel.
    pub d_log_depth: f64,
    /// With respect to a left increment `exp(xi) * rel`, `xi = (rho, omega)`.
    pub d_xi: [f64; 6],
    /// With respect to `(log fx, log fy)` of the target intrinsics.
    pub d_log_f_tgt: [f64; 2],
    /// With respect to `(log fx, log fy)` of the source intrinsics.
    pub d_log_f_src: [f64; 2],
}

/// Row-major, channel-interleaved per-pixel Jacobians (same layout as [`ImageBuffer`]).
#[derive(Debug, Clone)]
pub struct WarpJacobians {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<PixelJacobian>,
}

impl WarpJacobians {
    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> &PixelJacobian {
        &self.data[(y * self.width + x) * self.channels + c]
    }
}

fn check_dims(i_src: &ImageBuffer, d_tgt: &DepthMap, k_tgt: &Intrinsics, k_src: &Intrinsics) -> Result<()> {
    if d_tgt.width != k_tgt.width || d_tgt.height != k_tgt.height {
        return Err(contract(format!("target depth is {}x{} but target intrinsics describe {}x{}", d_tgt.width, d_tgt.height, k_tgt.width, k_tgt.height)));
    }
    if i_src.width != k_src.width || i_src.height != k_src.height {
        return Err(contract(format!("source image is {}x{} but source intrinsics describe {}x{}", i_src.width, i_src.height, k_src.width, k_src.height)));
    }
    Ok(())
}

/// Synthesize the target view from `i_src`. The mask is set where the
/// transformed point lies in front of the source camera and the bilinear
/// footprint is inside the source image; elsewhere the value is 0.
pub fn synthesize_view(i_src: &ImageBuffer, d_tgt: &DepthMap, rel: &Pose, k_tgt: &Intrinsics, k_src: &Intrinsics) -> Result<(ImageBuffer, Mask)> {
    check_dims(i_src, d_tgt, k_tgt, k_src)?;
    let (h, w, ch) = (d_tgt.height, d_tgt.width, i_src.channels);
    let mut synth = ImageBuffer::filled(h, w, ch, 0.0);
    let mut mask = Mask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = Pixel::new(x as f64, y as f64);
            let pt = rel.transform(&(k_tgt.ray(p) * d_tgt.get(x, y)));
            let Some(q) = crate::geometry::project(&pt, k_src) else { continue };
            let idx = y * w + x;
            if i_src.sample_into(q, &mut synth.data[idx * ch..(idx + 1) * ch]) {
                mask.data[idx] = true;
            }
        }
    }
    Ok((synth, mask))
}

/// [`synthesize_view`] plus analytic derivatives of every sampled value.
/// Masked-out pixels carry zero derivatives.
pub fn synthesize_with_jacobians(
    i_src: &ImageBuffer,
    d_tgt: &DepthMap,
    rel: &Pose,
    k_tgt: &Intrinsics,
    k_src: &Intrinsics,
) -> Result<(ImageBuffer, Mask, WarpJacobians)> {
    check_dims(i_src, d_tgt, k_tgt, k_src)?;
    let (h, w, ch) = (d_tgt.height, d_tgt.width, i_src.channels);
    let mut synth = ImageBuffer::filled(h, w, ch, 0.0);
    let mut mask = Mask::empty(h, w);
    let mut jac = WarpJacobians { height: h, width: w, channels: ch, data: vec![PixelJacobian::default(); h * w * ch] };
    let r = rel.rotation;
    let mut grad = [[0.0; 2]; 3];
    for y in 0..h {
        for x in 0..w {
            let p = Pixel::new(x as f64, y as f64);
            let pt_tgt = k_tgt.ray(p) * d_tgt.get(x, y);
            let pt = rel.transform(&pt_tgt);
            let Some(q) = crate::geometry::project(&pt, k_src) else { continue };
            let idx = y * w + x;
            if !i_src.sample_with_gradient(q, &mut synth.data[idx * ch..(idx + 1) * ch], &mut grad[..ch]) {
                continue;
            }
            mask.data[idx] = true;

            // dq/dY for q = (fx Y1/Y3 + cx, fy Y2/Y3 + cy).
            let iz = 1.0 / pt.z;
            let a = k_src.fx * iz;
            let b = k_src.fy * iz;
            let dq_dy = Matrix3x2::new(a, 0.0, 0.0, b, -a * pt.x * iz, -b * pt.y * iz).transpose();

            let d_depth = dq_dy * (r * pt_tgt);
            let mut d_xi = [[0.0; 2]; 6];
            for k in 0..3 {
                let col = dq_dy.column(k);
                d_xi[k] = [col[0], col[1]];
                let e = Vector3::ith(k, 1.0);
                let v = dq_dy * e.cross(&pt);
                d_xi[k + 3] = [v[0], v[1]];
            }
            let d_fx_tgt = dq_dy * (r.column(0) * -pt_tgt.x);
            let d_fy_tgt = dq_dy * (r.column(1) * -pt_tgt.y);
            let d_fx_src = [q.u - k_src.cx, 0.0];
            let d_fy_src = [0.0, q.v - k_src.cy];

            for (c, g) in grad.iter().enumerate().take(ch) {
                let dot = |d: [f64; 2]| g[0] * d[0] + g[1] * d[1];
                let j = &mut jac.data[idx * ch + c];
                j.d_log_depth = dot([d_depth[0], d_depth[1]]);
                for k in 0..6 {
                    j.d_xi[k] = dot(d_xi[k]);
                }
                j.d_log_f_tgt = [dot([d_fx_tgt[0], d_fx_tgt[1]]), dot([d_fy_tgt[0], d_fy_tgt[1]])];
                j.d_log_f_src = [dot(d_fx_src), dot(d_fy_src)];
            }
        }
    }
    Ok((synth, mask, jac))
}

/// Per-pixel derivatives of the synthesized view with respect to target
/// log-depth, a left se(3) increment of `rel`, and log focal lengths.
pub fn warp_jacobians(d_tgt: &DepthMap, rel: &Pose, k_tgt: &Intrinsics, k_src: &Intrinsics, i_src: &ImageBuffer) -> Result<WarpJacobians> {
    synthesize_with_jacobians(i_src, d_tgt, rel, k_tgt, k_src).map(|(_, _, j)| j)
}
