//! Robust photometric penalty (Charbonnier + SSIM) and the pairwise and
//! clip-level reconstruction objectives, with analytic gradients.
//!
//! The per-pixel penalty is the channel mean of
//! `w * (1 - SSIM) / 2 + (1 - w) * charbonnier(synth - target)`, averaged over
//! the valid pixels of a pair. SSIM statistics are gathered only from window
//! pixels that are themselves valid, so invalid (zero) synthesized pixels do
//! not leak into their neighbors.

use nalgebra::Vector6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::{relative_pose, synthesize_view, synthesize_with_jacobians, DepthMap, ImageBuffer, Intrinsics, Mask, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricConfig {
    pub ssim_weight: f64,
    pub charbonnier_eps: f64,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self { ssim_weight: 0.85, charbonnier_eps: 1e-3, ssim_window: 3, ssim_c1: 0.01 * 0.01, ssim_c2: 0.03 * 0.03 }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(contract(format!("ssim_weight must be in [0, 1], got {}", self.ssim_weight)));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(contract(format!("ssim_window must be odd and >= 3, got {}", self.ssim_window)));
        }
        if !(self.charbonnier_eps > 0.0 && self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(contract("charbonnier_eps, ssim_c1 and ssim_c2 must be positive"));
        }
        Ok(())
    }
}

/// `sqrt(x^2 + eps^2) - eps`.
#[inline]
pub fn charbonnier(x: f64, eps: f64) -> f64 {
    (x * x + eps * eps).sqrt() - eps
}

#[inline]
fn charbonnier_grad(x: f64, eps: f64) -> f64 {
    x / (x * x + eps * eps).sqrt()
}

/// Local SSIM statistics of one pixel/channel.
#[derive(Debug, Clone, Copy, Default)]
struct SsimStats {
    n: f64,
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

impl SsimStats {
    fn value(&self, c1: f64, c2: f64) -> f64 {
        let a1 = 2.0 * self.mu_a * self.mu_b + c1;
        let a2 = 2.0 * self.cov + c2;
        let b1 = self.mu_a * self.mu_a + self.mu_b * self.mu_b + c1;
        let b2 = self.var_a + self.var_b + c2;
        a1 * a2 / (b1 * b2)
    }

    /// Partial derivatives of SSIM with respect to `(mu_b, var_b, cov)`.
    fn partials_b(&self, c1: f64, c2: f64) -> (f64, f64, f64) {
        let a1 = 2.0 * self.mu_a * self.mu_b + c1;
        let a2 = 2.0 * self.cov + c2;
        let b1 = self.mu_a * self.mu_a + self.mu_b * self.mu_b + c1;
        let b2 = self.var_a + self.var_b + c2;
        let s = a1 * a2 / (b1 * b2);
        let d_mu = 2.0 * self.mu_a * a2 / (b1 * b2) - s * 2.0 * self.mu_b / b1;
        let d_var = -s / b2;
        let d_cov = 2.0 * a1 / (b1 * b2);
        (d_mu, d_var, d_cov)
    }
}

fn window_stats(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&Mask>, radius: usize, x: usize, y: usize, c: usize) -> SsimStats {
    let (w, h) = (a.width, a.height);
    let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
    let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
    let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            if mask.is_some_and(|m| !m.get(xx, yy)) {
                continue;
            }
            let va = a.get(xx, yy, c);
            let vb = b.get(xx, yy, c);
            n += 1.0;
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    }
    let mu_a = sa / n;
    let mu_b = sb / n;
    SsimStats { n, mu_a, mu_b, var_a: saa / n - mu_a * mu_a, var_b: sbb / n - mu_b * mu_b, cov: sab / n - mu_a * mu_b }
}

/// Per-pixel, per-channel SSIM over a square window clipped to the image.
pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer, cfg: &PhotometricConfig) -> Result<ImageBuffer> {
    cfg.validate()?;
    if !a.same_shape(b) {
        return Err(contract("ssim_map inputs must have identical shapes"));
    }
    let radius = cfg.ssim_window / 2;
    let mut out = ImageBuffer::filled(a.height, a.width, a.channels, 0.0);
    for y in 0..a.height {
        for x in 0..a.width {
            for c in 0..a.channels {
                let s = window_stats(a, b, None, radius, x, y, c).value(cfg.ssim_c1, cfg.ssim_c2);
                out.set(x, y, c, s);
            }
        }
    }
    Ok(out)
}

/// Reconstruction loss of one ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLoss {
    pub value: f64,
    pub valid_pixel_count: usize,
}

fn check_pair(i_tgt: &ImageBuffer, synth: &ImageBuffer, mask: &Mask) -> Result<()> {
    if !i_tgt.same_shape(synth) || mask.width != i_tgt.width || mask.height != i_tgt.height {
        return Err(contract("pair_loss inputs must share dimensions"));
    }
    Ok(())
}

/// Mean robust penalty between `synth` and `i_tgt` over the masked-in pixels.
pub fn pair_loss(i_tgt: &ImageBuffer, synth: &ImageBuffer, mask: &Mask, cfg: &PhotometricConfig) -> Result<PairLoss> {
    pair_loss_impl(i_tgt, synth, mask, cfg, None)
}

/// [`pair_loss`] together with its gradient with respect to every value of
/// `synth` (zero outside the mask).
pub fn pair_loss_with_grad(i_tgt: &ImageBuffer, synth: &ImageBuffer, mask: &Mask, cfg: &PhotometricConfig) -> Result<(PairLoss, Vec<f64>)> {
    let mut grad = vec![0.0; synth.data.len()];
    let loss = pair_loss_impl(i_tgt, synth, mask, cfg, Some(&mut grad))?;
    Ok((loss, grad))
}

fn pair_loss_impl(i_tgt: &ImageBuffer, synth: &ImageBuffer, mask: &Mask, cfg: &PhotometricConfig, mut grad: Option<&mut Vec<f64>>) -> Result<PairLoss> {
    cfg.validate()?;
    check_pair(i_tgt, synth, mask)?;
    let valid = mask.count();
    if valid == 0 {
        return Ok(PairLoss { value: 0.0, valid_pixel_count: 0 });
    }
    let (w, h, ch) = (i_tgt.width, i_tgt.height, i_tgt.channels);
    let radius = cfg.ssim_window / 2;
    let norm = 1.0 / (valid as f64 * ch as f64);
    let ws = cfg.ssim_weight;
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for c in 0..ch {
                let diff = synth.get(x, y, c) - i_tgt.get(x, y, c);
                let mut term = (1.0 - ws) * charbonnier(diff, cfg.charbonnier_eps);
                let stats = if ws > 0.0 { Some(window_stats(i_tgt, synth, Some(mask), radius, x, y, c)) } else { None };
                if let Some(st) = &stats {
                    term += ws * 0.5 * (1.0 - st.value(cfg.ssim_c1, cfg.ssim_c2));
                }
                total += term;

                let Some(g) = grad.as_deref_mut() else { continue };
                g[(y * w + x) * ch + c] += norm * (1.0 - ws) * charbonnier_grad(diff, cfg.charbonnier_eps);
                if let Some(st) = stats {
                    let d_s = -norm * ws * 0.5;
                    let (d_mu, d_var, d_cov) = st.partials_b(cfg.ssim_c1, cfg.ssim_c2);
                    let inv_n = 1.0 / st.n;
                    for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                        for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                            if !mask.get(xx, yy) {
                                continue;
                            }
                            let vb = synth.get(xx, yy, c);
                            let va = i_tgt.get(xx, yy, c);
                            let d = d_mu + 2.0 * d_var * (vb - st.mu_b) + d_cov * (va - st.mu_a);
                            g[(yy * w + xx) * ch + c] += d_s * d * inv_n;
                        }
                    }
                }
            }
        }
    }
    Ok(PairLoss { value: total * norm, valid_pixel_count: valid })
}

fn check_clip(frames: &[ImageBuffer], depths: &[DepthMap], poses: &[Pose], ks: &[Intrinsics]) -> Result<()> {
    let n = frames.len();
    if n < 2 {
        return Err(contract(format!("a clip needs at least 2 frames, got {n}")));
    }
    if depths.len() != n || poses.len() != n || ks.len() != n {
        return Err(contract(format!("clip lists differ in length: {n} frames, {} depths, {} poses, {} intrinsics", depths.len(), poses.len(), ks.len())));
    }
    Ok(())
}

/// All ordered `(target, source)` index pairs of a clip, ascending.
pub fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

/// Transform carrying target-camera coordinates into the source camera.
#[inline]
pub fn target_to_source(poses: &[Pose], target: usize, source: usize) -> Pose {
    relative_pose(&poses[source], &poses[target])
}

/// Sum of [`pair_loss`] over all `N(N-1)` ordered pairs, frame `i`
/// synthesized from frame `j`.
pub fn clip_objective(frames: &[ImageBuffer], depths: &[DepthMap], poses: &[Pose], ks: &[Intrinsics], cfg: &PhotometricConfig) -> Result<f64> {
    clip_objective_detailed(frames, depths, poses, ks, cfg).map(|(loss, _)| loss)
}

/// [`clip_objective`] plus the total number of valid pixels over all pairs.
pub fn clip_objective_detailed(
    frames: &[ImageBuffer],
    depths: &[DepthMap],
    poses: &[Pose],
    ks: &[Intrinsics],
    cfg: &PhotometricConfig,
) -> Result<(f64, usize)> {
    check_clip(frames, depths, poses, ks)?;
    let losses: Vec<Result<PairLoss>> = ordered_pairs(frames.len())
        .into_par_iter()
        .map(|(i, j)| {
            let rel = target_to_source(poses, i, j);
            let (synth, mask) = synthesize_view(&frames[j], &depths[i], &rel, &ks[i], &ks[j])?;
            pair_loss(&frames[i], &synth, &mask, cfg)
        })
        .collect();
    losses.into_iter().try_fold((0.0, 0), |(acc, n), l| {
        let l = l?;
        Ok((acc + l.value, n + l.valid_pixel_count))
    })
}

/// Gradient of [`clip_objective`] with respect to every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipGradient {
    /// Per frame, per pixel: derivative with respect to log-depth.
    pub log_depth: Vec<Vec<f64>>,
    /// Per frame: derivative with respect to a left increment `exp(xi) T`.
    pub pose: Vec<Vector6<f64>>,
    /// Per frame: derivative with respect to `(log fx, log fy)`.
    pub log_focal: Vec<[f64; 2]>,
}

/// [`clip_objective`] and its analytic gradient.
pub fn clip_objective_with_grad(
    frames: &[ImageBuffer],
    depths: &[DepthMap],
    poses: &[Pose],
    ks: &[Intrinsics],
    cfg: &PhotometricConfig,
) -> Result<(f64, ClipGradient)> {
    check_clip(frames, depths, poses, ks)?;
    let n = frames.len();
    struct PairGrad {
        target: usize,
        source: usize,
        loss: f64,
        log_depth: Vec<f64>,
        rel_xi: Vector6<f64>,
        f_tgt: [f64; 2],
        f_src: [f64; 2],
    }
    let pairs: Vec<Result<PairGrad>> = ordered_pairs(n)
        .into_par_iter()
        .map(|(i, j)| {
            let rel = target_to_source(poses, i, j);
            let (synth, mask, jac) = synthesize_with_jacobians(&frames[j], &depths[i], &rel, &ks[i], &ks[j])?;
            let (loss, g_synth) = pair_loss_with_grad(&frames[i], &synth, &mask, cfg)?;
            let ch = synth.channels;
            let mut log_depth = vec![0.0; depths[i].data.len()];
            let mut rel_xi = Vector6::zeros();
            let mut f_tgt = [0.0; 2];
            let mut f_src = [0.0; 2];
            for (idx, (g, j)) in g_synth.iter().zip(&jac.data).enumerate() {
                if *g == 0.0 {
                    continue;
                }
                log_depth[idx / ch] += g * j.d_log_depth;
                for k in 0..6 {
                    rel_xi[k] += g * j.d_xi[k];
                }
                for k in 0..2 {
                    f_tgt[k] += g * j.d_log_f_tgt[k];
                    f_src[k] += g * j.d_log_f_src[k];
                }
            }
            Ok(PairGrad { target: i, source: j, loss: loss.value, log_depth, rel_xi, f_tgt, f_src })
        })
        .collect();

    let mut total = 0.0;
    let mut grad =
        ClipGradient { log_depth: depths.iter().map(|d| vec![0.0; d.data.len()]).collect(), pose: vec![Vector6::zeros(); n], log_focal: vec![[0.0; 2]; n] };
    for pair in pairs {
        let p = pair?;
        total += p.loss;
        for (acc, g) in grad.log_depth[p.target].iter_mut().zip(&p.log_depth) {
            *acc += g;
        }
        // rel = T_src^-1 T_tgt; a left increment of either pose is a left
        // increment of rel by +/- Ad(T_src^-1) xi.
        let ad_t = poses[p.source].inverse().adjoint().transpose();
        let g_pose = ad_t * p.rel_xi;
        grad.pose[p.target] += g_pose;
        grad.pose[p.source] -= g_pose;
        for k in 0..2 {
            grad.log_focal[p.target][k] += p.f_tgt[k];
            grad.log_focal[p.source][k] += p.f_src[k];
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charbonnier_values() {
        assert_eq!(charbonnier(0.0, 1e-3), 0.0);
        assert!((charbonnier(3.0, 1e-12) - 3.0).abs() < 1e-11);
        assert_eq!(charbonnier(1.0, 1e-3), (1.0f64 + 1e-6).sqrt() - 1e-3);
        assert_eq!(charbonnier(-2.5, 0.1), charbonnier(2.5, 0.1));
    }

    #[test]
    fn config_validation() {
        assert!(PhotometricConfig::default().validate().is_ok());
        assert!(PhotometricConfig { ssim_window: 4, ..Default::default() }.validate().is_err());
        assert!(PhotometricConfig { ssim_window: 1, ..Default::default() }.validate().is_err());
        assert!(PhotometricConfig { ssim_weight: 1.5, ..Default::default() }.validate().is_err());
        assert!(PhotometricConfig { charbonnier_eps: 0.0, ..Default::default() }.validate().is_err());
    }

    fn pattern(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 1, |x, y, _| 0.5 + 0.3 * ((x as f64) * 0.9).sin() * ((y as f64) * 0.7).cos())
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = pattern(8, 9);
        let s = ssim_map(&a, &a, &PhotometricConfig::default()).unwrap();
        assert!(s.data.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ssim_constant_zero_vs_one() {
        let cfg = PhotometricConfig::default();
        let a = ImageBuffer::filled(5, 5, 1, 0.0);
        let b = ImageBuffer::filled(5, 5, 1, 1.0);
        let s = ssim_map(&a, &b, &cfg).unwrap();
        // Means 0 and 1, zero variances: (c1)(c2) / ((1 + c1)(c2)).
        let expected = cfg.ssim_c1 / (1.0 + cfg.ssim_c1);
        assert!(s.data.iter().all(|v| (v - expected).abs() < 1e-15));
        assert!(expected < 1e-3);
    }

    #[test]
    fn ssim_inverted_pattern_is_negative() {
        let a = ImageBuffer::from_fn(8, 8, 1, |x, y, _| if (x + y) % 2 == 0 { 0.8 } else { 0.2 });
        let b = ImageBuffer::from_fn(8, 8, 1, |x, y, _| 1.0 - a.get(x, y, 0));
        let s = ssim_map(&a, &b, &PhotometricConfig::default()).unwrap();
        assert!(s.data.iter().all(|v| *v < 0.0));
    }

    #[test]
    fn ssim_rejects_shape_mismatch() {
        assert!(ssim_map(&pattern(4, 4), &pattern(4, 5), &PhotometricConfig::default()).is_err());
    }

    #[test]
    fn pair_loss_zero_when_equal_and_empty_mask() {
        let cfg = PhotometricConfig::default();
        let a = pattern(6, 6);
        let l = pair_loss(&a, &a, &Mask::full(6, 6), &cfg).unwrap();
        assert!(l.value.abs() < 1e-12);
        assert_eq!(l.valid_pixel_count, 36);
        let b = ImageBuffer::filled(6, 6, 1, 0.9);
        let e = pair_loss(&a, &b, &Mask::empty(6, 6), &cfg).unwrap();
        assert_eq!(e, PairLoss { value: 0.0, valid_pixel_count: 0 });
    }

    /// Hand evaluation on a 2x2 image: a 3x3 window clipped to a 2x2 image
    /// covers every pixel, so all four pixels share the same statistics.
    #[test]
    fn pair_loss_two_by_two_hand_value() {
        let cfg = PhotometricConfig::default();
        let tgt = ImageBuffer::new(2, 2, 1, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let syn = ImageBuffer::new(2, 2, 1, vec![0.25, 0.35, 0.7, 0.8]).unwrap();
        let (mu_a, mu_b) = (0.5, 0.525);
        let var_a = (0.09 + 0.01 + 0.01 + 0.09) / 4.0;
        let var_b = ((0.25f64 - mu_b).powi(2) + (0.35f64 - mu_b).powi(2) + (0.7f64 - mu_b).powi(2) + (0.8f64 - mu_b).powi(2)) / 4.0;
        let cov = ((0.2 - mu_a) * (0.25 - mu_b) + (0.4 - mu_a) * (0.35 - mu_b) + (0.6 - mu_a) * (0.7 - mu_b) + (0.8 - mu_a) * (0.8 - mu_b)) / 4.0;
        let (c1, c2) = (1e-4, 9e-4);
        let ssim = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        let rho = |d: f64| (d * d + 1e-6f64).sqrt() - 1e-3;
        let charb = (rho(0.05) + rho(-0.05) + rho(0.1) + rho(0.0)) / 4.0;
        let expected = 0.85 * (1.0 - ssim) / 2.0 + 0.15 * charb;
        let got = pair_loss(&tgt, &syn, &Mask::full(2, 2), &cfg).unwrap();
        assert!((got.value - expected).abs() < 1e-14, "{} vs {expected}", got.value);
    }

    #[test]
    fn pair_loss_gradient_matches_finite_differences() {
        let cfg = PhotometricConfig::default();
        let tgt = pattern(7, 8);
        let mut syn = ImageBuffer::from_fn(7, 8, 1, |x, y, _| 0.45 + 0.25 * ((x as f64) * 0.8 + 0.3).sin() * ((y as f64) * 0.6).cos());
        let mut mask = Mask::full(7, 8);
        mask.data[3] = false;
        mask.data[20] = false;
        let (_, grad) = pair_loss_with_grad(&tgt, &syn, &mask, &cfg).unwrap();
        let h = 1e-6;
        for idx in 0..syn.data.len() {
            let orig = syn.data[idx];
            syn.data[idx] = orig + h;
            let lp = pair_loss(&tgt, &syn, &mask, &cfg).unwrap().value;
            syn.data[idx] = orig - h;
            let lm = pair_loss(&tgt, &syn, &mask, &cfg).unwrap().value;
            syn.data[idx] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let err = (numeric - grad[idx]).abs() / numeric.abs().max(grad[idx].abs()).max(1e-8);
            assert!(err < 1e-5, "pixel {idx}: {numeric} vs {}", grad[idx]);
        }
    }

    #[test]
    fn ordered_pairs_ascending() {
        assert_eq!(ordered_pairs(3), vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn clip_objective_identical_frames_is_zero() {
        let f = ImageBuffer::from_fn(16, 16, 3, |x, y, c| 0.3 + 0.02 * x as f64 + 0.01 * (y * c) as f64);
        let k = Intrinsics::centered(16.0, 16.0, 16, 16).unwrap();
        let n = 3;
        let loss = clip_objective(&vec![f; n], &vec![DepthMap::filled(16, 16, 2.0); n], &vec![Pose::identity(); n], &vec![k; n], &PhotometricConfig::default())
            .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn clip_objective_length_mismatch() {
        let f = ImageBuffer::filled(8, 8, 1, 0.5);
        let k = Intrinsics::centered(8.0, 8.0, 8, 8).unwrap();
        let r = clip_objective(&vec![f; 2], &[DepthMap::filled(8, 8, 1.0)], &[Pose::identity(); 2], &[k; 2], &PhotometricConfig::default());
        assert!(r.is_err());
        let f = ImageBuffer::filled(8, 8, 1, 0.5);
        let r = clip_objective(&[f], &[DepthMap::filled(8, 8, 1.0)], &[Pose::identity()], &[k], &PhotometricConfig::default());
        assert!(r.is_err());
    }
}
