//! Procedural clips with known depth, pose and intrinsics.
//!
//! Scenes are surfaces `z = h(x, y)` in world coordinates carrying a
//! band-limited sum-of-sines texture parameterized by world `(x, y)`. Every
//! frame is rendered by casting each pixel ray onto the surface, so frames and
//! stored geometry are consistent up to floating point; warping one frame
//! into another with the stored truth differs from the target only by the
//! bilinear resampling error of the smooth texture.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distill::PredictionSet;
use crate::error::{contract, Error, Result};
use crate::geometry::{hat, project, relative_pose, DepthMap, ImageBuffer, Intrinsics, Pixel, Pose};
use crate::mvs::Correspondence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// A slanted plane; every frame pair is related by an exact homography.
    TexturedPlane,
    /// A smooth random heightfield with depths in `[1, 3]`.
    RandomHeightfield,
    /// The heightfield viewed by a purely rotating camera.
    RotationOnly,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" | "textured-plane" => Ok(Self::TexturedPlane),
            "heightfield" | "random-heightfield" => Ok(Self::RandomHeightfield),
            "rotation" | "rotation-only" => Ok(Self::RotationOnly),
            other => Err(contract(format!("unknown scene kind '{other}'"))),
        }
    }
}

/// Per-step camera motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    /// Camera displacement per frame, as a fraction of the minimum scene depth.
    pub baseline: f64,
    /// Rotation per frame, degrees.
    pub rotation_deg: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Self { baseline: 0.1, rotation_deg: 2.0 }
    }
}

/// Minimum scene depth; baselines are expressed relative to it.
pub const MIN_SCENE_DEPTH: f64 = 1.0;
const MEAN_SCENE_DEPTH: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Wave {
    kx: f64,
    ky: f64,
    amp: f64,
    phase: [f64; 3],
}

/// Sum-of-sines function of world `(x, y)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Waves(Vec<Wave>);

impl Waves {
    fn random(rng: &mut ChaCha8Rng, count: usize, wavelength: (f64, f64), total_amp: f64) -> Self {
        let waves = (0..count)
            .map(|_| {
                let lambda = rng.random_range(wavelength.0..wavelength.1);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let k = 2.0 * std::f64::consts::PI / lambda;
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    amp: total_amp / count as f64 * rng.random_range(0.6..1.0),
                    phase: [0.0; 3].map(|_| rng.random_range(0.0..std::f64::consts::TAU)),
                }
            })
            .collect();
        Self(waves)
    }

    #[inline]
    fn eval(&self, x: f64, y: f64, channel: usize) -> f64 {
        self.0.iter().map(|w| w.amp * (w.kx * x + w.ky * y + w.phase[channel]).sin()).sum()
    }

    /// Value and `(d/dx, d/dy)` of channel 0.
    #[inline]
    fn eval_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        self.0.iter().fold((0.0, 0.0, 0.0), |(v, gx, gy), w| {
            let arg = w.kx * x + w.ky * y + w.phase[0];
            let c = w.amp * arg.cos();
            (v + w.amp * arg.sin(), gx + c * w.kx, gy + c * w.ky)
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Surface {
    /// `z = z0 + a x + b y`.
    Plane { z0: f64, a: f64, b: f64 },
    /// `z = z0 + waves(x, y)`.
    Heightfield { z0: f64, waves: Waves },
}

impl Surface {
    /// Height and its `(x, y)` gradient.
    fn height(&self, x: f64, y: f64) -> (f64, f64, f64) {
        match self {
            Surface::Plane { z0, a, b } => (z0 + a * x + b * y, *a, *b),
            Surface::Heightfield { z0, waves } => {
                let (v, gx, gy) = waves.eval_grad(x, y);
                (z0 + v, gx, gy)
            }
        }
    }

    /// Smallest ray parameter `lambda > 0` with `center + lambda * dir` on the
    /// surface: march to the first sign change, then refine by bisection.
    fn intersect(&self, center: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        if dir.z <= 1e-6 {
            return None;
        }
        let gap = |lambda: f64| {
            let p = center + dir * lambda;
            p.z - self.height(p.x, p.y).0
        };
        let step = 0.01;
        let mut lo = 1e-3;
        let mut f_lo = gap(lo);
        if f_lo >= 0.0 {
            return None;
        }
        let mut hi = lo;
        loop {
            hi += step;
            if hi > 50.0 {
                return None;
            }
            let f_hi = gap(hi);
            if f_hi >= 0.0 {
                break;
            }
            lo = hi;
            f_lo = f_hi;
        }
        debug_assert!(f_lo < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if gap(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        (gap(lambda).abs() < 1e-10).then_some(lambda)
    }
}

/// Scene description plus rendered truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub seed: u64,
    pub motion: Motion,
    pub intrinsics: Intrinsics,
    /// Camera-to-world poses; frame 0 is the identity.
    pub poses: Vec<Pose>,
    /// Minimum scene depth; baselines are relative to it.
    pub depth_scale: f64,
    surface: Surface,
    texture: Waves,
}

/// Rendered frames and their ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub frames: Vec<ImageBuffer>,
    pub truth: PredictionSet,
    pub scene: SyntheticScene,
}

impl SyntheticScene {
    /// Texture color of world point `(x, y)`; each channel stays inside `[0.1, 0.9]`.
    fn color(&self, x: f64, y: f64, channel: usize) -> f64 {
        0.5 + self.texture.eval(x, y, channel)
    }

    /// World point seen at pixel `p` of frame `frame`, and its depth.
    pub fn surface_point(&self, frame: usize, p: Pixel) -> Option<(Vector3<f64>, f64)> {
        let pose = &self.poses[frame];
        let dir = pose.rotation * self.intrinsics.ray(p);
        let depth = self.surface.intersect(&pose.translation, &dir)?;
        Some((pose.translation + dir * depth, depth))
    }

    fn render(&self, frame: usize) -> Result<(ImageBuffer, DepthMap)> {
        let k = &self.intrinsics;
        let (w, h) = (k.width, k.height);
        let mut img = ImageBuffer::filled(h, w, 3, 0.0);
        let mut depth = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (pt, d) = self
                    .surface_point(frame, Pixel::new(x as f64, y as f64))
                    .ok_or_else(|| Error::FrustumViolation(format!("frame {frame}: pixel ({x}, {y}) does not hit the scene")))?;
                depth[y * w + x] = d;
                for c in 0..3 {
                    img.set(x, y, c, self.color(pt.x, pt.y, c));
                }
            }
        }
        Ok((img, DepthMap::new(h, w, depth)?))
    }

    /// Transform carrying camera-`t` coordinates into camera `t + 1`.
    pub fn pair_motion(&self, t: usize) -> Pose {
        relative_pose(&self.poses[t + 1], &self.poses[t])
    }

    /// Ground-truth `F` with `x_{t+1}^T F x_t = 0`.
    pub fn fundamental(&self, t: usize) -> Matrix3<f64> {
        let m = self.pair_motion(t);
        let k_inv = self.intrinsics.inverse_matrix();
        k_inv.transpose() * hat(&m.translation) * m.rotation * k_inv
    }

    /// Ground-truth homography `x_{t+1} ~ H x_t` when one exists (plane scene
    /// or zero baseline).
    pub fn homography(&self, t: usize) -> Option<Matrix3<f64>> {
        let m = self.pair_motion(t);
        let k = self.intrinsics.matrix();
        let k_inv = self.intrinsics.inverse_matrix();
        match (&self.surface, self.kind) {
            (_, SceneKind::RotationOnly) => Some(k * m.rotation * k_inv),
            (Surface::Plane { z0, a, b }, _) => {
                // World plane n_w . X = z0 with n_w = (-a, -b, 1); move into camera t.
                let pose = &self.poses[t];
                let n_w = Vector3::new(-*a, -*b, 1.0);
                let n_c = pose.rotation.transpose() * n_w;
                let d_c = z0 - n_w.dot(&pose.translation);
                Some(k * (m.rotation + m.translation * n_c.transpose() / d_c) * k_inv)
            }
            _ => None,
        }
    }
}

fn random_unit_near(rng: &mut ChaCha8Rng, base: Vector3<f64>, spread: f64) -> Vector3<f64> {
    let jitter = Vector3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread));
    (base + jitter).normalize()
}

/// Render an `n_frames` clip of `size x size` pixels.
pub fn make_clip(kind: SceneKind, n_frames: usize, size: usize, motion: Motion, seed: u64) -> Result<SyntheticClip> {
    if n_frames < 2 {
        return Err(contract(format!("a clip needs at least 2 frames, got {n_frames}")));
    }
    if size < 32 {
        return Err(contract(format!("image size must be at least 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Texture wavelengths of 0.6-1.5 world units are >= ~20 px at mean depth
    // for a 64 px image, which keeps bilinear resampling error near 1e-3.
    let texture = Waves::random(&mut rng, 6, (0.6, 1.5), 0.4);
    let surface = match kind {
        SceneKind::TexturedPlane => Surface::Plane { z0: MEAN_SCENE_DEPTH, a: rng.random_range(-0.25..0.25), b: rng.random_range(-0.25..0.25) },
        SceneKind::RandomHeightfield | SceneKind::RotationOnly => {
            Surface::Heightfield { z0: MEAN_SCENE_DEPTH, waves: Waves::random(&mut rng, 4, (2.0, 4.0), 0.8) }
        }
    };
    let rot_axis = random_unit_near(&mut rng, Vector3::new(0.3, 1.0, 0.1), 0.3);
    let trans_dir = random_unit_near(&mut rng, Vector3::new(1.0, 0.25, 0.15), 0.3);
    let baseline = match kind {
        SceneKind::RotationOnly => 0.0,
        _ => motion.baseline,
    };
    let step = baseline * MIN_SCENE_DEPTH;
    let angle = motion.rotation_deg.to_radians();
    let poses = (0..n_frames).map(|i| Pose::from_axis_angle(rot_axis * angle * i as f64, trans_dir * step * i as f64)).collect();
    let intrinsics = Intrinsics::centered(size as f64, size as f64, size, size)?;
    let scene = SyntheticScene { kind, seed, motion, intrinsics, poses, depth_scale: MIN_SCENE_DEPTH, surface, texture };

    let mut frames = Vec::with_capacity(n_frames);
    let mut depths = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let (img, depth) = scene.render(f)?;
        frames.push(img);
        depths.push(depth);
    }
    check_overlap(&scene, &depths)?;
    let truth = PredictionSet { depths, poses: scene.poses.clone(), k: intrinsics };
    Ok(SyntheticClip { frames, truth, scene })
}

/// At least half of every frame must be visible from its neighbor.
fn check_overlap(scene: &SyntheticScene, depths: &[DepthMap]) -> Result<()> {
    let k = &scene.intrinsics;
    for t in 0..depths.len() - 1 {
        let m = scene.pair_motion(t);
        let visible = (0..k.height)
            .flat_map(|y| (0..k.width).map(move |x| (x, y)))
            .filter(|&(x, y)| {
                let p = Pixel::new(x as f64, y as f64);
                let pt = m.transform(&(k.ray(p) * depths[t].get(x, y)));
                project(&pt, k).is_some_and(|q| k.contains(q))
            })
            .count();
        if visible * 2 < k.width * k.height {
            return Err(Error::FrustumViolation(format!("only {visible} of {} pixels of frame {t} remain visible in frame {}", k.width * k.height, t + 1)));
        }
    }
    Ok(())
}

/// Noise model for [`ground_truth_matches`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatchNoise {
    /// Standard deviation of Gaussian noise added to both coordinates of `x_t1`, pixels.
    pub sigma: f64,
    /// Fraction of matches replaced by uniformly random `x_t1` positions.
    pub outlier_fraction: f64,
}

/// Correspondences with outlier labels.
#[derive(Debug, Clone)]
pub struct LabeledMatches {
    pub matches: Vec<Correspondence>,
    pub is_outlier: Vec<bool>,
    /// Noise-free `x_t1` for every match (for outliers: the true reprojection).
    pub clean_x_t1: Vec<Pixel>,
}

/// Exact reprojection correspondences between frames `t` and `t + 1` at
/// random pixels at least 2 px from the border.
pub fn ground_truth_matches(scene: &SyntheticScene, t: usize, m: usize, noise: MatchNoise, seed: u64) -> Result<LabeledMatches> {
    if m < 8 {
        return Err(contract(format!("need at least 8 matches, asked for {m}")));
    }
    if t + 1 >= scene.poses.len() {
        return Err(contract(format!("pair index {t} out of range for {} frames", scene.poses.len())));
    }
    let k = &scene.intrinsics;
    let pose_next = scene.poses[t + 1].inverse();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, noise.sigma.max(0.0)).map_err(|e| contract(e.to_string()))?;
    let margin = 2.0;
    let (max_u, max_v) = ((k.width - 1) as f64 - margin, (k.height - 1) as f64 - margin);
    let n_out = (noise.outlier_fraction.clamp(0.0, 1.0) * m as f64).round() as usize;
    let mut out = LabeledMatches { matches: Vec::with_capacity(m), is_outlier: Vec::with_capacity(m), clean_x_t1: Vec::with_capacity(m) };
    let mut attempts = 0;
    while out.matches.len() < m {
        attempts += 1;
        if attempts > 1000 * m {
            return Err(Error::FrustumViolation("could not find enough co-visible pixels".into()));
        }
        let p = Pixel::new(rng.random_range(margin..max_u), rng.random_range(margin..max_v));
        let Some((world, _)) = scene.surface_point(t, p) else { continue };
        let Some(q) = project(&pose_next.transform(&world), k) else { continue };
        if !(q.u >= margin && q.v >= margin && q.u <= max_u && q.v <= max_v) {
            continue;
        }
        let outlier = out.matches.len() < n_out;
        let x_t1 = if outlier {
            Pixel::new(rng.random_range(margin..max_u), rng.random_range(margin..max_v))
        } else if noise.sigma > 0.0 {
            Pixel::new(q.u + gauss.sample(&mut rng), q.v + gauss.sample(&mut rng))
        } else {
            q
        };
        out.matches.push(Correspondence { x_t: p, x_t1 });
        out.is_outlier.push(outlier);
        out.clean_x_t1.push(q);
    }
    // Interleave outliers rather than front-loading them.
    let mut order: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Ok(LabeledMatches {
        matches: order.iter().map(|&i| out.matches[i]).collect(),
        is_outlier: order.iter().map(|&i| out.is_outlier[i]).collect(),
        clean_x_t1: order.iter().map(|&i| out.clean_x_t1[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::synthesize_view;
    use crate::photometric::target_to_source;

    fn epipolar(f: &Matrix3<f64>, c: &Correspondence) -> f64 {
        (c.x_t1.homogeneous().transpose() * f * c.x_t.homogeneous())[0]
    }

    #[test]
    fn deterministic_given_seed() {
        let a = make_clip(SceneKind::RandomHeightfield, 3, 32, Motion::default(), 9).unwrap();
        let b = make_clip(SceneKind::RandomHeightfield, 3, 32, Motion::default(), 9).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.truth, b.truth);
        let c = make_clip(SceneKind::RandomHeightfield, 3, 32, Motion::default(), 10).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn contract_checks() {
        assert!(make_clip(SceneKind::TexturedPlane, 1, 64, Motion::default(), 0).is_err());
        assert!(make_clip(SceneKind::TexturedPlane, 2, 16, Motion::default(), 0).is_err());
        let huge = Motion { baseline: 3.0, rotation_deg: 0.0 };
        assert!(matches!(make_clip(SceneKind::RandomHeightfield, 2, 32, huge, 0), Err(Error::FrustumViolation(_))));
    }

    #[test]
    fn heightfield_depths_in_range() {
        let clip = make_clip(SceneKind::RandomHeightfield, 2, 48, Motion::default(), 3).unwrap();
        for d in &clip.truth.depths {
            assert!(d.data.iter().all(|v| *v > 0.9 && *v < 3.2));
        }
        for img in &clip.frames {
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rotation_only_has_zero_baseline_and_exact_homography() {
        let clip = make_clip(SceneKind::RotationOnly, 3, 64, Motion { baseline: 0.3, rotation_deg: 3.0 }, 4).unwrap();
        assert!(clip.truth.poses.iter().all(|p| p.translation.norm() == 0.0));
        let h = clip.scene.homography(1).unwrap();
        let lm = ground_truth_matches(&clip.scene, 1, 50, MatchNoise::default(), 1).unwrap();
        for c in &lm.matches {
            let q = h * c.x_t.homogeneous();
            let err = ((q.x / q.z - c.x_t1.u).powi(2) + (q.y / q.z - c.x_t1.v).powi(2)).sqrt();
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn plane_homography_exact() {
        let clip = make_clip(SceneKind::TexturedPlane, 2, 64, Motion { baseline: 0.15, rotation_deg: 2.0 }, 5).unwrap();
        let h = clip.scene.homography(0).unwrap();
        let lm = ground_truth_matches(&clip.scene, 0, 100, MatchNoise::default(), 2).unwrap();
        for c in &lm.matches {
            let q = h * c.x_t.homogeneous();
            let err = (q.x / q.z - c.x_t1.u).powi(2) + (q.y / q.z - c.x_t1.v).powi(2);
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn heightfield_fundamental_exact() {
        let clip = make_clip(SceneKind::RandomHeightfield, 2, 64, Motion { baseline: 0.2, rotation_deg: 2.0 }, 6).unwrap();
        let f = clip.scene.fundamental(0);
        let lm = ground_truth_matches(&clip.scene, 0, 200, MatchNoise::default(), 3).unwrap();
        for c in &lm.matches {
            let fx = f * c.x_t.homogeneous();
            let ftx = f.transpose() * c.x_t1.homogeneous();
            let e = epipolar(&f, c);
            let sampson = e * e / (fx.x * fx.x + fx.y * fx.y + ftx.x * ftx.x + ftx.y * ftx.y);
            assert!(sampson < 1e-12, "{sampson}");
        }
    }

    #[test]
    fn noise_statistics() {
        let clip = make_clip(SceneKind::RandomHeightfield, 2, 64, Motion::default(), 7).unwrap();
        let sigma = 0.5;
        let lm = ground_truth_matches(&clip.scene, 0, 4000, MatchNoise { sigma, outlier_fraction: 0.0 }, 4).unwrap();
        let mean_abs: f64 =
            lm.matches.iter().zip(&lm.clean_x_t1).map(|(c, q)| (c.x_t1.u - q.u).abs() + (c.x_t1.v - q.v).abs()).sum::<f64>() / (2.0 * lm.matches.len() as f64);
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        // Standard error of the mean of 8000 half-normal samples is ~0.0034.
        assert!((mean_abs - expected).abs() < 0.015, "{mean_abs} vs {expected}");
    }

    #[test]
    fn outlier_labels() {
        let clip = make_clip(SceneKind::RandomHeightfield, 2, 64, Motion::default(), 8).unwrap();
        let lm = ground_truth_matches(&clip.scene, 0, 100, MatchNoise { sigma: 0.0, outlier_fraction: 0.5 }, 5).unwrap();
        assert_eq!(lm.is_outlier.iter().filter(|o| **o).count(), 50);
        let f = clip.scene.fundamental(0);
        for (c, o) in lm.matches.iter().zip(&lm.is_outlier) {
            if !o {
                assert!(epipolar(&f, c).abs() < 1e-9);
            }
        }
    }

    /// Truth warps reproduce the target up to the bilinear resampling error
    /// of the smooth texture.
    #[test]
    fn stored_truth_is_self_consistent() {
        for kind in [SceneKind::TexturedPlane, SceneKind::RandomHeightfield, SceneKind::RotationOnly] {
            let clip = make_clip(kind, 3, 64, Motion::default(), 11).unwrap();
            let k = clip.truth.k;
            for (i, j) in [(0, 1), (2, 0), (1, 2)] {
                let rel = target_to_source(&clip.truth.poses, i, j);
                let (synth, mask) = synthesize_view(&clip.frames[j], &clip.truth.depths[i], &rel, &k, &k).unwrap();
                let mut max_err: f64 = 0.0;
                let mut sum = 0.0;
                let mut n = 0;
                for y in 2..62 {
                    for x in 2..62 {
                        if mask.get(x, y) {
                            for c in 0..3 {
                                let e = (synth.get(x, y, c) - clip.frames[i].get(x, y, c)).abs();
                                max_err = max_err.max(e);
                                sum += e;
                                n += 1;
                            }
                        }
                    }
                }
                assert!(n > 3000);
                assert!(max_err < 1e-2 && sum / (n as f64) < 2e-3, "{kind:?} ({i},{j}): max {max_err}, mean {}", sum / n as f64);
            }
        }
    }

    /// With a fronto-parallel plane and an integer-pixel shift the resampling
    /// is exact, so the truth warp reproduces the target to round-off.
    #[test]
    fn integer_shift_warp_is_exact() {
        let mut clip = make_clip(SceneKind::TexturedPlane, 2, 64, Motion { baseline: 0.0, rotation_deg: 0.0 }, 12).unwrap();
        let scene = &mut clip.scene;
        scene.surface = Surface::Plane { z0: 2.0, a: 0.0, b: 0.0 };
        // f = 64, depth 2: a 0.125 world-unit step is a 4 px shift.
        scene.poses[1] = Pose::from_axis_angle(Vector3::zeros(), Vector3::new(0.125, 0.0, 0.0));
        let (f0, d0) = scene.render(0).unwrap();
        let (f1, _) = scene.render(1).unwrap();
        let rel = target_to_source(&scene.poses, 0, 1);
        let k = scene.intrinsics;
        let (synth, mask) = synthesize_view(&f1, &d0, &rel, &k, &k).unwrap();
        let mut n = 0;
        for y in 0..64 {
            for x in 0..64 {
                if mask.get(x, y) {
                    n += 1;
                    for c in 0..3 {
                        assert!((synth.get(x, y, c) - f0.get(x, y, c)).abs() < 1e-6);
                    }
                }
            }
        }
        assert!(n > 3000);
    }
}
