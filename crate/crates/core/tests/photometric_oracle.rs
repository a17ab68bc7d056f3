use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmkit::geometry::{synthesize_view, DepthMap, Intrinsics, Mask, Pose};
use sfmkit::photometric::*;
use sfmkit::synth::{make_clip, Motion, SceneKind, SyntheticClip};

fn clip(kind: SceneKind, n: usize, seed: u64) -> SyntheticClip {
    make_clip(kind, n, 64, Motion { baseline: 0.1, rotation_deg: 2.0 }, seed).unwrap()
}

struct State {
    depths: Vec<DepthMap>,
    poses: Vec<Pose>,
    ks: Vec<Intrinsics>,
}

impl State {
    fn truth(c: &SyntheticClip) -> Self {
        Self { depths: c.truth.depths.clone(), poses: c.truth.poses.clone(), ks: vec![c.truth.k; c.truth.len()] }
    }

    fn loss(&self, frames: &[sfmkit::geometry::ImageBuffer]) -> f64 {
        clip_objective(frames, &self.depths, &self.poses, &self.ks, &PhotometricConfig::default()).unwrap()
    }

    /// Loss and the valid mask of every ordered pair.
    fn detailed(&self, frames: &[sfmkit::geometry::ImageBuffer]) -> (f64, Vec<Mask>) {
        let masks = ordered_pairs(frames.len())
            .into_iter()
            .map(|(i, j)| {
                let rel = target_to_source(&self.poses, i, j);
                synthesize_view(&frames[j], &self.depths[i], &rel, &self.ks[i], &self.ks[j]).unwrap().1
            })
            .collect();
        (self.loss(frames), masks)
    }
}

/// Central difference with step 1e-4. A step that moves pixels across the
/// image border changes the valid set, which is a jump rather than a slope;
/// the step is then shrunk until the valid set stays fixed.
fn central(f: impl Fn(f64) -> (f64, Vec<Mask>)) -> f64 {
    let n0 = f(0.0).1;
    let mut h = 1e-4;
    loop {
        let ((a, na), (b, nb)) = (f(h), f(-h));
        if (na == n0 && nb == n0) || h < 1e-7 {
            return (a - b) / (2.0 * h);
        }
        h /= 4.0;
    }
}

/// Moves the truth off its optimum so every gradient block is well away from zero.
fn perturbed_state(c: &SyntheticClip, rng: &mut ChaCha8Rng) -> State {
    let mut s = State::truth(c);
    for d in &mut s.depths {
        let f = rng.random_range(1.05..1.2);
        d.data.iter_mut().enumerate().for_each(|(i, v)| *v *= f * (1.0 + 0.05 * ((i as f64) * 0.37).sin()));
    }
    for p in s.poses.iter_mut().skip(1) {
        let xi = Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01));
        *p = p.perturbed(&xi);
    }
    for k in &mut s.ks {
        *k = k.with_focal(k.fx * rng.random_range(0.95..1.05), k.fy * rng.random_range(0.95..1.05));
    }
    s
}

fn check(name: &str, analytic: f64, numeric: f64, floor: f64) {
    let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
    assert!(err < 1e-3, "{name}: analytic {analytic:e} numeric {numeric:e} rel {err:e}");
}

#[test]
fn clip_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let kind = if seed % 2 == 0 { SceneKind::RandomHeightfield } else { SceneKind::TexturedPlane };
        let c = clip(kind, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = perturbed_state(&c, &mut rng);
        let cfg = PhotometricConfig::default();
        let (loss, grad) = clip_objective_with_grad(&c.frames, &s.depths, &s.poses, &s.ks, &cfg).unwrap();
        assert!((loss - s.loss(&c.frames)).abs() < 1e-12);

        let pose_floor = 1e-2 * grad.pose.iter().map(|g| g.amax()).fold(0.0, f64::max);
        for f in 0..3 {
            for k in 0..6 {
                let fd = central(|h| {
                    let mut xi = Vector6::zeros();
                    xi[k] = h;
                    let mut t = State { depths: s.depths.clone(), poses: s.poses.clone(), ks: s.ks.clone() };
                    t.poses[f] = t.poses[f].perturbed(&xi);
                    t.detailed(&c.frames)
                });
                check(&format!("seed {seed} pose {f}.{k}"), grad.pose[f][k], fd, pose_floor);
            }
            for k in 0..2 {
                let fd = central(|h| {
                    let mut t = State { depths: s.depths.clone(), poses: s.poses.clone(), ks: s.ks.clone() };
                    let e = h.exp();
                    let kk = t.ks[f];
                    t.ks[f] = if k == 0 { kk.with_focal(kk.fx * e, kk.fy) } else { kk.with_focal(kk.fx, kk.fy * e) };
                    t.detailed(&c.frames)
                });
                check(&format!("seed {seed} focal {f}.{k}"), grad.log_focal[f][k], fd, 1e-6);
            }
            let depth_floor = 1e-2 * grad.log_depth[f].iter().fold(0.0f64, |m, g| m.max(g.abs()));
            for _ in 0..8 {
                let px = rng.random_range(0..64 * 64);
                let fd = central(|h| {
                    let mut t = State { depths: s.depths.clone(), poses: s.poses.clone(), ks: s.ks.clone() };
                    t.depths[f].data[px] *= h.exp();
                    t.detailed(&c.frames)
                });
                check(&format!("seed {seed} depth {f}[{px}]"), grad.log_depth[f][px], fd, depth_floor);
            }
        }
    }
}

#[test]
fn two_frames_equal_two_pair_losses() {
    let c = clip(SceneKind::RandomHeightfield, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = perturbed_state(&c, &mut rng);
    let cfg = PhotometricConfig::default();
    let pair = |i: usize, j: usize| {
        let rel = target_to_source(&s.poses, i, j);
        let (synth, mask) = synthesize_view(&c.frames[j], &s.depths[i], &rel, &s.ks[i], &s.ks[j]).unwrap();
        pair_loss(&c.frames[i], &synth, &mask, &cfg).unwrap().value
    };
    assert_eq!(s.loss(&c.frames), pair(0, 1) + pair(1, 0));
}

#[test]
fn objective_is_small_at_ground_truth() {
    for (kind, seed) in [(SceneKind::RandomHeightfield, 0), (SceneKind::TexturedPlane, 1), (SceneKind::RandomHeightfield, 2)] {
        let c = clip(kind, 4, seed);
        let loss = State::truth(&c).loss(&c.frames);
        assert!(loss < 1e-3, "{kind:?}: {loss:e}");
    }
}

#[test]
fn objective_is_invariant_to_frame_relabeling() {
    let c = clip(SceneKind::RandomHeightfield, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = perturbed_state(&c, &mut rng);
    let base = s.loss(&c.frames);
    for perm in [[1, 0, 2, 3], [3, 2, 1, 0], [2, 3, 0, 1]] {
        let frames: Vec<_> = perm.iter().map(|&i| c.frames[i].clone()).collect();
        let t = State {
            depths: perm.iter().map(|&i| s.depths[i].clone()).collect(),
            poses: perm.iter().map(|&i| s.poses[i]).collect(),
            ks: perm.iter().map(|&i| s.ks[i]).collect(),
        };
        let l = t.loss(&frames);
        assert!((l - base).abs() <= 1e-12 * base, "{perm:?}: {l} vs {base}");
    }
}

#[test]
fn ground_truth_beats_pose_perturbations() {
    for seed in 0..2 {
        let c = clip(SceneKind::RandomHeightfield, 3, 20 + seed);
        let truth = State::truth(&c);
        let at_truth = truth.loss(&c.frames);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for trial in 0..100 {
            let frame = rng.random_range(1..3);
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let xi = if trial % 2 == 0 {
                let angle = rng.random_range(2.0f64..4.0).to_radians();
                Vector6::new(0.0, 0.0, 0.0, dir.x * angle, dir.y * angle, dir.z * angle)
            } else {
                let t = dir * rng.random_range(0.05..0.15) * c.scene.depth_scale;
                Vector6::new(t.x, t.y, t.z, 0.0, 0.0, 0.0)
            };
            let mut s = State { depths: truth.depths.clone(), poses: truth.poses.clone(), ks: truth.ks.clone() };
            s.poses[frame] = s.poses[frame].perturbed(&xi);
            let l = s.loss(&c.frames);
            assert!(at_truth < l, "seed {seed} trial {trial}: truth {at_truth:e} perturbed {l:e}");
        }
    }
}
