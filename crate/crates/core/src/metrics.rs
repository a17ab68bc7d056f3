//! Depth, trajectory and focal-length evaluation.

use nalgebra::{Matrix3, Vector3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::PredictionSet;
use crate::error::{contract, Result};
use crate::geometry::{rotation_angle, DepthMap, Mask, Pose};
use crate::stats::{mean, median};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthScaling {
    /// Multiply predictions by `median(gt) / median(pred)` over valid pixels.
    #[default]
    Median,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthEvalConfig {
    pub min_depth: f64,
    pub max_depth: f64,
    pub scaling: DepthScaling,
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        Self { min_depth: 1e-3, max_depth: 80.0, scaling: DepthScaling::Median }
    }
}

impl DepthEvalConfig {
    /// Indoor cap.
    pub fn indoor() -> Self {
        Self { max_depth: 10.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth && self.max_depth.is_finite()) {
            return Err(contract(format!("need 0 < min_depth < max_depth, got {} and {}", self.min_depth, self.max_depth)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl DepthMetrics {
    fn mean_of(all: &[DepthMetrics]) -> DepthMetrics {
        let m = |f: fn(&DepthMetrics) -> f64| mean(&all.iter().map(f).collect::<Vec<_>>());
        DepthMetrics {
            abs_rel: m(|d| d.abs_rel),
            sq_rel: m(|d| d.sq_rel),
            rmse: m(|d| d.rmse),
            rmse_log: m(|d| d.rmse_log),
            d1: m(|d| d.d1),
            d2: m(|d| d.d2),
            d3: m(|d| d.d3),
        }
    }
}

/// Standard depth errors over the valid pixels. `δ_k` uses the strict
/// `max(d̂/d, d/d̂) < 1.25^k`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, valid: &Mask, cfg: &DepthEvalConfig) -> Result<DepthMetrics> {
    cfg.validate()?;
    if (pred.width, pred.height) != (gt.width, gt.height) || (valid.width, valid.height) != (gt.width, gt.height) {
        return Err(contract("prediction, ground truth and mask must have the same dimensions"));
    }
    let idx: Vec<usize> = (0..gt.data.len()).filter(|&i| valid.data[i]).collect();
    if idx.is_empty() {
        return Err(contract("the valid mask is empty"));
    }
    if let Some(&i) = idx.iter().find(|&&i| !(gt.data[i] > 0.0 && gt.data[i].is_finite())) {
        return Err(contract(format!("ground truth must be positive on valid pixels, found {}", gt.data[i])));
    }
    let g: Vec<f64> = idx.iter().map(|&i| gt.data[i]).collect();
    let mut p: Vec<f64> = idx.iter().map(|&i| pred.data[i]).collect();
    if cfg.scaling == DepthScaling::Median {
        let s = median(&g) / median(&p);
        p.iter_mut().for_each(|v| *v *= s);
    }
    p.iter_mut().for_each(|v| *v = v.clamp(cfg.min_depth, cfg.max_depth));
    let n = g.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    for (&d, &e) in g.iter().zip(&p) {
        let diff = e - d;
        abs_rel += diff.abs() / d;
        sq_rel += diff * diff / d;
        sq += diff * diff;
        sq_log += (e.ln() - d.ln()).powi(2);
        let ratio = (e / d).max(d / e);
        for (k, w) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *w += 1;
            }
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        d1: within[0] as f64 / n,
        d2: within[1] as f64 / n,
        d3: within[2] as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Rotation, translation and scale.
    #[default]
    Sim3,
    /// Rotation and translation only.
    Se3,
}

/// `x -> s R x + t`, fitted from predicted to ground-truth points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// The points were collinear (or coincident), so the rotation about the
    /// common line is unconstrained and the fallback fit was used.
    pub degenerate: bool,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Rotation taking unit vector `a` onto unit vector `b`.
fn rotation_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let axis = a.cross(b);
    let (s, c) = (axis.norm(), a.dot(b));
    if s < 1e-12 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        // Half turn about any axis orthogonal to `a`.
        let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let n = a.cross(&helper).normalize();
        return 2.0 * n * n.transpose() - Matrix3::identity();
    }
    crate::geometry::so3_exp(&(axis / s * s.atan2(c)))
}

/// Closed-form least-squares alignment of `src` onto `dst` (Umeyama). Falls
/// back to aligning the principal directions with a norm-ratio scale when
/// the source points are collinear.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(contract(format!("alignment needs two equal-length point sets of at least 2, got {} and {}", src.len(), dst.len())));
    }
    let (mu_s, mu_d) = (centroid(src), centroid(dst));
    let n = src.len() as f64;
    let sc: Vec<Vector3<f64>> = src.iter().map(|p| p - mu_s).collect();
    let dc: Vec<Vector3<f64>> = dst.iter().map(|p| p - mu_d).collect();
    let var_s = sc.iter().map(|p| p.norm_squared()).sum::<f64>() / n;
    let var_d = dc.iter().map(|p| p.norm_squared()).sum::<f64>() / n;
    let cov: Matrix3<f64> = dc.iter().zip(&sc).map(|(d, s)| d * s.transpose()).sum::<Matrix3<f64>>() / n;

    let spread = SVD::new(sc.iter().map(|p| p * p.transpose()).sum::<Matrix3<f64>>(), false, false).singular_values;
    let collinear = var_s <= 1e-300 || spread[1] <= 1e-12 * spread[0];
    if collinear {
        let scale = if with_scale && var_s > 1e-300 { (var_d / var_s).sqrt() } else { 1.0 };
        let principal = |pts: &[Vector3<f64>]| -> Option<Vector3<f64>> {
            let m: Matrix3<f64> = pts.iter().map(|p| p * p.transpose()).sum();
            let eig = m.symmetric_eigen();
            let i = eig.eigenvalues.imax();
            (eig.eigenvalues[i] > 1e-300).then(|| eig.eigenvectors.column(i).into_owned())
        };
        let rotation = match (principal(&sc), principal(&dc)) {
            (Some(a), Some(b)) => {
                // Orient the destination axis so the point orders agree.
                let sign: f64 = sc.iter().zip(&dc).map(|(s, d)| s.dot(&a) * d.dot(&b)).sum();
                rotation_between(&a, &if sign < 0.0 { -b } else { b })
            }
            _ => Matrix3::identity(),
        };
        let translation = mu_d - scale * (rotation * mu_s);
        return Ok(Similarity { scale, rotation, translation, degenerate: true });
    }

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale { (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s } else { 1.0 };
    let translation = mu_d - scale * (rotation * mu_s);
    Ok(Similarity { scale, rotation, translation, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteReport {
    pub ate: f64,
    pub alignment: Similarity,
}

/// Absolute trajectory error: RMSE of camera-center distances after aligning
/// the predicted centers to the ground truth.
pub fn ate_with(pred: &[Pose], gt: &[Pose], align: Alignment) -> Result<AteReport> {
    if pred.len() != gt.len() || pred.len() < 2 {
        return Err(contract(format!("trajectories must have equal lengths of at least 2, got {} and {}", pred.len(), gt.len())));
    }
    let src: Vec<Vector3<f64>> = pred.iter().map(Pose::center).collect();
    let dst: Vec<Vector3<f64>> = gt.iter().map(Pose::center).collect();
    let alignment = umeyama(&src, &dst, align == Alignment::Sim3)?;
    let sq = src.iter().zip(&dst).map(|(s, d)| (alignment.apply(s) - d).norm_squared()).sum::<f64>();
    Ok(AteReport { ate: (sq / src.len() as f64).sqrt(), alignment })
}

pub fn ate(pred: &[Pose], gt: &[Pose]) -> Result<f64> {
    Ok(ate_with(pred, gt, Alignment::Sim3)?.ate)
}

/// Relative pose error over steps of `delta` frames: `(rpe_t, rpe_r)`, with
/// `rpe_r` in degrees. Predicted translations are scaled by `scale` first.
pub fn rpe_scaled(pred: &[Pose], gt: &[Pose], delta: usize, scale: f64) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(contract(format!("trajectory lengths differ: {} and {}", pred.len(), gt.len())));
    }
    if delta == 0 || pred.len() < delta + 1 {
        return Err(contract(format!("need delta >= 1 and at least delta + 1 poses, got delta {delta} and {} poses", pred.len())));
    }
    let scaled = |p: &Pose| Pose { rotation: p.rotation, translation: p.translation * scale };
    let (mut t_sq, mut r_sq) = (0.0, 0.0);
    let steps = pred.len() - delta;
    for k in 0..steps {
        let g = gt[k].inverse() * gt[k + delta];
        let p = scaled(&pred[k]).inverse() * scaled(&pred[k + delta]);
        let e = g.inverse() * p;
        t_sq += e.translation.norm_squared();
        r_sq += rotation_angle(&e.rotation).to_degrees().powi(2);
    }
    Ok(((t_sq / steps as f64).sqrt(), (r_sq / steps as f64).sqrt()))
}

/// [`rpe_scaled`] with the scale of the Sim(3) trajectory alignment.
pub fn rpe(pred: &[Pose], gt: &[Pose], delta: usize) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(contract(format!("trajectory lengths differ: {} and {}", pred.len(), gt.len())));
    }
    let scale = ate_with(pred, gt, Alignment::Sim3)?.alignment.scale;
    rpe_scaled(pred, gt, delta, scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    pub ate: f64,
    pub rpe_t: f64,
    pub rpe_r: f64,
}

pub fn trajectory_metrics(pred: &[Pose], gt: &[Pose], delta: usize, align: Alignment) -> Result<TrajectoryEval> {
    let report = ate_with(pred, gt, align)?;
    let (rpe_t, rpe_r) = rpe_scaled(pred, gt, delta, report.alignment.scale)?;
    Ok(TrajectoryEval { ate: report.ate, rpe_t, rpe_r })
}

/// `(afe, rfe)`: absolute focal error in pixels and relative focal error.
pub fn focal_errors(pred_fx: f64, gt_fx: f64) -> Result<(f64, f64)> {
    if !(gt_fx > 0.0 && gt_fx.is_finite()) || !pred_fx.is_finite() {
        return Err(contract(format!("need a positive ground-truth focal and a finite prediction, got {pred_fx} and {gt_fx}")));
    }
    let afe = (pred_fx - gt_fx).abs();
    Ok((afe, afe / gt_fx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub depth: DepthEvalConfig,
    pub align: Alignment,
    pub rpe_delta: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { depth: DepthEvalConfig::default(), align: Alignment::Sim3, rpe_delta: 1 }
    }
}

/// Metrics of one clip; depth errors are means over frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub depth: DepthMetrics,
    pub trajectory: TrajectoryEval,
    pub afe: f64,
    pub rfe: f64,
}

pub fn evaluate_clip(clip_id: &str, pred: &PredictionSet, gt: &PredictionSet, cfg: &EvalConfig) -> Result<ClipMetrics> {
    pred.validate()?;
    gt.validate()?;
    if pred.len() != gt.len() {
        return Err(contract(format!("clip '{clip_id}': {} predicted frames but {} ground-truth frames", pred.len(), gt.len())));
    }
    let per_frame =
        pred.depths.iter().zip(&gt.depths).map(|(p, g)| depth_metrics(p, g, &Mask::full(g.height, g.width), &cfg.depth)).collect::<Result<Vec<_>>>()?;
    let trajectory = trajectory_metrics(&pred.poses, &gt.poses, cfg.rpe_delta, cfg.align)?;
    let (afe, rfe) = focal_errors(pred.k.fx, gt.k.fx)?;
    Ok(ClipMetrics { clip_id: clip_id.to_string(), depth: DepthMetrics::mean_of(&per_frame), trajectory, afe, rfe })
}

/// Per-clip metrics plus their means over clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub clips: Vec<ClipMetrics>,
    pub depth: DepthMetrics,
    pub trajectory: TrajectoryEval,
    pub afe: f64,
    pub rfe: f64,
}

pub fn evaluate_corpus(items: &[(String, PredictionSet, PredictionSet)], cfg: &EvalConfig) -> Result<CorpusMetrics> {
    if items.is_empty() {
        return Err(contract("nothing to evaluate"));
    }
    let clips = items.par_iter().map(|(id, pred, gt)| evaluate_clip(id, pred, gt, cfg)).collect::<Vec<_>>().into_iter().collect::<Result<Vec<_>>>()?;
    let depth = DepthMetrics::mean_of(&clips.iter().map(|c| c.depth).collect::<Vec<_>>());
    let m = |f: fn(&ClipMetrics) -> f64| mean(&clips.iter().map(f).collect::<Vec<_>>());
    let trajectory = TrajectoryEval { ate: m(|c| c.trajectory.ate), rpe_t: m(|c| c.trajectory.rpe_t), rpe_r: m(|c| c.trajectory.rpe_r) };
    let (afe, rfe) = (m(|c| c.afe), m(|c| c.rfe));
    Ok(CorpusMetrics { clips, depth, trajectory, afe, rfe })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use proptest::prelude::*;

    fn map(values: &[f64]) -> DepthMap {
        DepthMap::new(1, values.len(), values.to_vec()).unwrap()
    }

    fn none() -> DepthEvalConfig {
        DepthEvalConfig { scaling: DepthScaling::None, ..Default::default() }
    }

    #[test]
    fn depth_fixtures() {
        let gt = map(&[1.0, 2.0, 4.0, 8.0]);
        let full = Mask::full(1, 4);
        let same = depth_metrics(&gt, &gt, &full, &DepthEvalConfig::default()).unwrap();
        assert_eq!((same.abs_rel, same.rmse, same.d1), (0.0, 0.0, 1.0));

        let pred = gt.scaled(1.1);
        let scaled = depth_metrics(&pred, &gt, &full, &DepthEvalConfig::default()).unwrap();
        assert!(scaled.abs_rel < 1e-12);
        let raw = depth_metrics(&pred, &gt, &full, &none()).unwrap();
        assert!((raw.abs_rel - 0.1).abs() < 1e-12);
        assert_eq!((raw.d1, raw.d2, raw.d3), (1.0, 1.0, 1.0));
        // SqRel = mean(0.01 d), RMSE = 0.1 sqrt(mean d^2), RMSE log = ln 1.1.
        assert!((raw.sq_rel - 0.01 * 15.0 / 4.0).abs() < 1e-12);
        assert!((raw.rmse - 0.1 * (85.0f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!((raw.rmse_log - 1.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn delta_thresholds_are_strict() {
        let gt = map(&[1.0, 1.0, 1.0, 1.0]);
        let pred = map(&[1.25, 1.3, 1.6, 2.5]);
        let m = depth_metrics(&pred, &gt, &Mask::full(1, 4), &none()).unwrap();
        assert_eq!(m.d1, 0.0);
        assert_eq!(m.d2, 0.5);
        assert_eq!(m.d3, 0.75);
    }

    #[test]
    fn depth_contracts_and_clamp() {
        let gt = map(&[1.0, 2.0]);
        assert!(depth_metrics(&gt, &gt, &Mask::empty(1, 2), &none()).is_err());
        assert!(depth_metrics(&gt, &map(&[1.0]), &Mask::full(1, 2), &none()).is_err());
        let bad = DepthEvalConfig { min_depth: 2.0, max_depth: 1.0, ..none() };
        assert!(depth_metrics(&gt, &gt, &Mask::full(1, 2), &bad).is_err());
        // A prediction beyond the cap is clamped.
        let capped = DepthEvalConfig { max_depth: 10.0, ..none() };
        let m = depth_metrics(&map(&[1.0, 50.0]), &map(&[1.0, 10.0]), &Mask::full(1, 2), &capped).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        // Masked pixels are ignored.
        let mask = Mask { height: 1, width: 2, data: vec![true, false] };
        let m = depth_metrics(&map(&[1.0, 3.0]), &map(&[1.0, 1.0]), &mask, &none()).unwrap();
        assert_eq!(m.abs_rel, 0.0);
    }

    #[test]
    fn focal_fixtures() {
        assert_eq!(focal_errors(100.0, 100.0).unwrap(), (0.0, 0.0));
        let (afe, rfe) = focal_errors(110.0, 100.0).unwrap();
        assert!((afe - 10.0).abs() < 1e-12 && (rfe - 0.1).abs() < 1e-12);
        let (afe, rfe) = focal_errors(90.0, 100.0).unwrap();
        assert!((afe - 10.0).abs() < 1e-12 && (rfe - 0.1).abs() < 1e-12);
        assert!(focal_errors(1.0, 0.0).is_err());
    }

    fn line_trajectory(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose::from_axis_angle(Vector3::new(0.0, 0.0, 0.02 * i as f64), Vector3::new(i as f64, 0.1 * (i * i) as f64, 0.3 * (i as f64).sin())))
            .collect()
    }

    #[test]
    fn ate_fixtures() {
        let gt = line_trajectory(10);
        assert!(ate(&gt, &gt).unwrap() < 1e-12);
        let scaled: Vec<Pose> = gt.iter().map(|p| Pose { rotation: p.rotation, translation: p.translation * 3.5 }).collect();
        assert!(ate(&scaled, &gt).unwrap() < 1e-9);
        assert!(ate_with(&scaled, &gt, Alignment::Se3).unwrap().ate > 1.0);
        assert!(ate(&gt[..1], &gt[..1]).is_err());
        assert!(ate(&gt, &gt[..5]).is_err());
    }

    fn grid_search_ate(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        // For a fixed rotation the optimal scale and translation are closed
        // form; search the rotation over a shrinking grid of axis-angle vectors.
        let (mu_s, mu_d) = (centroid(src), centroid(dst));
        let cost = |w: &Vector3<f64>| {
            let r = so3_exp(w);
            let rs: Vec<Vector3<f64>> = src.iter().map(|p| r * (p - mu_s)).collect();
            let s = rs.iter().zip(dst).map(|(a, d)| a.dot(&(d - mu_d))).sum::<f64>() / rs.iter().map(|a| a.norm_squared()).sum::<f64>();
            (rs.iter().zip(dst).map(|(a, d)| (s * a - (d - mu_d)).norm_squared()).sum::<f64>() / src.len() as f64).sqrt()
        };
        let mut best = Vector3::zeros();
        let mut best_cost = cost(&best);
        let mut step = 0.5;
        for _ in 0..40 {
            let centre = best;
            for i in -3..=3 {
                for j in -3..=3 {
                    for k in -3..=3 {
                        let w = centre + Vector3::new(i as f64, j as f64, k as f64) * step;
                        let c = cost(&w);
                        if c < best_cost {
                            best_cost = c;
                            best = w;
                        }
                    }
                }
            }
            step *= 0.5;
        }
        best_cost
    }

    #[test]
    fn ate_matches_grid_search_with_one_offset_center() {
        let gt = line_trajectory(10);
        let mut pred = gt.clone();
        pred[4].translation += Vector3::new(1.0, 0.0, 0.0);
        let closed = ate(&pred, &gt).unwrap();
        let src: Vec<Vector3<f64>> = pred.iter().map(Pose::center).collect();
        let dst: Vec<Vector3<f64>> = gt.iter().map(Pose::center).collect();
        let searched = grid_search_ate(&src, &dst);
        assert!(closed > 0.0);
        assert!(closed <= searched + 1e-12, "{closed} vs {searched}");
        assert!(searched - closed < 1e-6, "{closed} vs {searched}");
    }

    #[test]
    fn collinear_centers_use_the_fallback() {
        let gt: Vec<Pose> = (0..4).map(|i| Pose::from_axis_angle(Vector3::zeros(), Vector3::new(i as f64, 0.0, 0.0))).collect();
        let pred: Vec<Pose> = (0..4).map(|i| Pose::from_axis_angle(Vector3::zeros(), Vector3::new(0.0, 0.0, 2.0 * i as f64 + 1.0))).collect();
        let report = ate_with(&pred, &gt, Alignment::Sim3).unwrap();
        assert!(report.alignment.degenerate);
        assert!((report.alignment.scale - 0.5).abs() < 1e-12);
        assert!(report.ate < 1e-12);
        let two = ate_with(&pred[..2], &gt[..2], Alignment::Sim3).unwrap();
        assert!(two.alignment.degenerate && two.ate < 1e-12);
    }

    #[test]
    fn rpe_fixtures() {
        let gt = line_trajectory(6);
        let (t, r) = rpe(&gt, &gt, 1).unwrap();
        assert!(t < 1e-12 && r < 1e-9);
        // One extra degree of z-rotation per step.
        let pred: Vec<Pose> = gt
            .iter()
            .enumerate()
            .map(|(i, p)| Pose { rotation: p.rotation * so3_exp(&Vector3::new(0.0, 0.0, (i as f64).to_radians())), translation: p.translation })
            .collect();
        let (_, rpe_r) = rpe(&pred, &gt, 1).unwrap();
        assert!((rpe_r - 1.0).abs() < 1e-9, "{rpe_r}");
        assert!(rpe(&gt, &gt[..3], 1).is_err());
        assert!(rpe(&gt[..2], &gt[..2], 2).is_err());
    }

    #[test]
    fn rpe_hand_case() {
        let rz = so3_exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let at = |x: f64| Vector3::new(x, 0.0, 0.0);
        let gt =
            vec![Pose::identity(), Pose { rotation: Matrix3::identity(), translation: at(1.0) }, Pose { rotation: Matrix3::identity(), translation: at(2.0) }];
        let pred = vec![Pose::identity(), Pose { rotation: rz, translation: at(1.0) }, Pose { rotation: rz, translation: at(2.0) }];
        // Step errors: a 90 degree turn with no translation, then a pure
        // translation (-1, -1, 0).
        let (t, r) = rpe(&pred, &gt, 1).unwrap();
        assert!((t - 1.0).abs() < 1e-12, "{t}");
        assert!((r - 90.0 / 2f64.sqrt()).abs() < 1e-9, "{r}");
    }

    fn random_trajectory() -> impl Strategy<Value = Vec<Pose>> {
        prop::collection::vec((prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(-5.0f64..5.0)), 3..12)
            .prop_map(|v| v.into_iter().map(|(w, t)| Pose::from_axis_angle(Vector3::from(w), Vector3::from(t))).collect())
    }

    proptest! {
        #[test]
        fn ate_is_sim3_invariant(gt in random_trajectory(), noise in prop::collection::vec(prop::array::uniform3(-0.3f64..0.3), 12),
                                 w in prop::array::uniform3(-3.0f64..3.0), t in prop::array::uniform3(-10.0f64..10.0), s in 0.1f64..10.0) {
            let pred: Vec<Pose> = gt.iter().zip(&noise).map(|(p, n)| Pose { rotation: p.rotation, translation: p.translation + Vector3::from(*n) }).collect();
            let base = ate(&pred, &gt).unwrap();
            let (r, t) = (so3_exp(&Vector3::from(w)), Vector3::from(t));
            let moved: Vec<Pose> = pred.iter().map(|p| Pose { rotation: r * p.rotation, translation: s * (r * p.translation) + t }).collect();
            let after = ate(&moved, &gt).unwrap();
            prop_assert!((after - base).abs() < 1e-9, "{} vs {}", base, after);
        }

        #[test]
        fn deltas_are_ordered_and_median_scaling_is_scale_free(values in prop::collection::vec((0.5f64..20.0, 0.5f64..20.0), 1..50), s in 0.1f64..10.0) {
            let gt = map(&values.iter().map(|v| v.0).collect::<Vec<_>>());
            let pred = map(&values.iter().map(|v| v.1).collect::<Vec<_>>());
            let mask = Mask::full(1, values.len());
            let cfg = DepthEvalConfig::default();
            let m = depth_metrics(&pred, &gt, &mask, &cfg).unwrap();
            prop_assert!(m.d1 <= m.d2 && m.d2 <= m.d3);
            let k = depth_metrics(&pred.scaled(s), &gt, &mask, &cfg).unwrap();
            prop_assert!((m.abs_rel - k.abs_rel).abs() < 1e-9);
            prop_assert!((m.rmse - k.rmse).abs() < 1e-9);
        }

        #[test]
        fn corpus_means_ignore_order(fx in prop::collection::vec(50.0f64..150.0, 2..6)) {
            let clip = |f: f64| {
                let k = crate::geometry::Intrinsics::centered(f, f, 4, 4).unwrap();
                let poses = line_trajectory(3);
                PredictionSet { depths: vec![DepthMap::filled(4, 4, 2.0); 3], poses, k }
            };
            let gt = clip(100.0);
            let items: Vec<(String, PredictionSet, PredictionSet)> = fx.iter().enumerate().map(|(i, &f)| (format!("c{i}"), clip(f), gt.clone())).collect();
            let mut reversed = items.clone();
            reversed.reverse();
            let a = evaluate_corpus(&items, &EvalConfig::default()).unwrap();
            let b = evaluate_corpus(&reversed, &EvalConfig::default()).unwrap();
            prop_assert!((a.afe - b.afe).abs() < 1e-12 && (a.rfe - b.rfe).abs() < 1e-12);
        }
    }
}
