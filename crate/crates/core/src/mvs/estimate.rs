//! Two-view models: fundamental matrix and homography, their residuals, and
//! robust estimation.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Correspondence;
use crate::error::{contract, Error, Result};
use crate::geometry::Pixel;
use crate::stats::median;

/// Returned by [`homography_error`] when a transferred point lands at infinity.
pub const TRANSFER_SENTINEL: f64 = 1e12;

/// A residual and whether its evaluation hit a degenerate configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub value: f64,
    pub degenerate: bool,
}

/// Rank-2 fundamental matrix with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Projects `m` onto rank 2 and scales it to unit Frobenius norm.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(contract("fundamental matrix has non-finite entries"));
        }
        let mut svd = m.svd(true, true);
        let (i_min, _) = svd.singular_values.argmin();
        svd.singular_values[i_min] = 0.0;
        let r = svd.recompose().map_err(|e| contract(e.to_string()))?;
        let norm = r.norm();
        if !(norm > 0.0) {
            return Err(Error::DegenerateF("zero matrix".into()));
        }
        Ok(Self(r / norm))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Invertible homography, scaled so the bottom-right entry is 1 (unit
/// Frobenius norm when that entry is near zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(contract("homography has non-finite entries"));
        }
        let norm = m.norm();
        if !(norm > 0.0) {
            return Err(Error::DegenerateH("zero matrix".into()));
        }
        let m = if m[(2, 2)].abs() > 1e-8 * norm { m / m[(2, 2)] } else { m / norm };
        let sv = m.singular_values();
        if !(sv.min() > 1e-12 * sv.max()) {
            return Err(Error::DegenerateH("singular matrix".into()));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    fn inverse(&self) -> Matrix3<f64> {
        self.0.try_inverse().expect("invertibility checked on construction")
    }
}

/// Sampson distance of `m` to `f`, in squared pixels. Scale invariant in `f`.
pub fn epipolar_error(m: &Correspondence, f: &FundamentalMatrix) -> Residual {
    sampson(m, f.matrix())
}

fn sampson(m: &Correspondence, f: &Matrix3<f64>) -> Residual {
    let x = m.x_t.homogeneous();
    let xp = m.x_t1.homogeneous();
    let fx = f * x;
    let ftxp = f.transpose() * xp;
    let num = xp.dot(&fx);
    let den = fx.x * fx.x + fx.y * fx.y + ftxp.x * ftxp.x + ftxp.y * ftxp.y;
    // The threshold is relative to the scale of F so the result is scale invariant.
    let scale = f.norm_squared();
    if den < 1e-12 * scale {
        return Residual { value: 0.0, degenerate: true };
    }
    Residual { value: num * num / den, degenerate: false }
}

/// Symmetric transfer error `|x' - π(Hx)|² + |x - π(H⁻¹x')|²`.
pub fn homography_error(m: &Correspondence, h: &Homography) -> Residual {
    transfer(m, h.matrix(), &h.inverse())
}

fn transfer(m: &Correspondence, h: &Matrix3<f64>, h_inv: &Matrix3<f64>) -> Residual {
    let dist = |a: Vector3<f64>, target: Pixel| -> Option<f64> {
        if a.z.abs() < 1e-12 {
            return None;
        }
        let (u, v) = (a.x / a.z, a.y / a.z);
        Some((u - target.u).powi(2) + (v - target.v).powi(2))
    };
    match (dist(h * m.x_t.homogeneous(), m.x_t1), dist(h_inv * m.x_t1.homogeneous(), m.x_t)) {
        (Some(a), Some(b)) => Residual { value: a + b, degenerate: false },
        _ => Residual { value: TRANSFER_SENTINEL, degenerate: true },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Probability of drawing at least one clean sample, for the adaptive exit.
    pub confidence: f64,
    /// Inlier threshold on the Sampson distance, squared pixels.
    pub f_threshold: f64,
    /// Inlier threshold on the symmetric transfer error, squared pixels.
    pub h_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { max_iterations: 1000, confidence: 0.999, f_threshold: 1.0, h_threshold: 2.0, seed: 0 }
    }
}

/// Similarity taking points to zero centroid and mean distance √2.
fn normalizer(points: &[Pixel]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (cu, cv) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.u / n, b + p.v / n));
    let d = points.iter().map(|p| ((p.u - cu).powi(2) + (p.v - cv).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cu, 0.0, s, -s * cv, 0.0, 0.0, 1.0)
}

/// Right singular vector of the smallest singular value of the weighted rows.
fn null_vector(rows: &[[f64; 9]], weights: Option<&[f64]>) -> Option<[f64; 9]> {
    // Padding to at least 9 rows keeps the full right singular basis.
    let n = rows.len().max(9);
    let mut a = DMatrix::<f64>::zeros(n, 9);
    for (i, r) in rows.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        for j in 0..9 {
            a[(i, j)] = w * r[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (i_min, _) = svd.singular_values.argmin();
    let row = v_t.row(i_min);
    let out: [f64; 9] = std::array::from_fn(|j| row[j]);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn from_rows(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
}

fn apply(t: &Matrix3<f64>, p: Pixel) -> Pixel {
    let q = t * p.homogeneous();
    Pixel::new(q.x / q.z, q.y / q.z)
}

/// Normalized 8-point fit (weighted least squares when `weights` is given).
fn fit_fundamental(matches: &[Correspondence], weights: Option<&[f64]>) -> Option<Matrix3<f64>> {
    let t1 = normalizer(&matches.iter().map(|m| m.x_t).collect::<Vec<_>>());
    let t2 = normalizer(&matches.iter().map(|m| m.x_t1).collect::<Vec<_>>());
    let rows: Vec<[f64; 9]> = matches
        .iter()
        .map(|m| {
            let a = apply(&t1, m.x_t);
            let b = apply(&t2, m.x_t1);
            [b.u * a.u, b.u * a.v, b.u, b.v * a.u, b.v * a.v, b.v, a.u, a.v, 1.0]
        })
        .collect();
    let f = from_rows(&null_vector(&rows, weights)?);
    let mut svd = f.svd(true, true);
    let (i_min, _) = svd.singular_values.argmin();
    svd.singular_values[i_min] = 0.0;
    let f = svd.recompose().ok()?;
    let f = t2.transpose() * f * t1;
    let norm = f.norm();
    (norm > 0.0 && f.iter().all(|v| v.is_finite())).then(|| f / norm)
}

/// Normalized DLT fit (weighted least squares when `weights` is given).
fn fit_homography(matches: &[Correspondence], weights: Option<&[f64]>) -> Option<Matrix3<f64>> {
    let t1 = normalizer(&matches.iter().map(|m| m.x_t).collect::<Vec<_>>());
    let t2 = normalizer(&matches.iter().map(|m| m.x_t1).collect::<Vec<_>>());
    let mut rows = Vec::with_capacity(2 * matches.len());
    let mut w2 = Vec::with_capacity(2 * matches.len());
    for (i, m) in matches.iter().enumerate() {
        let a = apply(&t1, m.x_t);
        let b = apply(&t2, m.x_t1);
        rows.push([0.0, 0.0, 0.0, -a.u, -a.v, -1.0, b.v * a.u, b.v * a.v, b.v]);
        rows.push([a.u, a.v, 1.0, 0.0, 0.0, 0.0, -b.u * a.u, -b.u * a.v, -b.u]);
        let w = weights.map_or(1.0, |w| w[i]);
        w2.extend([w, w]);
    }
    let h = from_rows(&null_vector(&rows, Some(&w2))?);
    let h = t2.try_inverse()? * h * t1;
    h.iter().all(|v| v.is_finite()).then_some(h)
}

/// Model-specific hooks for the shared RANSAC loop.
struct Model {
    sample_size: usize,
    threshold: f64,
    fit: fn(&[Correspondence], Option<&[f64]>) -> Option<Matrix3<f64>>,
    error: fn(&Correspondence, &Matrix3<f64>) -> f64,
}

fn sampson_value(m: &Correspondence, f: &Matrix3<f64>) -> f64 {
    let r = sampson(m, f);
    if r.degenerate {
        f64::INFINITY
    } else {
        r.value
    }
}

fn transfer_value(m: &Correspondence, h: &Matrix3<f64>) -> f64 {
    match h.try_inverse() {
        Some(inv) => transfer(m, h, &inv).value,
        None => f64::INFINITY,
    }
}

/// Inlier count and truncated cost of `m` over all matches.
fn consensus(matches: &[Correspondence], model: &Model, m: &Matrix3<f64>) -> (usize, f64) {
    matches.iter().fold((0usize, 0.0), |(c, s), x| {
        let e = (model.error)(x, m);
        if e < model.threshold {
            (c + 1, s + e)
        } else {
            (c, s + model.threshold)
        }
    })
}

/// Refits `m` on resampled subsets of its consensus set and by Cauchy
/// weights; keeps whichever hypothesis has the lowest truncated cost.
fn local_optimization(matches: &[Correspondence], model: &Model, m: Matrix3<f64>, rng: &mut ChaCha8Rng) -> (usize, f64, Matrix3<f64>) {
    let (count, cost) = consensus(matches, model, &m);
    let mut best = (count, cost, m);
    for _ in 0..LO_ROUNDS {
        let set: Vec<Correspondence> = matches.iter().filter(|x| (model.error)(x, &best.2) < model.threshold).copied().collect();
        if set.len() <= model.sample_size {
            break;
        }
        let mut candidates = Vec::new();
        let k = (2 * model.sample_size).min(set.len() - 1);
        for _ in 0..LO_SAMPLES {
            let subset: Vec<Correspondence> = sample(rng, set.len(), k).iter().map(|i| set[i]).collect();
            candidates.extend((model.fit)(&subset, None));
        }
        let errors: Vec<f64> = set.iter().map(|x| (model.error)(x, &best.2)).collect();
        let scale = median(&errors).max(f64::MIN_POSITIVE);
        let weights: Vec<f64> = errors.iter().map(|e| 1.0 / (1.0 + e / scale)).collect();
        candidates.extend((model.fit)(&set, Some(&weights)));
        let before = best.1;
        for c in candidates {
            let (count, cost) = consensus(matches, model, &c);
            if cost < best.1 {
                best = (count, cost, c);
            }
        }
        if best.1 >= before {
            break;
        }
    }
    best
}

const LO_ROUNDS: usize = 5;
const LO_SAMPLES: usize = 10;

/// MSAC consensus search with local optimization of every new best
/// hypothesis, then a Cauchy-weighted refit on the consensus set.
fn ransac(matches: &[Correspondence], cfg: &RansacConfig, model: &Model) -> Option<(Matrix3<f64>, Vec<bool>)> {
    let n = matches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Matrix3<f64>)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.min(cfg.max_iterations) {
        it += 1;
        let idx = sample(&mut rng, n, model.sample_size);
        let subset: Vec<Correspondence> = idx.iter().map(|i| matches[i]).collect();
        let Some(m) = (model.fit)(&subset, None) else { continue };
        let (_, cost) = consensus(matches, model, &m);
        if best.as_ref().is_some_and(|b| cost >= b.1) {
            continue;
        }
        let refined = local_optimization(matches, model, m, &mut rng);
        if best.as_ref().is_none_or(|b| refined.1 < b.1) {
            let w = refined.0 as f64 / n as f64;
            best = Some(refined);
            let p_fail = 1.0 - w.powi(model.sample_size as i32);
            needed = if p_fail <= 0.0 {
                0
            } else if p_fail >= 1.0 {
                cfg.max_iterations
            } else {
                ((1.0 - cfg.confidence).ln() / p_fail.ln()).ceil().max(0.0) as usize
            };
        }
    }
    let (count, _, mut current) = best?;
    // A loose threshold admits outliers that happen to sit near the model,
    // and the truncated cost can then prefer a slightly wrong model that
    // admits more of them. Among hypotheses drawn from the consensus set,
    // keep the one with the smallest median residual over it.
    let rank = count.div_ceil(2).max(model.sample_size);
    let order_stat = |m: &Matrix3<f64>| {
        let mut e: Vec<f64> = matches.iter().map(|x| (model.error)(x, m)).collect();
        let (_, v, _) = e.select_nth_unstable_by(rank - 1, f64::total_cmp);
        *v
    };
    let set: Vec<Correspondence> = matches.iter().filter(|x| (model.error)(x, &current) < model.threshold).copied().collect();
    if set.len() > model.sample_size {
        let mut score = order_stat(&current);
        for _ in 0..REFINE_SAMPLES {
            let subset: Vec<Correspondence> = sample(&mut rng, set.len(), model.sample_size).iter().map(|i| set[i]).collect();
            let Some(m) = (model.fit)(&subset, None) else { continue };
            let s = order_stat(&m);
            if s < score {
                score = s;
                current = m;
            }
        }
    }
    let flags = |m: &Matrix3<f64>| -> Vec<bool> { matches.iter().map(|x| (model.error)(x, m) < model.threshold).collect() };
    let mut inliers = flags(&current);
    let mut scale = order_stat(&current).max(f64::MIN_POSITIVE);
    for _ in 0..10 {
        let set: Vec<Correspondence> = matches.iter().zip(&inliers).filter(|(_, &k)| k).map(|(m, _)| *m).collect();
        if set.len() < model.sample_size {
            break;
        }
        let weights: Vec<f64> = set.iter().map(|x| 1.0 / (1.0 + (model.error)(x, &current) / scale)).collect();
        let Some(m) = (model.fit)(&set, Some(&weights)) else { break };
        let next_scale = order_stat(&m);
        if next_scale > scale {
            break;
        }
        current = m;
        scale = next_scale.max(f64::MIN_POSITIVE);
        let next = flags(&current);
        let done = next == inliers;
        inliers = next;
        if done {
            break;
        }
    }
    Some((current, inliers))
}

const REFINE_SAMPLES: usize = 200;

/// Robust fundamental matrix from at least 8 matches.
pub fn estimate_fundamental(matches: &[Correspondence], cfg: &RansacConfig) -> Result<(FundamentalMatrix, Vec<bool>)> {
    if matches.len() < 8 {
        return Err(contract(format!("fundamental matrix needs at least 8 matches, got {}", matches.len())));
    }
    let model = Model { sample_size: 8, threshold: cfg.f_threshold, fit: fit_fundamental, error: sampson_value };
    let (f, inliers) = ransac(matches, cfg, &model).ok_or_else(|| Error::DegenerateF("no model could be fitted".into()))?;
    let count = inliers.iter().filter(|&&k| k).count();
    if count < 8 {
        return Err(Error::DegenerateF(format!("consensus of only {count} matches")));
    }
    Ok((FundamentalMatrix::new(f)?, inliers))
}

/// Robust homography from at least 4 matches.
pub fn estimate_homography(matches: &[Correspondence], cfg: &RansacConfig) -> Result<(Homography, Vec<bool>)> {
    if matches.len() < 4 {
        return Err(contract(format!("homography needs at least 4 matches, got {}", matches.len())));
    }
    let model = Model { sample_size: 4, threshold: cfg.h_threshold, fit: fit_homography, error: transfer_value };
    let (h, inliers) = ransac(matches, cfg, &model).ok_or_else(|| Error::DegenerateH("no model could be fitted".into()))?;
    Ok((Homography::new(h)?, inliers))
}
