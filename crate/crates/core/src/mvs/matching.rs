//! Harris corners matched by zero-mean normalized cross-correlation.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nalgebra::{SMatrix, SVector};

use super::Correspondence;
use crate::error::{contract, Error, Result};
use crate::geometry::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Half-size of the correlation patch.
    pub patch_radius: usize,
    /// Largest displacement searched along each axis, pixels.
    pub search_radius: usize,
    /// Minimum correlation of an accepted match.
    pub min_zncc: f64,
    /// Largest forward-backward disagreement, pixels.
    pub max_round_trip: f64,
    /// Harris response relative to the strongest corner below which corners are dropped.
    pub corner_threshold: f64,
    /// Neighbors whose median displacement a match must agree with; 0 disables the check.
    pub coherence_neighbors: usize,
    /// Largest distance between a match's displacement and its neighbors' median, pixels.
    pub max_flow_deviation: f64,
    /// Side of the squares within which only the strongest corner is kept.
    pub corner_cell: usize,
    /// Half-size of the window of the affine subpixel refinement; 0 keeps
    /// the parabola fit of the correlation peak.
    pub refine_radius: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            patch_radius: 4,
            search_radius: 24,
            min_zncc: 0.8,
            max_round_trip: 1.0,
            corner_threshold: 1e-3,
            corner_cell: 4,
            coherence_neighbors: 8,
            max_flow_deviation: 4.0,
            refine_radius: 6,
        }
    }
}

/// Single-channel image as a plain grid.
struct Gray {
    width: usize,
    height: usize,
    data: Vec<f64>,
    /// Norm of the zero-mean patch centered on each pixel (0 near the border).
    patch_norm: Vec<f64>,
}

impl Gray {
    fn new(img: &ImageBuffer, r: usize) -> Self {
        let g = img.to_gray();
        let (w, h) = (g.width, g.height);
        let mut gray = Self { width: w, height: h, data: g.data, patch_norm: Vec::new() };
        gray.patch_norm = vec![0.0; w * h];
        for y in r..h.saturating_sub(r) {
            for x in r..w.saturating_sub(r) {
                let (mut sum, mut sq) = (0.0, 0.0);
                for yy in y - r..=y + r {
                    for xx in x - r..=x + r {
                        let v = gray.at(xx, yy);
                        sum += v;
                        sq += v * v;
                    }
                }
                let n = ((2 * r + 1) * (2 * r + 1)) as f64;
                gray.patch_norm[y * w + x] = (sq - sum * sum / n).max(0.0).sqrt();
            }
        }
        gray
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Cubic convolution (Catmull-Rom) value and gradient at `(u, v)`, or
    /// `None` when the 4x4 support leaves the image.
    fn cubic(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        let (fx, fy) = (u.floor(), v.floor());
        if !(fx >= 1.0 && fy >= 1.0 && fx + 2.0 < self.width as f64 && fy + 2.0 < self.height as f64) {
            return None;
        }
        let (x0, y0) = (fx as usize - 1, fy as usize - 1);
        let (wx, dx) = catmull_rom(u - fx);
        let (wy, dy) = catmull_rom(v - fy);
        let mut out = [0.0; 3];
        for (j, (wyj, dyj)) in wy.iter().zip(&dy).enumerate() {
            let row = &self.data[(y0 + j) * self.width + x0..(y0 + j) * self.width + x0 + 4];
            let (mut sv, mut sd) = (0.0, 0.0);
            for (i, p) in row.iter().enumerate() {
                sv += wx[i] * p;
                sd += dx[i] * p;
            }
            out[0] += wyj * sv;
            out[1] += wyj * sd;
            out[2] += dyj * sv;
        }
        Some(out)
    }
}

/// Catmull-Rom weights of the four taps around fraction `t` and their derivatives.
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    let w = [0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0), 0.5 * (-3.0 * t3 + 4.0 * t2 + t), 0.5 * (t3 - t2)];
    let d = [0.5 * (-3.0 * t2 + 4.0 * t - 1.0), 0.5 * (9.0 * t2 - 10.0 * t), 0.5 * (-9.0 * t2 + 8.0 * t + 1.0), 0.5 * (3.0 * t2 - 2.0 * t)];
    (w, d)
}

/// Harris corners `(x, y, response)`, the strongest of each `cell`-sized square,
/// strongest first, at least `margin` pixels from the border.
fn harris(img: &Gray, margin: usize, cell: usize, threshold: f64) -> Vec<(usize, usize, f64)> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
            let gy = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let smooth = |v: Vec<f64>| ImageBuffer { height: h, width: w, channels: 1, data: v }.gaussian_blur(1.5).data;
    let (ixx, iyy, ixy) = (smooth(ixx), smooth(iyy), smooth(ixy));
    let response: Vec<f64> = (0..w * h)
        .map(|i| {
            let tr = ixx[i] + iyy[i];
            ixx[i] * iyy[i] - ixy[i] * ixy[i] - 0.04 * tr * tr
        })
        .collect();
    let peak = response.iter().copied().fold(0.0f64, f64::max);
    if !(peak > 0.0) {
        return Vec::new();
    }
    let margin = margin.max(1);
    let mut corners = Vec::new();
    // Strongest response per cell; ties go to the first pixel in raster order.
    for cy in (margin..h.saturating_sub(margin)).step_by(cell) {
        for cx in (margin..w.saturating_sub(margin)).step_by(cell) {
            let mut best: Option<(usize, usize, f64)> = None;
            for y in cy..(cy + cell).min(h - margin) {
                for x in cx..(cx + cell).min(w - margin) {
                    let r = response[y * w + x];
                    if best.is_none_or(|(_, _, b)| r > b) {
                        best = Some((x, y, r));
                    }
                }
            }
            if let Some(c) = best.filter(|c| c.2 > threshold * peak) {
                corners.push(c);
            }
        }
    }
    corners.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    corners
}

/// Zero-mean patch with unit norm, or `None` for a flat patch.
fn patch(img: &Gray, x: usize, y: usize, r: usize) -> Option<Vec<f64>> {
    if x < r || y < r || x + r >= img.width || y + r >= img.height {
        return None;
    }
    let mut p = Vec::with_capacity((2 * r + 1).pow(2));
    for yy in y - r..=y + r {
        for xx in x - r..=x + r {
            p.push(img.at(xx, yy));
        }
    }
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    p.iter_mut().for_each(|v| *v /= norm);
    Some(p)
}

/// Best correlation position of `template` in `img` around `(cx, cy)`,
/// refined to subpixel precision by a parabola along each axis.
fn search(img: &Gray, template: &[f64], cx: usize, cy: usize, cfg: &MatchConfig) -> Option<(f64, f64, f64)> {
    let r = cfg.patch_radius;
    let s = cfg.search_radius as isize;
    let (lo_x, hi_x) = (r as isize, (img.width - 1 - r) as isize);
    let (lo_y, hi_y) = (r as isize, (img.height - 1 - r) as isize);
    let side = 2 * s as usize + 1;
    let mut scores = vec![f64::NEG_INFINITY; side * side];
    let mut best: Option<(usize, usize, f64)> = None;
    for dy in -s..=s {
        for dx in -s..=s {
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if x < lo_x || x > hi_x || y < lo_y || y > hi_y {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            let norm = img.patch_norm[y * img.width + x];
            if norm < 1e-9 {
                continue;
            }
            // The template is zero-mean, so the patch mean drops out.
            let mut dot = 0.0;
            let mut k = 0;
            for yy in y - r..=y + r {
                let row = &img.data[yy * img.width + x - r..=yy * img.width + x + r];
                for v in row {
                    dot += v * template[k];
                    k += 1;
                }
            }
            let score = dot / norm;
            scores[(dy + s) as usize * side + (dx + s) as usize] = score;
            if best.is_none_or(|(_, _, b)| score > b) {
                best = Some(((dx + s) as usize, (dy + s) as usize, score));
            }
        }
    }
    let (bx, by, score) = best?;
    let offset = |minus: f64, centre: f64, plus: f64| {
        let den = minus - 2.0 * centre + plus;
        if minus.is_finite() && plus.is_finite() && den < 0.0 {
            (0.5 * (minus - plus) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let at = |x: usize, y: usize| scores[y * side + x];
    let ox = if bx > 0 && bx + 1 < side { offset(at(bx - 1, by), score, at(bx + 1, by)) } else { 0.0 };
    let oy = if by > 0 && by + 1 < side { offset(at(bx, by - 1), score, at(bx, by + 1)) } else { 0.0 };
    let x = cx as f64 + bx as f64 - s as f64 + ox;
    let y = cy as f64 + by as f64 - s as f64 + oy;
    Some((x, y, score))
}

/// Refines the position of the window of `a` centered on `(x, y)` inside `b`,
/// starting at `(u, v)`. Gauss-Newton over a projective warp of the window
/// plus gain and bias. `None` when the window leaves `b`, the system is
/// singular or the estimate drifts more than 2 px.
fn refine(a: &Gray, b: &Gray, x: usize, y: usize, (u, v): (f64, f64), radius: usize) -> Option<(f64, f64)> {
    let r = radius as isize;
    if x < radius || y < radius || x + radius >= a.width || y + radius >= a.height {
        return None;
    }
    // Window offsets are scaled to [-1, 1] for conditioning.
    let scale = radius.max(1) as f64;
    // h11 h12 h13 h21 h22 h23 h31 h32 (h33 = 1), gain, bias.
    let mut theta = [1.0, 0.0, u, 0.0, 1.0, v, 0.0, 0.0, 1.0, 0.0];
    for _ in 0..30 {
        let mut jtj = SMatrix::<f64, 10, 10>::zeros();
        let mut jtr = SVector::<f64, 10>::zeros();
        for j in -r..=r {
            for i in -r..=r {
                let (fi, fj) = (i as f64 / scale, j as f64 / scale);
                let w = theta[6] * fi + theta[7] * fj + 1.0;
                if w <= 0.1 {
                    return None;
                }
                let qx = (theta[0] * fi * scale + theta[1] * fj * scale + theta[2]) / w;
                let qy = (theta[3] * fi * scale + theta[4] * fj * scale + theta[5]) / w;
                let Some(value) = b.cubic(qx, qy) else { return None };
                let t = a.at((x as isize + i) as usize, (y as isize + j) as usize);
                let res = value[0] - theta[8] * t - theta[9];
                let (gx, gy) = (value[1] / w, value[2] / w);
                let (si, sj) = (fi * scale, fj * scale);
                let persp = -(gx * qx + gy * qy);
                let row = SVector::<f64, 10>::from([gx * si, gx * sj, gx, gy * si, gy * sj, gy, persp * fi, persp * fj, -t, -1.0]);
                jtj += row * row.transpose();
                jtr += row * res;
            }
        }
        let delta = jtj.cholesky()?.solve(&(-jtr));
        theta.iter_mut().zip(delta.iter()).for_each(|(t, d)| *t += d);
        if !theta.iter().all(|t| t.is_finite()) || (theta[2] - u).hypot(theta[5] - v) > 2.0 {
            return None;
        }
        if delta[2].hypot(delta[5]) < 1e-6 {
            break;
        }
    }
    Some((theta[2], theta[5]))
}

/// Drops matches whose displacement differs by more than
/// `max_flow_deviation` from the median displacement of their nearest
/// neighbors. Repetitive texture produces isolated matches a period away.
fn coherent(matches: &[Correspondence], cfg: &MatchConfig) -> Vec<Correspondence> {
    let k = cfg.coherence_neighbors;
    if k == 0 || matches.len() <= k {
        return matches.to_vec();
    }
    let flow = |m: &Correspondence| (m.x_t1.u - m.x_t.u, m.x_t1.v - m.x_t.v);
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    matches
        .iter()
        .enumerate()
        .filter(|(i, m)| {
            let mut near: Vec<(f64, usize)> =
                matches.iter().enumerate().filter(|(j, _)| j != i).map(|(j, o)| ((o.x_t.u - m.x_t.u).powi(2) + (o.x_t.v - m.x_t.v).powi(2), j)).collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(k);
            let mut du: Vec<f64> = near.iter().map(|&(_, j)| flow(&matches[j]).0).collect();
            let mut dv: Vec<f64> = near.iter().map(|&(_, j)| flow(&matches[j]).1).collect();
            let (fu, fv) = flow(m);
            (fu - median(&mut du)).hypot(fv - median(&mut dv)) <= cfg.max_flow_deviation
        })
        .map(|(_, m)| *m)
        .collect()
}

/// Correspondences from Harris corners of `i_t` matched into `i_t1`.
///
/// Every match is the correlation peak in `i_t1` and maps back to within
/// `max_round_trip` pixels of its corner. When more than `max_matches`
/// matches survive, a subset is drawn with `seed`.
pub fn extract_matches(i_t: &ImageBuffer, i_t1: &ImageBuffer, max_matches: usize, seed: u64, cfg: &MatchConfig) -> Result<Vec<Correspondence>> {
    if !i_t.same_shape(i_t1) {
        return Err(contract("frames of a pair must have the same dimensions"));
    }
    if max_matches < 8 {
        return Err(contract(format!("max_matches must be at least 8, got {max_matches}")));
    }
    let r = cfg.patch_radius;
    if i_t.width <= 2 * r + 1 || i_t.height <= 2 * r + 1 {
        return Err(Error::InsufficientTexture { found: 0 });
    }
    let (a, b) = (Gray::new(i_t, r), Gray::new(i_t1, r));
    let mut matches = Vec::new();
    let precise = |from: &Gray, to: &Gray, x: usize, y: usize, peak: (f64, f64)| {
        if cfg.refine_radius == 0 {
            Some(peak)
        } else {
            refine(from, to, x, y, peak, cfg.refine_radius)
        }
    };
    for (x, y, _) in harris(&a, r.max(cfg.refine_radius), cfg.corner_cell.max(1), cfg.corner_threshold).into_iter().take(4 * max_matches) {
        let Some(template) = patch(&a, x, y, r) else { continue };
        let Some((u1, v1, score)) = search(&b, &template, x, y, cfg) else { continue };
        if score < cfg.min_zncc {
            continue;
        }
        let Some((u1, v1)) = precise(&a, &b, x, y, (u1, v1)) else { continue };
        let (qx, qy) = (u1.round() as usize, v1.round() as usize);
        let Some(back_template) = patch(&b, qx, qy, r) else { continue };
        let Some((u0, v0, _)) = search(&a, &back_template, qx, qy, cfg) else { continue };
        let Some((u0, v0)) = precise(&b, &a, qx, qy, (u0, v0)) else { continue };
        // The backward search starts from the rounded forward match.
        let (eu, ev) = (u0 + (u1 - qx as f64) - x as f64, v0 + (v1 - qy as f64) - y as f64);
        if (eu * eu + ev * ev).sqrt() >= cfg.max_round_trip {
            continue;
        }
        matches.push(Correspondence::new(x as f64, y as f64, u1, v1));
    }
    let matches = coherent(&matches, cfg);
    if matches.len() < 8 {
        return Err(Error::InsufficientTexture { found: matches.len() });
    }
    let mut matches = matches;
    if matches.len() > max_matches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep: Vec<usize> = sample(&mut rng, matches.len(), max_matches).into_vec();
        keep.sort_unstable();
        matches = keep.into_iter().map(|i| matches[i]).collect();
    }
    Ok(matches)
}
