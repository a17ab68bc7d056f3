//! Histogram shot-boundary detection.

use std::ops::Range;

use crate::error::{contract, Result};
use crate::geometry::ImageBuffer;

pub const HISTOGRAM_BINS: usize = 64;

/// Concatenated per-channel histograms, normalized to unit total mass.
pub fn frame_histogram(img: &ImageBuffer) -> Vec<f64> {
    let mut h = vec![0.0; HISTOGRAM_BINS * img.channels];
    for px in img.data.chunks_exact(img.channels) {
        for (c, &v) in px.iter().enumerate() {
            let bin = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            h[c * HISTOGRAM_BINS + bin] += 1.0;
        }
    }
    let total = (img.height * img.width * img.channels).max(1) as f64;
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// Indices `k` where frame `k` starts a new shot, i.e. the L1 histogram
/// distance between frames `k - 1` and `k` exceeds `threshold` (range `[0, 2]`).
pub fn detect_shots(frames: &[ImageBuffer], threshold: f64) -> Result<Vec<usize>> {
    if frames.len() < 2 {
        return Err(contract(format!("shot detection needs at least 2 frames, got {}", frames.len())));
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(contract(format!("threshold must be positive, got {threshold}")));
    }
    if frames.iter().any(|f| f.channels != frames[0].channels) {
        return Err(contract("frames differ in channel count"));
    }
    let hists: Vec<Vec<f64>> = frames.iter().map(frame_histogram).collect();
    Ok((1..frames.len()).filter(|&k| hists[k - 1].iter().zip(&hists[k]).map(|(a, b)| (a - b).abs()).sum::<f64>() > threshold).collect())
}

/// Splits `0..n` at the cuts, dropping shots shorter than `min_len`.
pub fn shot_ranges(n: usize, cuts: &[usize], min_len: usize) -> Vec<Range<usize>> {
    let mut bounds = vec![0];
    bounds.extend(cuts.iter().copied().filter(|&c| c > 0 && c < n));
    bounds.push(n);
    bounds.windows(2).map(|w| w[0]..w[1]).filter(|r| r.len() >= min_len.max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_clip, Motion, SceneKind};

    fn stripes(period: usize, phase: f64) -> ImageBuffer {
        ImageBuffer::from_fn(48, 48, 3, |x, y, c| {
            let t = ((x + 2 * y) % period) as f64 / period as f64;
            (0.15 + 0.2 * t + 0.1 * c as f64 + phase).min(1.0)
        })
    }

    #[test]
    fn panning_clip_has_no_cuts() {
        for seed in 0..3 {
            let clip = make_clip(SceneKind::RandomHeightfield, 8, 64, Motion { baseline: 0.1, rotation_deg: 2.0 }, seed).unwrap();
            assert_eq!(detect_shots(&clip.frames, 0.5).unwrap(), Vec::<usize>::new());
        }
    }

    #[test]
    fn splice_gives_one_cut() {
        let a = make_clip(SceneKind::RandomHeightfield, 4, 48, Motion { baseline: 0.1, rotation_deg: 1.0 }, 1).unwrap();
        let mut frames = a.frames.clone();
        frames.extend((0..4).map(|i| stripes(7, 0.5 + 0.001 * i as f64)));
        assert_eq!(detect_shots(&frames, 0.5).unwrap(), vec![4]);
        assert_eq!(shot_ranges(frames.len(), &[4], 2), vec![0..4, 4..8]);
    }

    #[test]
    fn repeated_frame_has_no_cuts() {
        let f = stripes(5, 0.0);
        assert!(detect_shots(&[f.clone(), f.clone(), f], 1e-9).unwrap().is_empty());
    }

    #[test]
    fn histogram_mass_and_bounds() {
        let h = frame_histogram(&stripes(9, 0.2));
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.len(), 3 * HISTOGRAM_BINS);
        assert!(detect_shots(&[stripes(3, 0.0)], 0.5).is_err());
        assert!(detect_shots(&[stripes(3, 0.0), stripes(3, 0.0)], 0.0).is_err());
    }

    #[test]
    fn short_shots_are_dropped() {
        assert_eq!(shot_ranges(5, &[], 2), vec![0..5]);
        assert_eq!(shot_ranges(6, &[1, 4], 2), vec![1..4, 4..6]);
    }
}
