//! Pair parallax score, clip-level MVS and the match text format.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{epipolar_error, estimate_fundamental, estimate_homography, extract_matches, homography_error};
use super::{Correspondence, MatchConfig, RansacConfig};
use crate::error::{contract, Error, Result};
use crate::geometry::ImageBuffer;
use crate::stats::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Too few correspondences to fit the models.
    InsufficientTexture,
    /// No fundamental matrix with enough support.
    NoEpipolarConsensus,
    /// The homography already explains the epipolar inliers (pure rotation or a plane).
    HomographyExplained,
    /// No usable homography.
    NoHomography,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallaxScore {
    /// `r_H / max(r_F, eps)`, or 0 for a degenerate pair.
    pub p: f64,
    /// Mean Sampson error over all matches.
    pub r_f: f64,
    /// Mean symmetric transfer error over all matches.
    pub r_h: f64,
    pub f_inliers: usize,
    pub h_inliers: usize,
    pub degenerate: Option<Degeneracy>,
}

impl ParallaxScore {
    fn degenerate(kind: Degeneracy) -> Self {
        Self { p: 0.0, r_f: f64::NAN, r_h: f64::NAN, f_inliers: 0, h_inliers: 0, degenerate: Some(kind) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvsConfig {
    pub max_matches: usize,
    /// Base seed; each pair derives its own.
    pub seed: u64,
    /// Floor of `r_F` in the score ratio, squared pixels.
    pub eps_rf: f64,
    /// Share of epipolar inliers with transfer error below
    /// `explained_threshold` at which the pair counts as homography-explained.
    pub homography_explained: f64,
    /// Transfer error, squared pixels, under which the homography explains a
    /// match as well as matching noise allows.
    pub explained_threshold: f64,
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
}

impl Default for MvsConfig {
    fn default() -> Self {
        Self {
            max_matches: 512,
            seed: 0,
            eps_rf: 1e-6,
            homography_explained: 0.95,
            explained_threshold: 0.1,
            matching: MatchConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

/// Parallax score of one frame pair from its matches.
pub fn pair_parallax_score(matches: &[Correspondence], cfg: &MvsConfig) -> Result<ParallaxScore> {
    if matches.len() < 8 {
        return Err(contract(format!("a pair score needs at least 8 matches, got {}", matches.len())));
    }
    let (f, f_flags) = match estimate_fundamental(matches, &cfg.ransac) {
        Ok(r) => r,
        Err(Error::DegenerateF(_)) => return Ok(ParallaxScore::degenerate(Degeneracy::NoEpipolarConsensus)),
        Err(e) => return Err(e),
    };
    let (h, h_flags) = match estimate_homography(matches, &cfg.ransac) {
        Ok(r) => r,
        Err(Error::DegenerateH(_)) => return Ok(ParallaxScore::degenerate(Degeneracy::NoHomography)),
        Err(e) => return Err(e),
    };
    let n = matches.len() as f64;
    let d_h: Vec<f64> = matches.iter().map(|m| homography_error(m, &h).value).collect();
    let r_f = matches.iter().map(|m| epipolar_error(m, &f).value).sum::<f64>() / n;
    let r_h = d_h.iter().sum::<f64>() / n;
    let f_inliers = f_flags.iter().filter(|&&k| k).count();
    let h_inliers = h_flags.iter().filter(|&&k| k).count();
    let explained_count = f_flags.iter().zip(&d_h).filter(|(&k, &e)| k && e < cfg.explained_threshold).count();
    let explained = explained_count as f64 >= cfg.homography_explained * f_inliers as f64;
    let degenerate = explained.then_some(Degeneracy::HomographyExplained);
    let p = if degenerate.is_some() { 0.0 } else { r_h / r_f.max(cfg.eps_rf) };
    Ok(ParallaxScore { p, r_f, r_h, f_inliers, h_inliers, degenerate })
}

/// Clip-level multi-view signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvsRecord {
    pub clip_id: String,
    pub per_pair_scores: Vec<f64>,
    pub mvs: f64,
    pub pair_count: usize,
    pub degenerate_pairs: usize,
}

impl MvsRecord {
    fn from_scores(clip_id: &str, scores: &[ParallaxScore]) -> Self {
        let per_pair_scores: Vec<f64> = scores.iter().map(|s| s.p).collect();
        let pair_count = scores.len();
        let mvs = if pair_count > 0 { per_pair_scores.iter().sum::<f64>() / pair_count as f64 } else { 0.0 };
        let degenerate_pairs = scores.iter().filter(|s| s.degenerate.is_some()).count();
        Self { clip_id: clip_id.to_string(), per_pair_scores, mvs, pair_count, degenerate_pairs }
    }
}

fn pair_config(cfg: &MvsConfig, pair: usize) -> (u64, MvsConfig) {
    let seed = mix_seed(cfg.seed, pair as u64);
    (seed, MvsConfig { ransac: RansacConfig { seed, ..cfg.ransac }, ..*cfg })
}

/// MVS of a clip from its consecutive frame pairs.
pub fn video_mvs(clip_id: &str, frames: &[ImageBuffer], cfg: &MvsConfig) -> Result<MvsRecord> {
    if frames.len() < 2 {
        return Err(contract(format!("a clip needs at least 2 frames, got {}", frames.len())));
    }
    let scores: Vec<Result<ParallaxScore>> = (0..frames.len() - 1)
        .into_par_iter()
        .map(|t| {
            let (seed, pair_cfg) = pair_config(cfg, t);
            match extract_matches(&frames[t], &frames[t + 1], cfg.max_matches, seed, &cfg.matching) {
                Ok(m) => pair_parallax_score(&m, &pair_cfg),
                Err(Error::InsufficientTexture { .. }) => Ok(ParallaxScore::degenerate(Degeneracy::InsufficientTexture)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MvsRecord::from_scores(clip_id, &scores))
}

/// MVS of a clip from precomputed matches, one list per consecutive pair.
pub fn video_mvs_from_matches(clip_id: &str, pairs: &[Vec<Correspondence>], cfg: &MvsConfig) -> Result<MvsRecord> {
    if pairs.is_empty() {
        return Err(contract("a clip needs at least one pair"));
    }
    let scores: Vec<Result<ParallaxScore>> = pairs
        .par_iter()
        .enumerate()
        .map(|(t, m)| {
            if m.len() < 8 {
                return Ok(ParallaxScore::degenerate(Degeneracy::InsufficientTexture));
            }
            pair_parallax_score(m, &pair_config(cfg, t).1)
        })
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MvsRecord::from_scores(clip_id, &scores))
}

/// Parses `u v u' v'` lines; `#` starts a comment.
pub fn parse_matches(text: &str) -> Result<Vec<Correspondence>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            let values: Vec<f64> = body
                .split_whitespace()
                .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Format { offset, message: format!("non-numeric match line '{body}'") })?;
            if values.len() != 4 {
                return Err(Error::Format { offset, message: format!("expected 4 values per match line, got {}", values.len()) });
            }
            out.push(Correspondence::new(values[0], values[1], values[2], values[3]));
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn write_matches(matches: &[Correspondence]) -> String {
    let mut s = String::from("# u v u' v'\n");
    for m in matches {
        s.push_str(&format!("{} {} {} {}\n", m.x_t.u, m.x_t.v, m.x_t1.u, m.x_t1.v));
    }
    s
}
