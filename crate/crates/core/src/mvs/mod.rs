//! Multi-view signal: how much parallax a clip offers.
//!
//! For each consecutive frame pair, correspondences are fitted with both a
//! fundamental matrix and a homography. The pair score is the ratio of the
//! mean homography transfer error to the mean Sampson error, and the clip
//! score is the temporal mean of the pair scores.

mod estimate;
mod matching;
mod score;

use serde::{Deserialize, Serialize};

use crate::geometry::Pixel;

pub use estimate::{
    epipolar_error, estimate_fundamental, estimate_homography, homography_error, FundamentalMatrix, Homography, RansacConfig, Residual, TRANSFER_SENTINEL,
};
pub use matching::{extract_matches, MatchConfig};
pub use score::{pair_parallax_score, parse_matches, video_mvs, video_mvs_from_matches, write_matches, Degeneracy, MvsConfig, MvsRecord, ParallaxScore};

/// A match between frame `t` and frame `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub x_t: Pixel,
    pub x_t1: Pixel,
}

impl Correspondence {
    pub fn new(u: f64, v: f64, u1: f64, v1: f64) -> Self {
        Self { x_t: Pixel::new(u, v), x_t1: Pixel::new(u1, v1) }
    }

    pub fn is_finite(&self) -> bool {
        self.x_t.is_finite() && self.x_t1.is_finite()
    }
}
