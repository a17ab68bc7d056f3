//! Direct per-clip recovery of depth, pose and focal length by descending
//! the clip photometric objective.
//!
//! The schedule is intrinsics-first:
//!
//! 1. Stage 1: a warm-up on depth and pose with the focal length held at its
//!    initial value, then descent on the focal length alone with depth and
//!    pose frozen.
//! 2. Stage 2: the focal length is frozen at the averaged intrinsics and depth
//!    and pose are refined until the relative loss change falls below the
//!    tolerance.
//!
//! Depth is optimized in log space on a grid `downscale` times coarser than
//! the image and bilinearly upsampled. Frame 0 is pinned to the identity pose.
//! Steps follow limited-memory quasi-Newton directions over the active blocks
//! with Armijo backtracking, so the loss never increases across accepted
//! steps. The warm-up first fits depth and pose on blurred copies of the
//! frames and keeps the result only if it lowers the loss on the originals.

use std::fmt;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::distill::PredictionSet;
use crate::error::{contract, Error, Result};
use crate::geometry::{DepthMap, ImageBuffer, Intrinsics, Pose};
use crate::photometric::{clip_objective, clip_objective_detailed, clip_objective_with_grad, ClipGradient, PhotometricConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    WarmupDT,
    IntrinsicsOnly,
    FrozenKDT,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::WarmupDT => "warmup_dt",
            Stage::IntrinsicsOnly => "intrinsics_only",
            Stage::FrozenKDT => "frozen_k_dt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    /// Depth/pose iterations before the focal length is touched.
    pub warmup_iters: usize,
    /// Focal-only iterations at the end of stage 1.
    pub intrinsics_iters: usize,
    /// Maximum stage-2 iterations.
    pub stage2_iters: usize,
    /// Initial trial step per block (depth, pose, focal).
    pub lr_depth: f64,
    pub lr_pose: f64,
    pub lr_focal: f64,
    /// Depth grid is `ceil(W / downscale) x ceil(H / downscale)`.
    pub depth_downscale: usize,
    /// Stop when the relative loss decrease of one iteration is below this.
    pub tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// Start the warm-up with a 1-D search over constant scene depth.
    pub depth_scan: bool,
    /// Largest change of any log-depth cell in one step.
    pub max_depth_step: f64,
    /// Largest rotation (radians) and translation (fraction of median depth) in one step.
    pub max_rotation_step: f64,
    pub max_translation_step: f64,
    /// Blur levels (Gaussian sigma in pixels, coarse first) of the warm-up
    /// proposal; empty to warm up on the frames directly.
    pub warmup_blur: Vec<f64>,
    /// Largest log-focal change in one step.
    pub max_focal_step: f64,
    /// A step is rejected when it keeps fewer than this fraction of the most
    /// valid pixels seen so far in the current phase.
    pub min_valid_ratio: f64,
    pub photometric: PhotometricConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            warmup_iters: 200,
            intrinsics_iters: 100,
            stage2_iters: 400,
            lr_depth: 1.0,
            lr_pose: 1e-2,
            lr_focal: 1e-2,
            depth_downscale: 4,
            tolerance: 1e-7,
            armijo_c: 1e-4,
            max_backtracks: 40,
            depth_scan: true,
            max_depth_step: 0.1,
            max_rotation_step: 0.5f64.to_radians(),
            max_translation_step: 0.01,
            max_focal_step: 0.02,
            warmup_blur: vec![4.0, 2.0, 1.0],
            min_valid_ratio: 0.9,
            photometric: PhotometricConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.photometric.validate()?;
        let positive = [self.lr_depth, self.lr_pose, self.lr_focal, self.tolerance, self.armijo_c];
        let caps = [self.max_depth_step, self.max_rotation_step, self.max_translation_step, self.max_focal_step];
        if positive.iter().chain(&caps).chain(&self.warmup_blur).any(|v| !(*v > 0.0)) || self.depth_downscale == 0 || self.max_backtracks == 0 {
            return Err(contract("optimizer step sizes, caps, blur levels, tolerance, downscale and backtracks must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_valid_ratio) {
            return Err(contract("min_valid_ratio must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Log-depth on a coarse grid, bilinearly upsampled (corner-aligned) to the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthGrid {
    pub grid_width: usize,
    pub grid_height: usize,
    pub width: usize,
    pub height: usize,
    pub log_depth: Vec<f64>,
}

impl DepthGrid {
    pub fn constant(width: usize, height: usize, downscale: usize, log_depth: f64) -> Self {
        let gw = width.div_ceil(downscale).max(2);
        let gh = height.div_ceil(downscale).max(2);
        Self { grid_width: gw, grid_height: gh, width, height, log_depth: vec![log_depth; gw * gh] }
    }

    /// Grid cell and fractional offset for an image coordinate along one axis.
    #[inline]
    fn axis(pos: usize, full: usize, grid: usize) -> (usize, f64) {
        if full <= 1 {
            return (0, 0.0);
        }
        let g = pos as f64 * (grid - 1) as f64 / (full - 1) as f64;
        let i = (g.floor() as usize).min(grid - 2);
        (i, g - i as f64)
    }

    pub fn upsample(&self) -> DepthMap {
        let mut data = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            let (gy, ay) = Self::axis(y, self.height, self.grid_height);
            for x in 0..self.width {
                let (gx, ax) = Self::axis(x, self.width, self.grid_width);
                let at = |i: usize, j: usize| self.log_depth[j * self.grid_width + i];
                let top = at(gx, gy) * (1.0 - ax) + at(gx + 1, gy) * ax;
                let bottom = at(gx, gy + 1) * (1.0 - ax) + at(gx + 1, gy + 1) * ax;
                data.push((top * (1.0 - ay) + bottom * ay).exp());
            }
        }
        DepthMap { height: self.height, width: self.width, data }
    }

    /// Transpose of the upsampling map: pulls a full-resolution log-depth
    /// gradient back onto the grid.
    pub fn pull_back(&self, full: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.log_depth.len()];
        for y in 0..self.height {
            let (gy, ay) = Self::axis(y, self.height, self.grid_height);
            for x in 0..self.width {
                let (gx, ax) = Self::axis(x, self.width, self.grid_width);
                let v = full[y * self.width + x];
                if v == 0.0 {
                    continue;
                }
                let gw = self.grid_width;
                g[gy * gw + gx] += v * (1.0 - ax) * (1.0 - ay);
                g[gy * gw + gx + 1] += v * ax * (1.0 - ay);
                g[(gy + 1) * gw + gx] += v * (1.0 - ax) * ay;
                g[(gy + 1) * gw + gx + 1] += v * ax * ay;
            }
        }
        g
    }
}

/// Optimization variables of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipState {
    pub log_depths: Vec<DepthGrid>,
    /// Camera-to-world poses; `poses[0]` stays the identity.
    pub poses: Vec<Pose>,
    pub log_fx: f64,
    pub log_fy: f64,
    pub width: usize,
    pub height: usize,
    pub stage: Stage,
    /// Set once stage 1 has run to completion.
    pub stage1_done: bool,
}

impl ClipState {
    pub fn intrinsics(&self) -> Intrinsics {
        let (fx, fy) = (self.log_fx.exp(), self.log_fy.exp());
        Intrinsics { fx, fy, cx: self.width as f64 / 2.0, cy: self.height as f64 / 2.0, width: self.width, height: self.height }
    }

    pub fn depths(&self) -> Vec<DepthMap> {
        self.log_depths.iter().map(DepthGrid::upsample).collect()
    }

    /// Current estimate as a prediction set, with depths and translations
    /// rescaled so the median depth of frame 0 is 1.
    pub fn prediction(&self) -> PredictionSet {
        let depths = self.depths();
        let scale = 1.0 / depths[0].median();
        PredictionSet {
            depths: depths.iter().map(|d| d.scaled(scale)).collect(),
            poses: self.poses.iter().map(|p| Pose { rotation: p.rotation, translation: p.translation * scale }).collect(),
            k: self.intrinsics(),
        }
    }

    pub fn objective(&self, frames: &[ImageBuffer], cfg: &PhotometricConfig) -> Result<f64> {
        let k = self.intrinsics();
        clip_objective(frames, &self.depths(), &self.poses, &vec![k; frames.len()], cfg)
    }

    /// Objective and total valid pixel count.
    fn evaluate(&self, frames: &[ImageBuffer], cfg: &PhotometricConfig) -> Result<(f64, usize)> {
        let k = self.intrinsics();
        clip_objective_detailed(frames, &self.depths(), &self.poses, &vec![k; frames.len()], cfg)
    }

    fn gradient(&self, frames: &[ImageBuffer], cfg: &PhotometricConfig) -> Result<(f64, ClipGradient)> {
        let k = self.intrinsics();
        clip_objective_with_grad(frames, &self.depths(), &self.poses, &vec![k; frames.len()], cfg)
    }
}

/// One row of the optimization log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub stage: Stage,
    pub loss: f64,
    pub fx: f64,
    pub fy: f64,
}

/// Loss trace over accepted steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub entries: Vec<LogEntry>,
}

impl RunLog {
    fn push(&mut self, stage: Stage, loss: f64, state: &ClipState) {
        let step = self.entries.len();
        self.entries.push(LogEntry { step, stage, loss, fx: state.log_fx.exp(), fy: state.log_fy.exp() });
    }

    /// `step,stage,loss,fx,fy` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,stage,loss,fx,fy\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:.12e},{:.9},{:.9}\n", e.step, e.stage, e.loss, e.fx, e.fy));
        }
        out
    }

    pub fn is_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].loss <= w[0].loss)
    }
}

/// Non-finite loss; carries the last state with a finite loss.
#[derive(Debug, Clone)]
pub struct Diverged {
    pub iteration: usize,
    pub last_state: Box<ClipState>,
}

impl From<Diverged> for Error {
    fn from(d: Diverged) -> Self {
        Error::Diverged { iteration: d.iteration }
    }
}

/// Failure of a stage: a violated precondition or divergence.
#[derive(Debug)]
pub enum OptimError {
    Contract(Error),
    Diverged(Diverged),
}

impl From<Diverged> for OptimError {
    fn from(d: Diverged) -> Self {
        OptimError::Diverged(d)
    }
}

impl From<OptimError> for Error {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Contract(e) => e,
            OptimError::Diverged(d) => d.into(),
        }
    }
}

/// Initial state: unit depth everywhere, identity poses, focal from `k_init`
/// or the `1.2 * max(W, H)` prior.
pub fn init_state(frames: &[ImageBuffer], k_init: Option<&Intrinsics>, cfg: &OptimConfig) -> Result<ClipState> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(contract(format!("need at least 2 frames, got {}", frames.len())));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(contract("all frames must share one size"));
    }
    let k = match k_init {
        Some(k) if k.width != w || k.height != h => return Err(contract("initial intrinsics do not match frame size")),
        Some(k) => *k,
        None => Intrinsics::from_fov_prior(w, h),
    };
    Ok(ClipState {
        log_depths: (0..frames.len()).map(|_| DepthGrid::constant(w, h, cfg.depth_downscale, 0.0)).collect(),
        poses: vec![Pose::identity(); frames.len()],
        log_fx: k.fx.ln(),
        log_fy: k.fy.ln(),
        width: w,
        height: h,
        stage: Stage::WarmupDT,
        stage1_done: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Depth,
    Pose,
    Focal,
}

/// Flattened gradient of one block.
fn block_gradient(state: &ClipState, grad: &ClipGradient, block: Block) -> Vec<f64> {
    match block {
        Block::Depth => state.log_depths.iter().zip(&grad.log_depth).flat_map(|(g, full)| g.pull_back(full)).collect(),
        Block::Pose => grad.pose.iter().skip(1).flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect(),
        Block::Focal => {
            let (gx, gy) = grad.log_focal.iter().fold((0.0, 0.0), |(a, b), g| (a + g[0], b + g[1]));
            vec![gx, gy]
        }
    }
}

/// `state` moved by `delta` within `block`.
fn apply_block(next: &mut ClipState, block: Block, delta: &[f64]) {
    match block {
        Block::Depth => {
            let mut offset = 0;
            for grid in &mut next.log_depths {
                for v in &mut grid.log_depth {
                    *v += delta[offset];
                    offset += 1;
                }
            }
        }
        Block::Pose => {
            for (f, pose) in next.poses.iter_mut().enumerate().skip(1) {
                let xi = Vector6::from_column_slice(&delta[(f - 1) * 6..f * 6]);
                *pose = pose.perturbed(&xi);
            }
        }
        Block::Focal => {
            next.log_fx += delta[0];
            next.log_fy += delta[1];
        }
    }
}

fn block_len(state: &ClipState, block: Block) -> usize {
    match block {
        Block::Depth => state.log_depths.iter().map(|g| g.log_depth.len()).sum(),
        Block::Pose => 6 * (state.poses.len() - 1),
        Block::Focal => 2,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory quasi-Newton descent over the active blocks. Each block is
/// preconditioned by its learning rate; every step is Armijo-backtracked and
/// capped so no parameter moves further than the configured limits.
struct Descent<'a> {
    frames: &'a [ImageBuffer],
    cfg: &'a OptimConfig,
    blocks: Vec<Block>,
    /// Curvature pairs `(s, y, 1 / y.s)` in preconditioned coordinates.
    memory: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

const HISTORY: usize = 8;
/// Accepted steps over which the mean relative decrease is compared with the tolerance.
const WINDOW: usize = 10;

impl<'a> Descent<'a> {
    fn new(frames: &'a [ImageBuffer], cfg: &'a OptimConfig, blocks: &[Block]) -> Self {
        Self { frames, cfg, blocks: blocks.to_vec(), memory: Vec::new() }
    }

    fn rate(&self, block: Block) -> f64 {
        match block {
            Block::Depth => self.cfg.lr_depth,
            Block::Pose => self.cfg.lr_pose,
            Block::Focal => self.cfg.lr_focal,
        }
    }

    /// Gradient in preconditioned coordinates (`x = sqrt(lr) * z`).
    fn gradient_vector(&self, state: &ClipState, grad: &ClipGradient) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|&b| {
                let r = self.rate(b).sqrt();
                block_gradient(state, grad, b).into_iter().map(move |g| g * r)
            })
            .collect()
    }

    fn moved(&self, state: &ClipState, z_step: &[f64]) -> ClipState {
        let mut next = state.clone();
        let mut offset = 0;
        for &b in &self.blocks {
            let n = block_len(state, b);
            let r = self.rate(b).sqrt();
            let delta: Vec<f64> = z_step[offset..offset + n].iter().map(|v| v * r).collect();
            apply_block(&mut next, b, &delta);
            offset += n;
        }
        next
    }

    /// Largest multiplier of the preconditioned step `z_step` under the caps.
    fn step_cap(&self, state: &ClipState, z_step: &[f64]) -> f64 {
        let cap = |limit: f64, largest: f64| if largest > 0.0 { limit / largest } else { f64::INFINITY };
        let mut best = f64::INFINITY;
        let mut offset = 0;
        for &b in &self.blocks {
            let n = block_len(state, b);
            let r = self.rate(b).sqrt();
            let d = &z_step[offset..offset + n];
            offset += n;
            let largest = d.iter().fold(0.0f64, |m, v| m.max(v.abs())) * r;
            best = best.min(match b {
                Block::Depth => cap(self.cfg.max_depth_step, largest),
                Block::Focal => cap(self.cfg.max_focal_step, largest),
                Block::Pose => {
                    let depth0 = &state.log_depths[0].log_depth;
                    let scale = (depth0.iter().sum::<f64>() / depth0.len() as f64).exp();
                    let (mut t_max, mut r_max) = (0.0f64, 0.0f64);
                    for c in d.chunks_exact(6) {
                        t_max = t_max.max(dot(&c[..3], &c[..3]).sqrt() * r);
                        r_max = r_max.max(dot(&c[3..], &c[3..]).sqrt() * r);
                    }
                    cap(self.cfg.max_translation_step * scale, t_max).min(cap(self.cfg.max_rotation_step, r_max))
                }
            });
        }
        best
    }

    /// Two-loop recursion: approximate inverse Hessian times `g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.memory.len());
        for (s, y, rho) in self.memory.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.memory.last() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.memory.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One backtracked step. Returns the accepted state, its loss and valid
    /// count, or `None` when no admissible step decreases the loss.
    fn step(&mut self, state: &ClipState, (loss, valid): (f64, usize), g: &[f64]) -> Result<Option<(ClipState, f64, usize, Vec<f64>)>> {
        if !(dot(g, g) > 0.0) {
            return Ok(None);
        }
        let mut d = self.direction(g);
        let mut slope = dot(g, &d);
        if !(slope < 0.0) {
            self.memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(g, g);
        }
        let mut t = 1.0f64.min(self.step_cap(state, &d));
        let min_valid = (self.cfg.min_valid_ratio * valid as f64).ceil() as usize;
        for _ in 0..self.cfg.max_backtracks {
            let z: Vec<f64> = d.iter().map(|v| v * t).collect();
            let candidate = self.moved(state, &z);
            let (l, n) = candidate.evaluate(self.frames, &self.cfg.photometric)?;
            if l.is_finite() && n >= min_valid && l <= loss + self.cfg.armijo_c * t * slope {
                return Ok(Some((candidate, l, n, z)));
            }
            t *= 0.5;
        }
        self.memory.clear();
        Ok(None)
    }

    /// Descent for at most `iters` accepted steps or until the relative loss
    /// decrease of a step falls below the tolerance.
    fn run(&mut self, mut state: ClipState, iters: usize, log: &mut RunLog) -> std::result::Result<ClipState, Diverged> {
        let diverged = |iteration: usize, s: &ClipState| Diverged { iteration, last_state: Box::new(s.clone()) };
        let (mut loss, mut valid) = match state.evaluate(self.frames, &self.cfg.photometric) {
            Ok((l, n)) if l.is_finite() => (l, n),
            _ => return Err(diverged(0, &state)),
        };
        if log.entries.is_empty() {
            log.push(state.stage, loss, &state);
        }
        let mut g = match state.gradient(self.frames, &self.cfg.photometric) {
            Ok((l, g)) if l.is_finite() => self.gradient_vector(&state, &g),
            _ => return Err(diverged(0, &state)),
        };
        let mut stalls = 0;
        let mut recent = Vec::new();
        for it in 0..iters {
            let next = match self.step(&state, (loss, valid), &g) {
                Ok(Some(next)) => next,
                Ok(None) if stalls == 0 && !self.memory.is_empty() => {
                    stalls += 1;
                    continue;
                }
                Ok(None) => break,
                Err(_) => return Err(diverged(it, &state)),
            };
            let (next, l, n, s) = next;
            let g_next = match next.gradient(self.frames, &self.cfg.photometric) {
                Ok((_, g)) => self.gradient_vector(&next, &g),
                Err(_) => return Err(diverged(it, &state)),
            };
            let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                if self.memory.len() == HISTORY {
                    self.memory.remove(0);
                }
                self.memory.push((s, y, 1.0 / sy));
            }
            recent.push(loss);
            state = next;
            loss = l;
            valid = valid.max(n);
            g = g_next;
            stalls = 0;
            log.push(state.stage, loss, &state);
            let window = recent.len().min(WINDOW);
            let decrease = (recent[recent.len() - window] - loss) / window as f64;
            if recent.len() >= WINDOW && decrease <= self.cfg.tolerance * loss.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        Ok(state)
    }
}

/// Replace constant log-depth grids by the best constant depth among a
/// log-spaced set (0.25x to 8x the current value) that keeps enough valid
/// pixels, keeping the current one when nothing is better.
fn scan_constant_depth(state: ClipState, frames: &[ImageBuffer], cfg: &OptimConfig) -> ClipState {
    let constant = state.log_depths.iter().all(|g| g.log_depth.iter().all(|v| *v == g.log_depth[0]));
    if !constant {
        return state;
    }
    let Ok((mut best_loss, valid)) = state.evaluate(frames, &cfg.photometric) else { return state };
    let min_valid = (cfg.min_valid_ratio * valid as f64).ceil() as usize;
    let mut best = state.clone();
    for i in -8..=12 {
        let offset = i as f64 * 0.25 * std::f64::consts::LN_2;
        let mut candidate = state.clone();
        for g in &mut candidate.log_depths {
            g.log_depth.iter_mut().for_each(|v| *v += offset);
        }
        if let Ok((l, n)) = candidate.evaluate(frames, &cfg.photometric) {
            if l < best_loss && n >= min_valid {
                best_loss = l;
                best = candidate;
            }
        }
    }
    best
}

/// Stage 1: depth/pose warm-up at fixed focal, then focal-only descent.
pub fn run_stage1(state: ClipState, frames: &[ImageBuffer], cfg: &OptimConfig, log: &mut RunLog) -> std::result::Result<ClipState, OptimError> {
    if state.stage != Stage::WarmupDT {
        return Err(OptimError::Contract(contract(format!("stage 1 needs a state in warmup_dt, got {}", state.stage))));
    }
    let blocks = [Block::Depth, Block::Pose];
    let mut state = state;
    if !cfg.warmup_blur.is_empty() {
        let start = state.objective(frames, &cfg.photometric).unwrap_or(f64::INFINITY);
        if let Some(proposal) = coarse_proposal(&state, frames, cfg) {
            if proposal.objective(frames, &cfg.photometric).is_ok_and(|l| l < start) {
                state = proposal;
            }
        }
    } else if cfg.depth_scan {
        state = scan_constant_depth(state, frames, cfg);
    }
    let mut state = Descent::new(frames, cfg, &blocks).run(state, cfg.warmup_iters, log)?;
    state.stage = Stage::IntrinsicsOnly;
    let mut state = Descent::new(frames, cfg, &[Block::Focal]).run(state, cfg.intrinsics_iters, log)?;
    state.stage1_done = true;
    Ok(state)
}

/// Depth and pose fitted on progressively less blurred frames. `None` if any
/// level diverges.
fn coarse_proposal(state: &ClipState, frames: &[ImageBuffer], cfg: &OptimConfig) -> Option<ClipState> {
    let mut proposal = state.clone();
    for (level, &sigma) in cfg.warmup_blur.iter().enumerate() {
        let blurred: Vec<ImageBuffer> = frames.iter().map(|f| f.gaussian_blur(sigma)).collect();
        if level == 0 && cfg.depth_scan {
            proposal = scan_constant_depth(proposal, &blurred, cfg);
        }
        let mut scratch = RunLog::default();
        proposal = Descent::new(&blurred, cfg, &[Block::Depth, Block::Pose]).run(proposal, cfg.warmup_iters, &mut scratch).ok()?;
    }
    Some(proposal)
}

/// Stage 2: focal frozen at the averaged intrinsics, depth and pose refined.
pub fn run_stage2(state: ClipState, frames: &[ImageBuffer], cfg: &OptimConfig, log: &mut RunLog) -> std::result::Result<ClipState, OptimError> {
    if !state.stage1_done {
        return Err(OptimError::Contract(contract("stage 2 needs a completed stage 1")));
    }
    let mut state = state;
    let k = average_intrinsics(&vec![state.intrinsics(); frames.len()]).expect("non-empty, single size");
    state.log_fx = k.fx.ln();
    state.log_fy = k.fy.ln();
    state.stage = Stage::FrozenKDT;
    Ok(Descent::new(frames, cfg, &[Block::Depth, Block::Pose]).run(state, cfg.stage2_iters, log)?)
}

/// Arithmetic mean of the focal lengths; principal point stays centered.
pub fn average_intrinsics(ks: &[Intrinsics]) -> Result<Intrinsics> {
    let first = ks.first().ok_or_else(|| contract("cannot average an empty intrinsics list"))?;
    if ks.iter().any(|k| k.width != first.width || k.height != first.height) {
        return Err(contract("intrinsics to average describe different image sizes"));
    }
    let n = ks.len() as f64;
    let fx = ks.iter().map(|k| k.fx).sum::<f64>() / n;
    let fy = ks.iter().map(|k| k.fy).sum::<f64>() / n;
    Intrinsics::centered(fx, fy, first.width, first.height)
}

/// Result of [`fit_clip`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ClipState,
    pub prediction: PredictionSet,
    pub log: RunLog,
}

/// Both stages from an explicit initial state.
pub fn fit_from(state: ClipState, frames: &[ImageBuffer], cfg: &OptimConfig) -> Result<FitResult> {
    let mut log = RunLog::default();
    let state = run_stage1(state, frames, cfg, &mut log)?;
    let state = run_stage2(state, frames, cfg, &mut log)?;
    Ok(FitResult { prediction: state.prediction(), state, log })
}

/// Initialize and run both stages.
pub fn fit_clip(frames: &[ImageBuffer], k_init: Option<&Intrinsics>, cfg: &OptimConfig) -> Result<FitResult> {
    fit_from(init_state(frames, k_init, cfg)?, frames, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_clip, Motion, SceneKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick() -> OptimConfig {
        OptimConfig { warmup_iters: 10, intrinsics_iters: 5, stage2_iters: 10, warmup_blur: vec![2.0], ..Default::default() }
    }

    #[test]
    fn init_state_defaults() {
        let frames = vec![ImageBuffer::filled(480, 640, 1, 0.5); 2];
        let s = init_state(&frames, None, &OptimConfig::default()).unwrap();
        assert!((s.intrinsics().fx - 768.0).abs() < 1e-9 && (s.intrinsics().fy - 768.0).abs() < 1e-9);
        assert!(s.depths().iter().all(|d| d.data.iter().all(|v| *v == 1.0)));
        assert!(s.poses.iter().all(|p| *p == Pose::identity()));
        assert_eq!(s.stage, Stage::WarmupDT);

        let k = Intrinsics::centered(500.0, 450.0, 640, 480).unwrap();
        let s = init_state(&frames, Some(&k), &OptimConfig::default()).unwrap();
        assert!((s.intrinsics().fx - 500.0).abs() < 1e-9 && (s.intrinsics().fy - 450.0).abs() < 1e-9);

        assert!(init_state(&frames[..1], None, &OptimConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        assert!(OptimConfig { lr_depth: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimConfig { warmup_blur: vec![-1.0], ..Default::default() }.validate().is_err());
        assert!(OptimConfig { min_valid_ratio: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn average_intrinsics_examples() {
        let a = Intrinsics::centered(100.0, 100.0, 64, 48).unwrap();
        let b = Intrinsics::centered(200.0, 300.0, 64, 48).unwrap();
        assert_eq!(average_intrinsics(&[a, a]).unwrap(), a);
        assert_eq!(average_intrinsics(&[a]).unwrap(), a);
        let m = average_intrinsics(&[a, b]).unwrap();
        assert_eq!((m.fx, m.fy, m.cx, m.cy), (150.0, 200.0, 32.0, 24.0));
        let c = Intrinsics::centered(100.0, 100.0, 32, 32).unwrap();
        assert!(average_intrinsics(&[a, c]).is_err());
        assert!(average_intrinsics(&[]).is_err());
    }

    #[test]
    fn pull_back_is_transpose_of_upsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut grid = DepthGrid::constant(13, 9, 4, 0.0);
        grid.log_depth.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let v: Vec<f64> = (0..13 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = grid.upsample().data.iter().zip(&v).map(|(d, w)| d.ln() * w).sum();
        let rhs: f64 = grid.log_depth.iter().zip(grid.pull_back(&v)).map(|(g, p)| g * p).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn upsample_hits_grid_nodes_at_corners() {
        let mut grid = DepthGrid::constant(9, 9, 4, 0.0);
        grid.log_depth.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        let d = grid.upsample();
        assert!((d.get(0, 0).ln() - grid.log_depth[0]).abs() < 1e-12);
        assert!((d.get(8, 8).ln() - grid.log_depth[8]).abs() < 1e-12);
        assert!((d.get(4, 4).ln() - grid.log_depth[4]).abs() < 1e-12);
    }

    #[test]
    fn constant_clip_is_a_no_op() {
        let frames = vec![ImageBuffer::filled(24, 24, 1, 0.3); 3];
        let state = init_state(&frames, None, &quick()).unwrap();
        let fit = fit_from(state.clone(), &frames, &quick()).unwrap();
        assert_eq!(fit.log.entries.len(), 1);
        assert_eq!(fit.log.entries[0].loss, 0.0);
        assert_eq!(fit.state.log_depths, state.log_depths);
        assert_eq!(fit.state.poses, state.poses);
        assert_eq!(fit.state.log_fx, state.log_fx);
    }

    #[test]
    fn stage_preconditions() {
        let frames = vec![ImageBuffer::filled(24, 24, 1, 0.3); 2];
        let mut state = init_state(&frames, None, &quick()).unwrap();
        assert!(matches!(run_stage2(state.clone(), &frames, &quick(), &mut RunLog::default()), Err(OptimError::Contract(_))));
        state.stage = Stage::FrozenKDT;
        assert!(matches!(run_stage1(state, &frames, &quick(), &mut RunLog::default()), Err(OptimError::Contract(_))));
    }

    #[test]
    fn short_fit_keeps_gauge_monotone_log_and_frozen_k() {
        let clip = make_clip(SceneKind::RandomHeightfield, 3, 32, Motion::default(), 5).unwrap();
        let k = clip.truth.k.with_focal(clip.truth.k.fx * 1.1, clip.truth.k.fy * 1.1);
        let cfg = quick();
        let mut log = RunLog::default();
        let s1 = run_stage1(init_state(&clip.frames, Some(&k), &cfg).unwrap(), &clip.frames, &cfg, &mut log).unwrap();
        assert!(s1.stage1_done && s1.stage == Stage::IntrinsicsOnly);
        let before = log.entries.len();
        let s2 = run_stage2(s1.clone(), &clip.frames, &cfg, &mut log).unwrap();
        assert!(log.is_monotone());
        assert!(log.entries.len() > 1);
        assert_eq!(s2.poses[0], Pose::identity());
        assert_eq!(s2.stage, Stage::FrozenKDT);
        let stage2: Vec<_> = log.entries[before..].iter().collect();
        assert!(stage2.iter().all(|e| e.stage == Stage::FrozenKDT));
        assert!(stage2.windows(2).all(|w| w[0].fx.to_bits() == w[1].fx.to_bits() && w[0].fy.to_bits() == w[1].fy.to_bits()));
        assert_eq!(s2.log_fx.to_bits(), s1.log_fx.to_bits());
        let csv = log.to_csv();
        assert!(csv.starts_with("step,stage,loss,fx,fy\n"));
        assert_eq!(csv.lines().count(), log.entries.len() + 1);
    }

    #[test]
    fn prediction_is_median_normalized() {
        let frames = vec![ImageBuffer::filled(16, 16, 1, 0.3); 2];
        let mut s = init_state(&frames, None, &quick()).unwrap();
        s.log_depths[0].log_depth.iter_mut().for_each(|v| *v = 3f64.ln());
        s.poses[1] = Pose::from_axis_angle(nalgebra::Vector3::zeros(), nalgebra::Vector3::new(0.6, 0.0, 0.0));
        let p = s.prediction();
        assert!((p.depths[0].median() - 1.0).abs() < 1e-12);
        assert!((p.poses[1].translation.x - 0.2).abs() < 1e-12);
        assert!((p.depths[1].get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
    }
}
