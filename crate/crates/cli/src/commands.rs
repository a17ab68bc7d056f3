use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use sfmkit::corpus::{
    detect_shots, is_prediction_dir, kmeans_assign, load_png, read_embeddings, read_manifest, read_prediction, save_png, shot_ranges, write_manifest,
    write_prediction, ClipManifest,
};
use sfmkit::curriculum::{build_stats, filter_floor, select_subset};
use sfmkit::distill::{distill_loss as distill_term, total_loss, DepthSpace, DistillConfig, PredictionSet};
use sfmkit::geometry::{ImageBuffer, Intrinsics};
use sfmkit::metrics::{evaluate_corpus, Alignment, DepthEvalConfig, DepthScaling, EvalConfig};
use sfmkit::mvs::{video_mvs, MvsConfig, MvsRecord};
use sfmkit::optim::{fit_clip, OptimConfig};
use sfmkit::synth::{make_clip, Motion, SceneKind};

use crate::{
    AlignArg, ClusterArgs, CurriculumArgs, DepthSpaceArg, DistillArgs, EvalArgs, FitArgs, KindArg, ScalingArg, ScoreArgs, ShotsArgs, SynthArgs, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn emit(json: bool, value: &impl Serialize) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// PNG files of a directory in file-name order.
fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    frames.sort();
    Ok(frames)
}

/// Directory name used as a clip id; a directory called `frames` takes its parent's name.
fn clip_name(dir: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned());
    let own = name(dir).unwrap_or_else(|| "clip".into());
    if own == "frames" {
        dir.parent().and_then(name).unwrap_or(own)
    } else {
        own
    }
}

fn load_frames(paths: &[PathBuf]) -> Result<Vec<ImageBuffer>> {
    let frames = paths.par_iter().map(|p| load_png(p).with_context(|| format!("reading {}", p.display()))).collect::<Result<Vec<_>>>()?;
    if let Some(bad) = frames.iter().position(|f| !f.same_shape(&frames[0])) {
        bail!("{} differs in size from {}", paths[bad].display(), paths[0].display());
    }
    Ok(frames)
}

pub fn shots(a: &ShotsArgs, json: bool) -> Result<()> {
    if !(a.threshold.is_finite() && a.threshold > 0.0) {
        return Err(usage("--threshold must be positive"));
    }
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(usage("--fps must be positive"));
    }
    let mut clips = Vec::new();
    let mut cuts_by_dir = BTreeMap::new();
    for dir in &a.frames_dirs {
        let paths = list_frames(dir)?;
        if paths.len() < 2 {
            bail!("{} holds {} PNG frames, need at least 2", dir.display(), paths.len());
        }
        let frames = load_frames(&paths)?;
        let cuts = detect_shots(&frames, a.threshold)?;
        let ranges = shot_ranges(paths.len(), &cuts, a.min_len.max(2));
        let name = clip_name(dir);
        for (k, r) in ranges.iter().enumerate() {
            let id = if ranges.len() == 1 { name.clone() } else { format!("{name}_{k:03}") };
            clips.push(ClipManifest::new(id, paths[r.clone()].to_vec(), a.fps)?);
        }
        cuts_by_dir.insert(dir.display().to_string(), cuts);
    }
    write_manifest(&a.out, &clips)?;
    // Re-read so duplicate ids across directories are reported.
    read_manifest(&a.out)?;
    eprintln!("{} clips written to {}", clips.len(), a.out.display());
    emit(json, &json!({ "manifest": a.out, "clips": clips.len(), "cuts": cuts_by_dir }))
}

pub fn score(a: &ScoreArgs, json: bool) -> Result<()> {
    if a.max_matches < 8 {
        return Err(usage("--max-matches must be at least 8"));
    }
    let mut clips = read_manifest(&a.manifest)?;
    let cfg = MvsConfig { seed: a.seed, max_matches: a.max_matches, ..Default::default() };
    let records = clips
        .par_iter()
        .map(|c| {
            let frames = load_frames(&c.frame_paths)?;
            video_mvs(&c.clip_id, &frames, &cfg).with_context(|| format!("scoring clip {}", c.clip_id))
        })
        .collect::<Vec<Result<MvsRecord>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for (c, r) in clips.iter_mut().zip(&records) {
        c.mvs = Some(r.mvs);
        c.degenerate_pairs = Some(r.degenerate_pairs);
    }
    let out = a.out.as_ref().unwrap_or(&a.manifest);
    write_manifest(out, &clips)?;
    eprintln!("scored {} clips into {}", clips.len(), out.display());
    emit(json, &records)
}

pub fn curriculum(a: &CurriculumArgs, json: bool) -> Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(usage("--alpha must be in [0, 1]"));
    }
    if !(0.0..1.0).contains(&a.floor) {
        return Err(usage("--floor must be in [0, 1)"));
    }
    let clips = read_manifest(&a.manifest)?;
    let records = clips
        .iter()
        .map(|c| {
            let mvs = c.mvs.with_context(|| format!("clip {} has no mvs; run score first", c.clip_id))?;
            Ok(MvsRecord {
                clip_id: c.clip_id.clone(),
                per_pair_scores: Vec::new(),
                mvs,
                pair_count: c.frame_paths.len() - 1,
                degenerate_pairs: c.degenerate_pairs.unwrap_or(0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // Both rules read the ECDF of the whole input corpus.
    let stats = build_stats(&records)?;
    let floor: Vec<String> = filter_floor(&records, a.floor)?.into_iter().map(|r| r.clip_id).collect();
    let subset = select_subset(&stats, a.alpha)?;
    let kept: Vec<ClipManifest> = clips.into_iter().filter(|c| subset.contains(&c.clip_id) && floor.contains(&c.clip_id)).collect();
    write_manifest(&a.out, &kept)?;
    eprintln!("kept {} of {} clips", kept.len(), records.len());
    let ids: Vec<&str> = kept.iter().map(|c| c.clip_id.as_str()).collect();
    emit(json, &json!({ "alpha": a.alpha, "floor": a.floor, "input": records.len(), "kept": ids }))
}

pub fn cluster(a: &ClusterArgs, json: bool) -> Result<()> {
    if a.k == 0 || a.max_iters == 0 {
        return Err(usage("--k and --max-iters must be positive"));
    }
    let records = read_embeddings(&a.embeddings)?;
    let result = kmeans_assign(&records, a.k, a.seed, a.max_iters)?;
    let by_id: BTreeMap<&str, usize> = records.iter().zip(&result.assignments).map(|(r, &c)| (r.clip_id.as_str(), c)).collect();
    match &a.manifest {
        Some(path) => {
            let mut clips = read_manifest(path)?;
            let known: HashMap<&str, usize> = clips.iter().enumerate().map(|(i, c)| (c.clip_id.as_str(), i)).collect();
            if let Some(missing) = by_id.keys().find(|id| !known.contains_key(*id)) {
                bail!("embedding for clip {missing} has no manifest entry");
            }
            for c in &mut clips {
                c.cluster_id = by_id.get(c.clip_id.as_str()).copied();
            }
            write_manifest(&a.out, &clips)?;
        }
        None => {
            let mut text = String::new();
            for (r, c) in records.iter().zip(&result.assignments) {
                text.push_str(&serde_json::to_string(&json!({ "clip_id": r.clip_id, "cluster_id": c }))?);
                text.push('\n');
            }
            fs::write(&a.out, text)?;
        }
    }
    eprintln!("{} clips in {} clusters, inertia {:.6e}, {} re-seeds", records.len(), a.k, result.inertia(), result.reseeds);
    emit(
        json,
        &json!({
            "k": a.k,
            "inertia": result.inertia(),
            "iterations": result.iterations,
            "reseeds": result.reseeds,
            "assignments": by_id,
        }),
    )
}

pub fn synth(a: &SynthArgs, json: bool) -> Result<()> {
    if a.frames < 2 || a.size < 16 {
        return Err(usage("--frames must be at least 2 and --size at least 16"));
    }
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(usage("--fps must be positive"));
    }
    let kind = match a.kind {
        KindArg::Plane => SceneKind::TexturedPlane,
        KindArg::Heightfield => SceneKind::RandomHeightfield,
        KindArg::Rotation => SceneKind::RotationOnly,
    };
    let clip = make_clip(kind, a.frames, a.size, Motion { baseline: a.baseline, rotation_deg: a.rot }, a.seed).map_err(|e| usage(e.to_string()))?;
    let frames_dir = a.out.join("frames");
    fs::create_dir_all(&frames_dir)?;
    let paths: Vec<PathBuf> = (0..a.frames).map(|i| frames_dir.join(format!("frame_{i:04}.png"))).collect();
    for (p, f) in paths.iter().zip(&clip.frames) {
        save_png(p, f)?;
    }
    write_prediction(a.out.join("truth"), &clip.truth)?;
    let id = a.id.clone().unwrap_or_else(|| clip_name(&a.out));
    let manifest = ClipManifest::new(id.clone(), paths, a.fps)?;
    write_manifest(a.out.join("clip.jsonl"), std::slice::from_ref(&manifest))?;
    eprintln!("wrote {} frames of clip {id} to {}", a.frames, a.out.display());
    emit(json, &json!({ "clip_id": id, "frames": a.frames, "focal": clip.truth.k.fx, "out": a.out }))
}

#[derive(Serialize)]
struct FitSummary {
    clip_id: String,
    loss: f64,
    fx: f64,
    fy: f64,
    steps: usize,
    monotone: bool,
}

pub fn fit(a: &FitArgs, json: bool) -> Result<()> {
    let cfg: OptimConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => OptimConfig::default(),
    };
    cfg.validate()?;
    if a.focal_init.is_some_and(|f| !(f.is_finite() && f > 0.0)) {
        return Err(usage("--focal-init must be positive"));
    }
    let clips: Vec<(String, Vec<PathBuf>)> = if a.input.is_dir() {
        vec![(clip_name(&a.input), list_frames(&a.input)?)]
    } else {
        read_manifest(&a.input)?.into_iter().map(|c| (c.clip_id, c.frame_paths)).collect()
    };
    let mut summaries = Vec::new();
    for (id, paths) in &clips {
        let frames = load_frames(paths)?;
        let k_init = a.focal_init.map(|f| Intrinsics::centered(f, f, frames[0].width, frames[0].height)).transpose()?;
        let result = fit_clip(&frames, k_init.as_ref(), &cfg).with_context(|| format!("fitting clip {id}"))?;
        let dir = a.out.join(id);
        write_prediction(&dir, &result.prediction)?;
        fs::write(dir.join("log.csv"), result.log.to_csv())?;
        let summary = FitSummary {
            clip_id: id.clone(),
            loss: result.log.entries.last().map_or(f64::NAN, |e| e.loss),
            fx: result.prediction.k.fx,
            fy: result.prediction.k.fy,
            steps: result.log.entries.len(),
            monotone: result.log.is_monotone(),
        };
        eprintln!("{id}: loss {:.4e} fx {:.3} after {} steps", summary.loss, summary.fx, summary.steps);
        summaries.push(summary);
    }
    emit(json, &summaries)
}

pub fn distill_loss(a: &DistillArgs, json: bool) -> Result<()> {
    if !(a.lambda.is_finite() && a.lambda >= 0.0) {
        return Err(usage("--lambda must be non-negative"));
    }
    let depth_space = match a.depth_space {
        DepthSpaceArg::Raw => DepthSpace::Raw,
        DepthSpaceArg::Inverse => DepthSpace::Inverse,
    };
    let cfg = DistillConfig { lambda_distill: a.lambda, depth_space, ..Default::default() };
    let student = read_prediction(&a.student).with_context(|| format!("reading {}", a.student.display()))?;
    let expert = read_prediction(&a.expert).with_context(|| format!("reading {}", a.expert.display()))?;
    let distill = distill_term(&student, &expert, &cfg)?;
    let total = total_loss(a.photometric, distill, &cfg)?;
    let report = json!({ "distill": distill, "lambda_distill": a.lambda, "photometric": a.photometric, "total": total });
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    eprintln!("distill {distill:.6e}, total {total:.6e}");
    emit(json, &report)
}

/// Prediction directories under `root`: `root` itself, or its sub-directories
/// holding one directly or in `truth/`. Keyed by directory name.
fn prediction_dirs(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut found = BTreeMap::new();
    if is_prediction_dir(root) {
        found.insert(clip_name(root), root.to_path_buf());
        return Ok(found);
    }
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let dir = entry?.path();
        if !dir.is_dir() {
            continue;
        }
        let name = clip_name(&dir);
        if is_prediction_dir(&dir) {
            found.insert(name, dir);
        } else if is_prediction_dir(&dir.join("truth")) {
            found.insert(name, dir.join("truth"));
        }
    }
    if found.is_empty() {
        bail!("no prediction directories under {}", root.display());
    }
    Ok(found)
}

pub fn eval(a: &EvalArgs, json: bool) -> Result<()> {
    if a.rpe_delta == 0 || !(a.max_depth.is_finite() && a.max_depth > 0.0) {
        return Err(usage("--rpe-delta and --max-depth must be positive"));
    }
    let scaling = match a.scaling {
        ScalingArg::Median => DepthScaling::Median,
        ScalingArg::None => DepthScaling::None,
    };
    let align = match a.align {
        AlignArg::Sim3 => Alignment::Sim3,
        AlignArg::Se3 => Alignment::Se3,
    };
    let cfg = EvalConfig { depth: DepthEvalConfig { max_depth: a.max_depth, scaling, ..Default::default() }, align, rpe_delta: a.rpe_delta };
    cfg.depth.validate().map_err(|e| usage(e.to_string()))?;
    let preds = prediction_dirs(&a.pred)?;
    let gts = prediction_dirs(&a.gt)?;
    let single = preds.len() == 1 && gts.len() == 1;
    let items = preds
        .iter()
        .map(|(id, dir)| {
            let gt_dir = if single { gts.values().next() } else { gts.get(id) };
            let gt_dir = gt_dir.with_context(|| format!("no ground truth for clip {id}"))?;
            let load = |d: &Path| read_prediction(d).with_context(|| format!("reading {}", d.display()));
            Ok((id.clone(), load(dir)?, load(gt_dir)?))
        })
        .collect::<Result<Vec<(String, PredictionSet, PredictionSet)>>>()?;
    let metrics = evaluate_corpus(&items, &cfg)?;
    if let Some(out) = &a.out {
        write_json(out, &metrics)?;
    }
    eprintln!("{} clips: AbsRel {:.4} ATE {:.4} RFE {:.4}", metrics.clips.len(), metrics.depth.abs_rel, metrics.trajectory.ate, metrics.rfe);
    emit(json, &metrics)
}
