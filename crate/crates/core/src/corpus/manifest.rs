//! JSON Lines clip manifests and embedding files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub frame_paths: Vec<PathBuf>,
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate_pairs: Option<usize>,
}

impl ClipManifest {
    pub fn new(clip_id: impl Into<String>, frame_paths: Vec<PathBuf>, fps: f64) -> Result<Self> {
        let m = Self { clip_id: clip_id.into(), frame_paths, fps, mvs: None, cluster_id: None, degenerate_pairs: None };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_paths.len() < 2 {
            return Err(contract(format!("clip {} has {} frames, need at least 2", self.clip_id, self.frame_paths.len())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.frame_paths.iter().find(|p| !seen.insert(*p)) {
            return Err(contract(format!("clip {} lists {} twice", self.clip_id, dup.display())));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(contract(format!("clip {} has fps {}", self.clip_id, self.fps)));
        }
        if self.mvs.is_some_and(|v| !v.is_finite()) {
            return Err(contract(format!("clip {} has a non-finite mvs", self.clip_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub clip_id: String,
    pub vector: Vec<f64>,
}

fn parse_lines<T: DeserializeOwned>(text: &str, mut check: impl FnMut(&T) -> Result<()>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() {
            let value: T = serde_json::from_str(body).map_err(|e| Error::Format { offset, message: e.to_string() })?;
            check(&value).map_err(|e| Error::Format { offset, message: e.to_string() })?;
            out.push(value);
        }
        offset += line.len();
    }
    Ok(out)
}

/// One clip per line; blank lines are skipped and clip ids must be unique.
pub fn parse_manifest(text: &str) -> Result<Vec<ClipManifest>> {
    let mut ids = HashSet::new();
    parse_lines(text, |m: &ClipManifest| {
        m.validate()?;
        if !ids.insert(m.clip_id.clone()) {
            return Err(contract(format!("duplicate clip id {}", m.clip_id)));
        }
        Ok(())
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipManifest>> {
    parse_manifest(&fs::read_to_string(path)?)
}

pub fn write_manifest(path: impl AsRef<Path>, clips: &[ClipManifest]) -> Result<()> {
    let mut text = String::new();
    for c in clips {
        text.push_str(&serde_json::to_string(c)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Embedding vectors must be finite and share one dimension.
pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingRecord>> {
    let mut dim = None;
    parse_lines(text, |r: &EmbeddingRecord| {
        if r.vector.is_empty() || !r.vector.iter().all(|v| v.is_finite()) {
            return Err(contract(format!("embedding for {} is empty or non-finite", r.clip_id)));
        }
        match dim {
            Some(d) if d != r.vector.len() => Err(contract(format!("embedding for {} has dimension {}, expected {d}", r.clip_id, r.vector.len()))),
            _ => {
                dim = Some(r.vector.len());
                Ok(())
            }
        }
    })
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    parse_embeddings(&fs::read_to_string(path)?)
}
