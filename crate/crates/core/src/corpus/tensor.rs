//! `SSTF` tensor files, PNG frames and prediction directories.
//!
//! Tensor layout: `b"SSTF"`, version byte (1), dtype byte (1 = f32 LE),
//! ndim byte, `ndim` little-endian u32 dims, then the row-major payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::PredictionSet;
use crate::error::{contract, Error, Result};
use crate::geometry::{DepthMap, ImageBuffer, Intrinsics, Pose};

const MAGIC: &[u8; 4] = b"SSTF";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(contract(format!("at most 255 dims, got {}", dims.len())));
        }
        match element_count(&dims) {
            Some(n) if n == data.len() => Ok(Self { dims, data }),
            _ => Err(contract(format!("{} values do not fill dims {dims:?}", data.len()))),
        }
    }
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, t.dims.len() as u8]);
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a whole tensor file; nothing is returned unless every byte checks out.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let need = |offset: usize, len: usize, what: &str| {
        if bytes.len() < offset + len {
            Err(format_error(bytes.len(), format!("truncated {what}")))
        } else {
            Ok(&bytes[offset..offset + len])
        }
    };
    if need(0, 4, "magic")? != MAGIC {
        return Err(format_error(0, "bad magic, expected SSTF"));
    }
    let header = need(4, 3, "header")?;
    if header[0] != VERSION {
        return Err(format_error(4, format!("unsupported version {}", header[0])));
    }
    if header[1] != DTYPE_F32 {
        return Err(format_error(5, format!("unsupported dtype {}", header[1])));
    }
    let ndim = header[2] as usize;
    let dims: Vec<u32> = need(7, 4 * ndim, "dims")?.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let start = 7 + 4 * ndim;
    let count = element_count(&dims).filter(|n| n.checked_mul(4).is_some()).ok_or_else(|| format_error(7, "dims overflow"))?;
    let payload = need(start, 4 * count, "payload")?;
    if bytes.len() != start + 4 * count {
        return Err(format_error(start + 4 * count, "trailing bytes after payload"));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor { dims, data })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

/// Depth is stored as an `[H, W]` f32 tensor.
pub fn save_depth(path: impl AsRef<Path>, d: &DepthMap) -> Result<()> {
    let t = Tensor::new(vec![d.height as u32, d.width as u32], d.data.iter().map(|&v| v as f32).collect())?;
    write_tensor(path, &t)
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let t = read_tensor(path)?;
    if t.dims.len() != 2 {
        return Err(format_error(6, format!("depth tensor must be 2-D, got {} dims", t.dims.len())));
    }
    DepthMap::new(t.dims[0] as usize, t.dims[1] as usize, t.data.iter().map(|&v| v as f64).collect())
}

/// Reads any PNG as 8-bit RGB, intensities divided by 255.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    ImageBuffer::new(h as usize, w as usize, 3, data)
}

/// Writes an 8-bit gray or RGB PNG, clamping to `[0, 1]`.
pub fn save_png(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let color = if img.channels == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, color)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Camera {
    k: Intrinsics,
    poses: Vec<Pose>,
}

const CAMERA_FILE: &str = "camera.json";

fn depth_name(i: usize) -> String {
    format!("depth_{i:04}.sstf")
}

/// Writes `camera.json` (intrinsics and camera-to-world poses) and one
/// `depth_NNNN.sstf` per frame.
pub fn write_prediction(dir: impl AsRef<Path>, p: &PredictionSet) -> Result<()> {
    p.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let camera = Camera { k: p.k, poses: p.poses.clone() };
    fs::write(dir.join(CAMERA_FILE), serde_json::to_string_pretty(&camera)?)?;
    for (i, d) in p.depths.iter().enumerate() {
        save_depth(dir.join(depth_name(i)), d)?;
    }
    Ok(())
}

pub fn read_prediction(dir: impl AsRef<Path>) -> Result<PredictionSet> {
    let dir = dir.as_ref();
    let camera: Camera = serde_json::from_slice(&fs::read(dir.join(CAMERA_FILE))?)?;
    let depths = (0..camera.poses.len()).map(|i| load_depth(dir.join(depth_name(i)))).collect::<Result<Vec<_>>>()?;
    let p = PredictionSet { depths, poses: camera.poses, k: camera.k };
    p.validate()?;
    Ok(p)
}

pub fn is_prediction_dir(dir: &Path) -> bool {
    dir.join(CAMERA_FILE).is_file()
}
