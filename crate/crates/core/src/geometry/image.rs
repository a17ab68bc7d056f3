use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::Pixel;

/// Row-major, channel-interleaved image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(contract(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(contract(format!("image data length {} does not match {height}x{width}x{channels}", data.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(contract("image contains non-finite values"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Build an image from `f(x, y, c)`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Mean over channels, for single-channel consumers such as corner detection.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks_exact(self.channels).map(|px| px.iter().sum::<f64>() / self.channels as f64).collect();
        ImageBuffer { height: self.height, width: self.width, channels: 1, data }
    }

    /// Separable Gaussian blur with edge clamping; `sigma <= 0` returns a copy.
    pub fn gaussian_blur(&self, sigma: f64) -> ImageBuffer {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let (w, h, ch) = (self.width as isize, self.height as isize, self.channels);
        let pass = |src: &ImageBuffer, horizontal: bool| {
            let mut out = ImageBuffer::filled(src.height, src.width, ch, 0.0);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        let mut acc = 0.0;
                        for (i, k) in kernel.iter().enumerate() {
                            let o = i as isize - radius;
                            let (sx, sy) = if horizontal { ((x + o).clamp(0, w - 1), y) } else { (x, (y + o).clamp(0, h - 1)) };
                            acc += k * src.get(sx as usize, sy as usize, c);
                        }
                        out.set(x as usize, y as usize, c, acc);
                    }
                }
            }
            out
        };
        pass(&pass(self, true), false)
    }

    /// Bilinear sample written into `out` (length = channels). Returns whether
    /// all four neighbors are inside the image; on `false`, `out` is zeroed.
    #[inline]
    pub fn sample_into(&self, p: Pixel, out: &mut [f64]) -> bool {
        match self.neighbors(p) {
            Some(n) => {
                for (c, o) in out.iter_mut().enumerate().take(self.channels) {
                    *o = n.value(self, c);
                }
                true
            }
            None => {
                out.iter_mut().for_each(|o| *o = 0.0);
                false
            }
        }
    }

    /// Like [`ImageBuffer::sample_into`] but also writes the spatial gradient
    /// `(dI/du, dI/dv)` of the bilinear interpolant per channel.
    #[inline]
    pub fn sample_with_gradient(&self, p: Pixel, value: &mut [f64], grad: &mut [[f64; 2]]) -> bool {
        match self.neighbors(p) {
            Some(n) => {
                for c in 0..self.channels {
                    value[c] = n.value(self, c);
                    grad[c] = n.gradient(self, c);
                }
                true
            }
            None => {
                value.iter_mut().for_each(|o| *o = 0.0);
                grad.iter_mut().for_each(|g| *g = [0.0; 2]);
                false
            }
        }
    }

    #[inline]
    fn neighbors(&self, p: Pixel) -> Option<Neighbors> {
        let (w, h) = (self.width, self.height);
        if w < 2 || h < 2 {
            return None;
        }
        let max_u = (w - 1) as f64;
        let max_v = (h - 1) as f64;
        // Round-off in a warp that should land on a pixel center would
        // otherwise blend in a neighbor with a weight near 1e-16.
        let snap = |x: f64| {
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                r
            } else {
                x
            }
        };
        let p = Pixel::new(snap(p.u), snap(p.v));
        if !(p.u >= 0.0 && p.v >= 0.0 && p.u <= max_u && p.v <= max_v) {
            return None;
        }
        // The last row/column is reached with fraction 1 from the previous cell.
        let x0 = (p.u.floor() as usize).min(w - 2);
        let y0 = (p.v.floor() as usize).min(h - 2);
        Some(Neighbors { x0, y0, ax: p.u - x0 as f64, ay: p.v - y0 as f64 })
    }
}

struct Neighbors {
    x0: usize,
    y0: usize,
    ax: f64,
    ay: f64,
}

impl Neighbors {
    #[inline]
    fn corners(&self, img: &ImageBuffer, c: usize) -> [f64; 4] {
        [img.get(self.x0, self.y0, c), img.get(self.x0 + 1, self.y0, c), img.get(self.x0, self.y0 + 1, c), img.get(self.x0 + 1, self.y0 + 1, c)]
    }

    #[inline]
    fn value(&self, img: &ImageBuffer, c: usize) -> f64 {
        let [i00, i10, i01, i11] = self.corners(img, c);
        let top = i00 + self.ax * (i10 - i00);
        let bottom = i01 + self.ax * (i11 - i01);
        top + self.ay * (bottom - top)
    }

    #[inline]
    fn gradient(&self, img: &ImageBuffer, c: usize) -> [f64; 2] {
        let [i00, i10, i01, i11] = self.corners(img, c);
        let du = (1.0 - self.ay) * (i10 - i00) + self.ay * (i11 - i01);
        let dv = (1.0 - self.ax) * (i01 - i00) + self.ax * (i11 - i10);
        [du, dv]
    }
}

/// Bilinear interpolation of all channels at `p`, with the in-bounds flag.
pub fn bilinear_sample(img: &ImageBuffer, p: Pixel) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; img.channels];
    let ok = img.sample_into(p, &mut out);
    (out, ok)
}

/// Per-pixel depth, strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(contract(format!("depth length {} does not match {height}x{width}", data.len())));
        }
        if let Some(bad) = data.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(contract(format!("depth values must be positive and finite, found {bad}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn scaled(&self, s: f64) -> DepthMap {
        DepthMap { height: self.height, width: self.width, data: self.data.iter().map(|d| d * s).collect() }
    }

    pub fn median(&self) -> f64 {
        crate::stats::median(&self.data)
    }
}

/// Binary validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![true; height * width] }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect() }
    }
}
