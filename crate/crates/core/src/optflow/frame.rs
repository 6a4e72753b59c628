use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MIN_EXTENT: usize = 16;

/// Grayscale frame, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGray {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FrameGray {
    /// Builds a frame, clamping values into `[0, 1]` (NaN becomes 0).
    pub fn new(height: usize, width: usize, mut values: Vec<f32>) -> Result<Self> {
        if height < MIN_EXTENT || width < MIN_EXTENT {
            return Err(Error::contract(format!(
                "frame extents must be at least {MIN_EXTENT}, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::contract(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(FrameGray {
            height,
            width,
            values,
        })
    }

    /// Luminance conversion of interleaved RGB samples in `[0, 1]`.
    pub fn from_rgb(height: usize, width: usize, rgb: &[f32]) -> Result<Self> {
        if rgb.len() != 3 * height * width {
            return Err(Error::contract("rgb buffer length must be 3*h*w"));
        }
        let lum = rgb
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Self::new(height, width, lum)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Area-weighted bilinear resampling to a new size.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let src = if height < self.height || width < self.width {
            // Pre-blur against aliasing when shrinking.
            let ratio = (self.height as f32 / height as f32).max(self.width as f32 / width as f32);
            let sigma = 0.5 * (ratio - 1.0).max(0.0);
            if sigma > 0.1 {
                separable_blur(
                    &self.values,
                    self.height,
                    self.width,
                    &gaussian_kernel(sigma),
                )
            } else {
                self.values.clone()
            }
        } else {
            self.values.clone()
        };
        let values = resample_bilinear(&src, self.height, self.width, height, width);
        Self::new(height, width, values)
    }

    pub fn checksum(&self) -> [u8; 32] {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        crate::util::sha256(&bytes)
    }
}

/// Per-pixel displacement field from one frame to the next, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

const FLOW_MAGIC: &[u8; 4] = b"FLOW";

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0f32, |m, x| m.max(x.abs()))
    }

    /// Mean endpoint error against a constant ground-truth displacement over
    /// the central `fraction` of each axis.
    pub fn central_endpoint_error(&self, truth: (f32, f32), fraction: f32) -> f64 {
        let (y0, y1) = central_range(self.height, fraction);
        let (x0, x1) = central_range(self.width, fraction);
        let mut sum = 0.0f64;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * self.width + x;
                let du = (self.u[i] - truth.0) as f64;
                let dv = (self.v[i] - truth.1) as f64;
                sum += (du * du + dv * dv).sqrt();
            }
        }
        sum / ((y1 - y0) * (x1 - x0)) as f64
    }

    /// Debug dump: `FLOW`, u16 height, u16 width, then u and v as LE f32.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(FLOW_MAGIC)?;
        w.write_all(&(self.height as u16).to_le_bytes())?;
        w.write_all(&(self.width as u16).to_le_bytes())?;
        for x in self.u.iter().chain(&self.v) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let load_err = |reason: &str| Error::Load {
            what: "flow dump".into(),
            reason: reason.into(),
        };
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|_| load_err("truncated header"))?;
        if &header[..4] != FLOW_MAGIC {
            return Err(load_err("bad magic"));
        }
        let height = u16::from_le_bytes([header[4], header[5]]) as usize;
        let width = u16::from_le_bytes([header[6], header[7]]) as usize;
        let n = height * width;
        let mut buf = vec![0u8; 8 * n];
        r.read_exact(&mut buf)
            .map_err(|_| load_err("truncated data"))?;
        let vals: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(FlowField {
            height,
            width,
            u: vals[..n].to_vec(),
            v: vals[n..].to_vec(),
        })
    }
}

fn central_range(extent: usize, fraction: f32) -> (usize, usize) {
    let keep = ((extent as f32 * fraction).round() as usize).clamp(1, extent);
    let start = (extent - keep) / 2;
    (start, start + keep)
}

/// Normalized 1-D Gaussian with radius `ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    gaussian_kernel_radius(sigma, radius as usize)
}

pub(crate) fn gaussian_kernel_radius(sigma: f32, radius: usize) -> Vec<f32> {
    let r = radius as isize;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with clamp-to-edge borders.
pub(crate) fn separable_blur(src: &[f32], height: usize, width: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; src.len()];
    let mut line = vec![0.0f32; width + kernel.len() - 1];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for (k, v) in line.iter_mut().enumerate() {
            *v = row[(k as isize - r).clamp(0, width as isize - 1) as usize];
        }
        for (x, t) in tmp[y * width..(y + 1) * width].iter_mut().enumerate() {
            *t = kernel.iter().zip(&line[x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..height {
        for (j, &k) in kernel.iter().enumerate() {
            let yy = (y as isize + j as isize - r).clamp(0, height as isize - 1) as usize;
            let src_row = &tmp[yy * width..(yy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += k * s;
            }
        }
    }
    out
}

/// Samples `src` at fractional coordinates with clamp-to-edge borders.
#[inline]
pub(crate) fn bilinear(src: &[f32], height: usize, width: usize, y: f32, x: f32) -> f32 {
    let y = y.clamp(0.0, (height - 1) as f32);
    let x = x.clamp(0.0, (width - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let top = src[y0 * width + x0] * (1.0 - fx) + src[y0 * width + x1] * fx;
    let bot = src[y1 * width + x0] * (1.0 - fx) + src[y1 * width + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Pixel-center aligned bilinear resampling.
pub(crate) fn resample_bilinear(
    src: &[f32],
    height: usize,
    width: usize,
    new_height: usize,
    new_width: usize,
) -> Vec<f32> {
    let sy = height as f32 / new_height as f32;
    let sx = width as f32 / new_width as f32;
    let mut out = Vec::with_capacity(new_height * new_width);
    for y in 0..new_height {
        let fy = (y as f32 + 0.5) * sy - 0.5;
        for x in 0..new_width {
            let fx = (x as f32 + 0.5) * sx - 0.5;
            out.push(bilinear(src, height, width, fy, fx));
        }
    }
    out
}
