//! Interleaved float images plus raw-float and PNG files.
//!
//! f32img layout (little-endian): `b"F32I"`, u32 height, u32 width,
//! u32 channels, then `height * width * channels` f32 values in HWC order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const F32IMG_MAGIC: &[u8; 4] = b"F32I";

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// HWC, row-major.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width, channels],
                got: vec![data.len()],
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: &[f32]) -> Self {
        let mut data = Vec::with_capacity(height * width * value.len());
        for _ in 0..height * width {
            data.extend_from_slice(value);
        }
        Self {
            height,
            width,
            channels: value.len(),
            data,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape().to_vec(),
                got: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.data.len().max(1) as f64).sqrt()
    }

    /// Planar `[C, H, W]` copy.
    pub fn to_chw(&self) -> Vec<f32> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for i in 0..h * w {
            for k in 0..c {
                out[k * h * w + i] = self.data[i * c + k];
            }
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f32]) -> Result<Self> {
        if chw.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: vec![channels, height, width],
                got: vec![chw.len()],
            });
        }
        let mut data = vec![0.0; chw.len()];
        for i in 0..height * width {
            for k in 0..channels {
                data[i * channels + k] = chw[k * height * width + i];
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn to_f32img_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(F32IMG_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_f32img_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != F32IMG_MAGIC {
            return Err(Error::ImageFormat("missing f32img magic".into()));
        }
        let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
        let (h, w, c) = (word(4), word(8), word(12));
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::ImageFormat("dimensions overflow".into()))?;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::ImageFormat(format!(
                "{h}x{w}x{c} payload needs {} bytes, file has {}",
                16 + 4 * n,
                bytes.len()
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(h, w, c, data)
    }

    pub fn save_f32img(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&self.to_f32img_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load_f32img(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_f32img_bytes(&bytes)
    }

    /// 8-bit values, clamped to [0, 1] and rounded half up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    /// 8-bit PNG (gray, RGB or RGBA depending on the channel count).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(Error::ImageFormat(format!("cannot write {c}-channel PNG"))),
        };
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_u8())?;
        writer.finish()?;
        Ok(())
    }
}

pub fn to_u8(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}
