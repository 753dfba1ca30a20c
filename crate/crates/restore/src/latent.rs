//! Pixel-space latents: `x = 2·I − 1` in planar layout, and batch helpers.
//!
//! The decoder clamps back into `[0, 1]`, so encode→decode is exact for any
//! image whose values are representable after the affine map.

use diffeng::Tensor;
use splatfix_core::Image;

use crate::error::{Error, Result};

/// `[3, H, W]` latent of an HWC image.
pub fn encode(img: &Image) -> Result<Tensor> {
    if img.channels != 3 {
        return Err(Error::InvalidConfig(format!("expected 3 channels, got {}", img.channels)));
    }
    let chw = img.to_chw().into_iter().map(|v| 2.0 * v - 1.0).collect();
    Ok(Tensor::new([3, img.height, img.width], chw)?)
}

/// Inverse of [`encode`], clamped to `[0, 1]`; accepts `[3, H, W]` or `[1, 3, H, W]`.
pub fn decode(x: &Tensor) -> Result<Image> {
    let s = x.shape();
    let (h, w) = match s {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        _ => return Err(Error::InvalidConfig(format!("cannot decode latent of shape {s:?}"))),
    };
    let chw: Vec<f32> = x.data().iter().map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect();
    Ok(Image::from_chw(h, w, 3, &chw)?)
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::InvalidConfig(format!("batch shapes differ: {:?} vs {:?}", t.shape(), first.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(shape, data)?)
}

/// Concatenates batches along the leading axis.
pub fn concat(items: &[&Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
    let mut shape = first.shape().to_vec();
    shape[0] = 0;
    let mut data = Vec::new();
    for t in items {
        if t.shape()[1..] != first.shape()[1..] {
            return Err(Error::InvalidConfig("batch element shapes differ".into()));
        }
        shape[0] += t.shape()[0];
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(shape, data)?)
}

/// Rows `start..start + len` of the leading axis.
pub fn rows(t: &Tensor, start: usize, len: usize) -> Tensor {
    let per = t.numel() / t.shape()[0].max(1);
    let mut shape = t.shape().to_vec();
    shape[0] = len;
    Tensor::new(shape, t.data()[start * per..(start + len) * per].to_vec()).expect("row range inside the tensor")
}

/// Elementwise `a·x + b·y` that reports shape mismatches as crate errors.
pub fn lincomb(a: f32, x: &Tensor, b: f32, y: &Tensor) -> Result<Tensor> {
    Ok(x.axpby(a, y, b)?)
}

/// Per-sample `x_i ← x_i·s_i` over the leading axis.
pub fn scale_rows(x: &Tensor, s: &[f32]) -> Tensor {
    let per = x.numel() / s.len().max(1);
    let mut out = x.clone();
    for (chunk, &si) in out.data_mut().chunks_mut(per).zip(s) {
        for v in chunk {
            *v *= si;
        }
    }
    out
}
