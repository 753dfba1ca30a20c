//! Uniform 8-bit per-channel quantization.
//!
//! Symbols are `round(255·(v − min)/(max − min))`, ties away from zero. The
//! stored step is canonicalized to the smallest f32 `s` with
//! `f32(min + 255·s) ≥ max`. Decoding a channel and quantizing it again then
//! reproduces the same `(min, step)` and symbols, so re-encoding a decoded
//! scene is byte-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{sh_len, GaussianSet};

pub const LEVELS: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub min: f32,
    pub step: f32,
}

impl QuantParams {
    pub fn dequantize(&self, q: u8) -> f32 {
        (self.min as f64 + q as f64 * self.step as f64) as f32
    }
}

fn top(min: f32, s: f32) -> f32 {
    (min as f64 + 255.0 * s as f64) as f32
}

fn canonical_step(min: f32, max: f32) -> f32 {
    let mut s = ((max as f64 - min as f64) / 255.0) as f32;
    if !(s > 0.0) {
        s = f32::from_bits(1);
    }
    while top(min, s) < max {
        s = s.next_up();
    }
    while s > f32::from_bits(1) && top(min, s.next_down()) >= max {
        s = s.next_down();
    }
    s
}

/// Symbols and parameters for one channel. A constant channel gets step 1
/// and all-zero symbols.
pub fn quantize_channel(values: &[f32]) -> Result<(Vec<u8>, QuantParams)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cannot quantize non-finite attribute values".into()));
    }
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if values.is_empty() || max == min {
        let min = if values.is_empty() { 0.0 } else { min };
        return Ok((vec![0; values.len()], QuantParams { min, step: 1.0 }));
    }
    let step = canonical_step(min, max);
    let range = max as f64 - min as f64;
    let symbols = values
        .iter()
        .map(|&v| (255.0 * (v as f64 - min as f64) / range).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok((symbols, QuantParams { min, step }))
}

pub fn dequantize_channel(symbols: &[u8], p: &QuantParams) -> Vec<f32> {
    symbols.iter().map(|&q| p.dequantize(q)).collect()
}

/// Number of scalar channels for a given SH degree: 3 position, 4 rotation,
/// 3 log-scale, 1 opacity, then every SH coefficient.
pub fn channel_count(sh_degree: u8) -> usize {
    11 + 3 * sh_len(sh_degree)
}

/// Splits a set into per-channel value arrays in the canonical order.
pub fn channels(gs: &GaussianSet) -> Vec<Vec<f32>> {
    let mut out = Vec::with_capacity(channel_count(gs.sh_degree));
    for k in 0..3 {
        out.push(gs.positions.iter().map(|p| p[k]).collect());
    }
    for k in 0..4 {
        out.push(gs.rotations.iter().map(|q| q[k]).collect());
    }
    for k in 0..3 {
        out.push(gs.log_scales.iter().map(|s| s[k]).collect());
    }
    out.push(gs.opacity_logits.clone());
    let stride = gs.sh_stride();
    for k in 0..stride {
        out.push(gs.sh_coeffs.iter().skip(k).step_by(stride).copied().collect());
    }
    out
}

/// Inverse of [`channels`].
pub fn from_channels(ch: &[Vec<f32>], sh_degree: u8) -> Result<GaussianSet> {
    if ch.len() != channel_count(sh_degree) {
        return Err(Error::Corrupt(format!(
            "expected {} channels for SH degree {sh_degree}, got {}",
            channel_count(sh_degree),
            ch.len()
        )));
    }
    let n = ch[0].len();
    let stride = 3 * sh_len(sh_degree);
    let mut sh = vec![0.0; n * stride];
    for k in 0..stride {
        for i in 0..n {
            sh[i * stride + k] = ch[11 + k][i];
        }
    }
    GaussianSet::new(
        (0..n).map(|i| [ch[0][i], ch[1][i], ch[2][i]]).collect(),
        (0..n).map(|i| [ch[3][i], ch[4][i], ch[5][i], ch[6][i]]).collect(),
        (0..n).map(|i| [ch[7][i], ch[8][i], ch[9][i]]).collect(),
        ch[10].clone(),
        sh,
        sh_degree,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_maps_to_128() {
        let (q, p) = quantize_channel(&[0.0, 1.0, 0.5]).unwrap();
        assert_eq!(q, vec![0, 255, 128]);
        assert!((p.dequantize(128) - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn constant_channel() {
        let (q, p) = quantize_channel(&[2.5; 4]).unwrap();
        assert_eq!(q, vec![0; 4]);
        assert_eq!(p, QuantParams { min: 2.5, step: 1.0 });
        assert_eq!(dequantize_channel(&q, &p), vec![2.5; 4]);
    }

    #[test]
    fn decoded_channel_is_a_fixed_point() {
        let vals: Vec<f32> = (0..100).map(|i| ((i * 37 % 101) as f32 * 0.173).sin() * 3.7 - 0.2).collect();
        let (q, p) = quantize_channel(&vals).unwrap();
        let back = dequantize_channel(&q, &p);
        let (q2, p2) = quantize_channel(&back).unwrap();
        assert_eq!(q, q2);
        assert_eq!(p.min.to_bits(), p2.min.to_bits());
        assert_eq!(p.step.to_bits(), p2.step.to_bits());
    }

    #[test]
    fn channel_roundtrip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let gs = GaussianSet::random(7, 1, &mut rng);
        assert_eq!(from_channels(&channels(&gs), 1).unwrap(), gs);
    }
}
