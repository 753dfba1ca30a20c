use diffeng::{AdamW, AdamWConfig, ParamMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::Image;
use crate::math::Vec3;
use crate::raster::{render, render_backward};

/// Per-attribute Adam learning rates and the iteration budget. One randomly
/// chosen training view per iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub iters: usize,
    pub lr_position: f32,
    pub lr_rotation: f32,
    pub lr_scale: f32,
    pub lr_opacity: f32,
    pub lr_sh: f32,
    pub lambda_ssim: f32,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            lr_position: 1.6e-5,
            lr_rotation: 2.5e-3,
            lr_scale: 2.5e-3,
            lr_opacity: 2.5e-3,
            lr_sh: 2.5e-3,
            lambda_ssim: 0.2,
        }
    }
}

/// Loss recorded at each iteration, before the update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneReport {
    pub losses: Vec<f32>,
}

fn pm<'a>(name: &'a str, value: &'a mut [f32], grad: &'a [f32]) -> ParamMut<'a> {
    ParamMut { name, value, grad }
}

fn flat<const N: usize>(v: &mut [[f32; N]]) -> &mut [f32] {
    v.as_flattened_mut()
}

/// Fits `gs` to `targets` rendered from `views`. Deterministic for a given
/// seed. A non-finite loss aborts with the iteration and view that caused it.
pub fn finetune(
    gs: &mut GaussianSet,
    views: &[Camera],
    targets: &[Image],
    background: Vec3,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneReport> {
    if cfg.iters > 0 && (views.is_empty() || views.len() != targets.len()) {
        return Err(Error::InvalidArgument(format!(
            "fine-tuning needs matching views and targets, got {} and {}",
            views.len(),
            targets.len()
        )));
    }
    let adam = |lr| AdamW::new(AdamWConfig { lr, ..AdamWConfig::default() });
    let mut opt = [
        adam(cfg.lr_position),
        adam(cfg.lr_rotation),
        adam(cfg.lr_scale),
        adam(cfg.lr_opacity),
        adam(cfg.lr_sh),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FinetuneReport::default();
    for it in 0..cfg.iters {
        let v = rng.random_range(0..views.len());
        let out = render(gs, &views[v], background, true)?;
        let (loss, g) = render_backward(gs, &views[v], &out, &targets[v], cfg.lambda_ssim)?;
        if !loss.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite(format!("fine-tune loss at iteration {it}, view {v}")));
        }
        report.losses.push(loss);
        opt[0].step(&mut [pm("positions", flat(&mut gs.positions), g.positions.as_flattened())])?;
        opt[1].step(&mut [pm("rotations", flat(&mut gs.rotations), g.rotations.as_flattened())])?;
        opt[2].step(&mut [pm("log_scales", flat(&mut gs.log_scales), g.log_scales.as_flattened())])?;
        opt[3].step(&mut [pm("opacity_logits", &mut gs.opacity_logits, &g.opacity_logits)])?;
        opt[4].step(&mut [pm("sh_coeffs", &mut gs.sh_coeffs, &g.sh_coeffs)])?;
    }
    Ok(report)
}
