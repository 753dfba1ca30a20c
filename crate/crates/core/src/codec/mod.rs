//! Rate-scalable scene codec.
//!
//! Levels are produced coarse-to-fine from the top: the full set is coded at
//! the highest level, then each lower level prunes the *decoded* previous
//! level by saliency, fine-tunes the survivors against the clean renders,
//! and is quantized and range coded on its own.

pub mod finetune;
pub mod format;
pub mod prune;
pub mod quant;
pub mod range;
pub mod schedule;

use serde::{Deserialize, Serialize};

pub use finetune::{finetune, FinetuneConfig, FinetuneReport};
pub use format::CodedScene;
pub use prune::{prune, prune_indices};
pub use quant::{dequantize_channel, quantize_channel, QuantParams};
pub use range::{entropy_decode, entropy_encode, FreqTable};
pub use schedule::{level_schedule, LevelSchedule};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::Image;
use crate::math::Vec3;
use crate::raster::primitive_saliency;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub c_min: usize,
    pub levels: usize,
    pub finetune: FinetuneConfig,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            c_min: 256,
            levels: 3,
            finetune: FinetuneConfig::default(),
        }
    }
}

impl CodecConfig {
    pub fn schedule(&self, n_full: usize) -> Result<LevelSchedule> {
        level_schedule(n_full, self.c_min, self.levels)
    }
}

#[derive(Clone, Debug)]
pub struct LevelOutput {
    pub level: usize,
    pub coded: CodedScene,
    pub finetune: FinetuneReport,
}

/// Codes every level from the top of `schedule` down to `down_to`, returned
/// highest level first. Levels that need no pruning skip saliency and
/// fine-tuning, so recompressing a decoded scene is byte-identical.
#[allow(clippy::too_many_arguments)]
pub fn compress_chain(
    gs: &GaussianSet,
    schedule: &LevelSchedule,
    down_to: usize,
    views: &[Camera],
    targets: &[Image],
    background: Vec3,
    ft: &FinetuneConfig,
    seed: u64,
) -> Result<Vec<LevelOutput>> {
    if down_to >= schedule.levels {
        return Err(Error::InvalidArgument(format!(
            "level {down_to} out of range for {} levels",
            schedule.levels
        )));
    }
    gs.validate()?;
    let mut out: Vec<LevelOutput> = Vec::new();
    let mut current = gs.clone();
    for level in (down_to..schedule.levels).rev() {
        let keep = schedule.cardinalities[level];
        let mut report = FinetuneReport::default();
        if keep < current.len() {
            let scores = primitive_saliency(&current, views, targets, background, ft.lambda_ssim)?;
            current = prune(&current, &scores, keep)?;
            report = finetune(&mut current, views, targets, background, ft, seed ^ (level as u64 + 1))?;
        }
        let coded = CodedScene::encode(&current, level as u8)?;
        current = coded.decode()?;
        out.push(LevelOutput {
            level,
            coded,
            finetune: report,
        });
    }
    Ok(out)
}

/// Codes `gs` at `level`, running the chain above it.
#[allow(clippy::too_many_arguments)]
pub fn compress(
    gs: &GaussianSet,
    schedule: &LevelSchedule,
    level: usize,
    views: &[Camera],
    targets: &[Image],
    background: Vec3,
    ft: &FinetuneConfig,
    seed: u64,
) -> Result<CodedScene> {
    let chain = compress_chain(gs, schedule, level, views, targets, background, ft, seed)?;
    Ok(chain.into_iter().last().expect("chain is non-empty").coded)
}

pub fn decompress(coded: &CodedScene) -> Result<GaussianSet> {
    coded.decode()
}
