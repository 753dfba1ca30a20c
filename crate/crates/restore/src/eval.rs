//! Rate-distortion evaluation on held-out views, with optional restoration.

use diffeng::par;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use splatfix_core::codec::CodedScene;
use splatfix_core::metrics::{psnr, ssim, Quality, RdCell, RdReport};
use splatfix_core::raster::render;
use splatfix_core::{Image, SceneBundle};

use crate::error::{Error, Result};
use crate::latent::{self, stack};
use crate::model::RestorerState;
use crate::perceptual::Perceptual;
use crate::pretrain::gaussian;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Seeds the restoration noise; each cell derives its own stream.
    pub seed: u64,
    /// Guidance scale for the restorer's single step.
    pub cfg_scale: f32,
    /// Replace the restoration noise by this constant (0 disables it).
    pub deterministic_eps: Option<f32>,
    pub perceptual_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cfg_scale: 1.0,
            deterministic_eps: None,
            perceptual_seed: crate::perceptual::DEFAULT_SEED,
        }
    }
}

/// Degraded renders of one scene at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelRenders {
    pub level: usize,
    /// Size of the coded file.
    pub bytes: u64,
    pub degraded: Vec<Image>,
}

/// Clean and degraded test-view renders of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRenders {
    pub scene: usize,
    pub condition: Option<u32>,
    pub clean: Vec<Image>,
    pub levels: Vec<LevelRenders>,
}

/// Renders the test views of `bundle` from the original primitives and from
/// every decoded level.
pub fn scene_renders(scene: usize, bundle: &SceneBundle, coded: &[CodedScene], condition: Option<u32>) -> Result<SceneRenders> {
    if bundle.test_views.is_empty() {
        return Err(Error::InvalidConfig(format!("scene {scene} has no test views")));
    }
    let draw = |gs: &splatfix_core::GaussianSet| -> Result<Vec<Image>> {
        bundle
            .test_views
            .iter()
            .map(|cam| Ok(render(gs, cam, bundle.background, false)?.image))
            .collect()
    };
    let clean = draw(&bundle.gaussians)?;
    let levels = coded
        .iter()
        .map(|c| {
            Ok(LevelRenders {
                level: c.level as usize,
                bytes: c.size_bytes() as u64,
                degraded: draw(&c.decode()?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneRenders {
        scene,
        condition,
        clean,
        levels,
    })
}

fn quality(perc: &Perceptual, outs: &[Image], clean: &[Image]) -> Result<Quality> {
    let n = clean.len() as f64;
    let mut q = Quality {
        psnr: 0.0,
        ssim: 0.0,
        perc_proxy: 0.0,
    };
    for (o, c) in outs.iter().zip(clean) {
        q.psnr += psnr(o, c, 1.0)? / n;
        q.ssim += ssim(o, c)? / n;
        q.perc_proxy += perc.distance_images(o, c)? / n;
    }
    Ok(q)
}

/// Restores a batch of images with fresh (or constant) noise from `rng`.
pub fn restore_images(
    state: &RestorerState,
    images: &[Image],
    condition: Option<u32>,
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Image>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let lat: Vec<_> = images.iter().map(latent::encode).collect::<Result<_>>()?;
    let x = stack(&lat.iter().collect::<Vec<_>>())?;
    let eps = match cfg.deterministic_eps {
        Some(v) => diffeng::Tensor::full(x.shape().to_vec(), v),
        None => gaussian(x.shape(), rng),
    };
    let out = state.one_step_restore(&x, &eps, &vec![condition; images.len()], cfg.cfg_scale)?;
    (0..images.len()).map(|i| latent::decode(&latent::rows(&out, i, 1))).collect()
}

fn cell_seed(seed: u64, scene: usize, level: usize) -> u64 {
    let mut z = seed ^ (scene as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (level as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One cell per `(scene, level)` against the clean test renders. Restored
/// columns appear only when a restorer is given. Cells are independent and
/// evaluated in parallel; the result does not depend on the thread count.
pub fn rd_evaluate(scenes: &[SceneRenders], restorer: Option<&RestorerState>, cfg: &EvalConfig) -> Result<RdReport> {
    let perc = Perceptual::new(cfg.perceptual_seed);
    let jobs: Vec<(&SceneRenders, &LevelRenders)> =
        scenes.iter().flat_map(|s| s.levels.iter().map(move |l| (s, l))).collect();
    let cells = par::map_indexed(jobs.len(), |i| -> Result<RdCell> {
        let (s, l) = jobs[i];
        if l.degraded.len() != s.clean.len() {
            return Err(Error::InvalidConfig(format!("scene {} level {}: view counts differ", s.scene, l.level)));
        }
        let degraded = quality(&perc, &l.degraded, &s.clean)?;
        let restored = match restorer {
            Some(state) => {
                let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(cfg.seed, s.scene, l.level));
                let outs = restore_images(state, &l.degraded, s.condition, cfg, &mut rng)?;
                Some(quality(&perc, &outs, &s.clean)?)
            }
            None => None,
        };
        Ok(RdCell {
            scene: s.scene,
            level: l.level,
            bytes: l.bytes,
            degraded,
            restored,
        })
    });
    let report = RdReport::from_cells(cells.into_iter().collect::<Result<Vec<_>>>()?);
    if !report.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            detail: "rate-distortion report has non-finite cells".into(),
        });
    }
    Ok(report)
}
