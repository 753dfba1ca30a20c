//! One-step restoration of compressed-scene renders.
//!
//! A small flow-matching denoiser is pretrained on clean renders and then
//! frozen. Two low-rank adapters extend it: `φ⁻` maps a degraded image,
//! noised to an intermediate timestep, to its restoration in a single step,
//! and `φ⁺` models the distribution of those restorations so the difference
//! of the two denoised estimates can steer `φ⁻` toward real images.

pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod latent;
pub mod model;
pub mod net;
pub mod perceptual;
pub mod pretrain;
pub mod schedule;

pub use data::{manifest_renders, PairPool};
pub use distill::{train, DistillConfig, Distiller, LrDecay, Sample, StepReport};
pub use error::{Error, Result};
pub use eval::{rd_evaluate, EvalConfig, SceneRenders};
pub use model::{RestorerState, Which};
pub use net::{Adapter, DenoiserNet, LoraConfig, NetConfig};
pub use perceptual::Perceptual;
pub use pretrain::{pretrain, CleanSample, PretrainConfig};
pub use schedule::DiffusionSchedule;
