//! Gaussian splat scenes: the primitive model, a tile-based differentiable
//! rasterizer, image metrics, procedural scenes, the rate-scalable codec and
//! the paired restoration dataset built from it.

pub mod camera;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod math;
pub mod metrics;
pub mod ply;
pub mod raster;
pub mod sh;
pub mod synth;

pub use camera::Camera;
pub use codec::{CodecConfig, CodedScene};
pub use error::{Error, Result};
pub use gaussian::GaussianSet;
pub use image::Image;
pub use raster::{render, RenderOutput};
pub use synth::{SceneBundle, SynthParams};
