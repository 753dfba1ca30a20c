//! Perceptual-distance proxy: fixed random conv features at three scales.
//!
//! Each scale (full, 1/2, 1/4 by average pooling) runs its own seeded stack
//! `3→8` (stride 1), `8→16` (stride 2), `16→16` (stride 2) with ReLU. Every
//! feature map is unit-normalized across channels at each pixel, and the
//! distance is the mean squared feature difference summed over layers and
//! scales. Inputs are latents (`2·I − 1`) with sides divisible by 4.

use diffeng::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatfix_core::Image;

use crate::error::{Error, Result};
use crate::latent;

pub const DEFAULT_SEED: u64 = 0x5e_ed0f_9e7c;
const LAYERS: [(usize, usize, usize); 3] = [(3, 8, 1), (8, 16, 2), (16, 16, 2)];
const SCALES: usize = 3;
const NORM_EPS: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Perceptual {
    /// `[scale][layer]` conv weights.
    weights: Vec<Vec<Tensor>>,
}

impl Default for Perceptual {
    fn default() -> Self {
        Self::new(DEFAULT_SEED)
    }
}

impl Perceptual {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..SCALES)
            .map(|_| {
                LAYERS
                    .iter()
                    .map(|&(cin, cout, _)| Tensor::randn([cout, cin, 3, 3], (2.0 / (cin * 9) as f32).sqrt(), &mut rng))
                    .collect()
            })
            .collect();
        Self { weights }
    }

    fn features(&self, g: &mut Graph, ws: &[Vec<Var>], x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::new();
        let mut level = x;
        for (s, stack) in ws.iter().enumerate() {
            if s > 0 {
                level = g.avgpool2x(level)?;
            }
            let mut h = level;
            for (w, &(_, _, stride)) in stack.iter().zip(&LAYERS) {
                h = g.conv2d(h, *w, stride, 1)?;
                h = g.relu(h);
                let sq = g.square(h);
                let norm = g.sum_axis(sq, 1)?;
                let norm = g.add_scalar(norm, NORM_EPS);
                let norm = g.sqrt(norm);
                out.push(g.div(h, norm)?);
            }
        }
        Ok(out)
    }

    /// Scalar distance node between two `[B, 3, H, W]` batches (mean over
    /// the batch). Gradients flow into whichever inputs are tracked.
    pub fn graph_distance(&self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
        if sa != sb || sa.len() != 4 || sa[1] != 3 || sa[2] % 4 != 0 || sa[3] % 4 != 0 {
            return Err(Error::InvalidConfig(format!("perceptual inputs {sa:?} / {sb:?} must match as [B, 3, 4m, 4n]")));
        }
        let ws: Vec<Vec<Var>> =
            self.weights.iter().map(|s| s.iter().map(|w| g.constant(w.clone())).collect()).collect();
        let fa = self.features(g, &ws, a)?;
        let fb = self.features(g, &ws, b)?;
        let mut total: Option<Var> = None;
        for (x, y) in fa.into_iter().zip(fb) {
            let term = g.mse(x, y)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one layer"))
    }

    /// Distance between two latent batches without tracking gradients.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let d = self.graph_distance(&mut g, va, vb)?;
        Ok(g.value(d).item() as f64)
    }

    pub fn distance_images(&self, a: &Image, b: &Image) -> Result<f64> {
        let (xa, xb) = (latent::encode(a)?, latent::encode(b)?);
        let shape = [1, 3, a.height, a.width];
        self.distance(&xa.reshape(shape)?, &xb.reshape(shape)?)
    }
}
