//! Small encoder-decoder velocity predictor and its low-rank adapters.
//!
//! Layout for width `c` and bottleneck `m` on a `[B, 3, H, W]` input (`H`,
//! `W` divisible by 4): two stride-2 encoder convs (`3→c`, `c→m`), `mid_blocks`
//! `m→m` convs at quarter resolution, then two upsample-and-concatenate
//! decoder convs back to full resolution and a final `c→3` projection. Most
//! parameters sit at quarter resolution, where they are cheapest to run.
//! Every hidden conv adds a per-channel bias and a learned projection of the
//! shared time/class embedding.

use diffeng::kernels::gemm;
use diffeng::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Channels at full and half resolution.
    pub width: usize,
    /// Channels at quarter resolution.
    pub bottleneck: usize,
    pub mid_blocks: usize,
    pub time_dim: usize,
    /// Sinusoid pairs in the timestep features.
    pub time_freqs: usize,
    /// Condition classes; index `n_classes` is the null token.
    pub n_classes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            width: 16,
            bottleneck: 64,
            mid_blocks: 2,
            time_dim: 64,
            time_freqs: 16,
            n_classes: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.bottleneck == 0 || self.time_dim == 0 || self.time_freqs == 0 {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        Ok(())
    }

    /// `(name, in, out, stride)` for the hidden convs, in evaluation order.
    fn blocks(&self) -> Vec<(String, usize, usize, usize)> {
        let (c, m) = (self.width, self.bottleneck);
        let mut b = vec![("e1".to_string(), IMAGE_CHANNELS, c, 2), ("e2".to_string(), c, m, 2)];
        b.extend((0..self.mid_blocks).map(|i| (format!("mid{i}"), m, m, 1)));
        b.push(("d1".into(), m + c, c, 1));
        b.push(("d0".into(), c + IMAGE_CHANNELS, c, 1));
        b
    }
}

/// Frozen-able base network: named parameters in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    pub config: NetConfig,
    pub params: Vec<(String, Tensor)>,
}

impl DenoiserNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (f, d) = (2 * config.time_freqs, config.time_dim);
        let mut params = vec![
            ("time.w".to_string(), Tensor::randn([f, d], (1.0 / f as f32).sqrt(), rng)),
            ("time.b".to_string(), Tensor::zeros([d])),
            ("cond.table".to_string(), Tensor::randn([config.n_classes + 1, d], 1.0, rng)),
        ];
        for (name, cin, cout, _) in config.blocks() {
            let fan_in = (cin * 9) as f32;
            params.push((format!("{name}.w"), Tensor::randn([cout, cin, 3, 3], (2.0 / fan_in).sqrt(), rng)));
            params.push((format!("{name}.b"), Tensor::zeros([cout])));
            params.push((format!("{name}.t"), Tensor::randn([d, cout], (1.0 / d as f32).sqrt(), rng)));
        }
        let fan_in = (config.width * 9) as f32;
        params.push(("out.w".into(), Tensor::randn([IMAGE_CHANNELS, config.width, 3, 3], 0.1 / fan_in.sqrt(), rng)));
        params.push(("out.b".into(), Tensor::zeros([IMAGE_CHANNELS])));
        Ok(Self { config, params })
    }

    /// Rebuilds a network from named tensors, checking names and shapes.
    pub fn from_params(config: NetConfig, mut named: impl FnMut(&str) -> Option<Tensor>) -> Result<Self> {
        let template = Self::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        let mut params = Vec::with_capacity(template.params.len());
        for (name, t) in template.params {
            let v = named(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if v.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {:?}", v.shape(), t.shape())));
            }
            params.push((name, v));
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|(n, _)| n == name)
    }

    /// Velocity prediction for `x: [B, 3, H, W]` with per-sample timesteps and
    /// conditions (`None` is the null token). `weights` must be bound in the
    /// order of [`DenoiserNet::params`].
    pub fn forward(
        &self,
        g: &mut Graph,
        weights: &[Var],
        x: Var,
        t: &[u32],
        steps: u32,
        cond: &[Option<u32>],
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let batch = shape[0];
        if shape.len() != 4 || shape[1] != IMAGE_CHANNELS || shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::InvalidConfig(format!("denoiser input must be [B, 3, 4m, 4n], got {shape:?}")));
        }
        if t.len() != batch || cond.len() != batch || weights.len() != self.params.len() {
            return Err(Error::InvalidConfig("timestep, condition and batch sizes differ".into()));
        }
        let w = |name: &str| weights[self.index_of(name).expect("parameter layout is fixed")];

        let feats = g.constant(time_features(t, steps, self.config.time_freqs));
        let onehot = g.constant(one_hot(cond, self.config.n_classes)?);
        let te = g.matmul(feats, w("time.w"))?;
        let te = g.add(te, w("time.b"))?;
        let ce = g.matmul(onehot, w("cond.table"))?;
        let emb = g.add(te, ce)?;
        let emb = g.silu(emb);

        let block = |g: &mut Graph, name: &str, input: Var, stride: usize| -> Result<Var> {
            let h = g.conv2d(input, w(&format!("{name}.w")), stride, 1)?;
            let o = g.shape(h)[1];
            let b = g.reshape(w(&format!("{name}.b")), &[1, o, 1, 1])?;
            let h = g.add(h, b)?;
            let tp = g.matmul(emb, w(&format!("{name}.t")))?;
            let tp = g.reshape(tp, &[batch, o, 1, 1])?;
            let h = g.add(h, tp)?;
            Ok(g.silu(h))
        };
        let h1 = block(g, "e1", x, 2)?;
        let mut h = block(g, "e2", h1, 2)?;
        for i in 0..self.config.mid_blocks {
            h = block(g, &format!("mid{i}"), h, 1)?;
        }
        let u1 = g.upsample2x(h)?;
        let u1 = g.concat(&[u1, h1], 1)?;
        let d1 = block(g, "d1", u1, 1)?;
        let u0 = g.upsample2x(d1)?;
        let u0 = g.concat(&[u0, x], 1)?;
        let d0 = block(g, "d0", u0, 1)?;
        let out = g.conv2d(d0, w("out.w"), 1, 1)?;
        let ob = g.reshape(w("out.b"), &[1, IMAGE_CHANNELS, 1, 1])?;
        Ok(g.add(out, ob)?)
    }
}

/// `[B, 2F]` sinusoidal features of `σ_t = t / steps`, frequencies spaced
/// geometrically from 1 to 1000.
pub fn time_features(t: &[u32], steps: u32, freqs: usize) -> Tensor {
    let mut data = Vec::with_capacity(t.len() * 2 * freqs);
    for &ti in t {
        let s = ti as f64 / steps as f64;
        let row: Vec<f64> = (0..freqs)
            .map(|i| {
                let omega = 1000f64.powf(i as f64 / (freqs.max(2) - 1) as f64);
                s * omega * std::f64::consts::PI
            })
            .collect();
        data.extend(row.iter().map(|a| a.sin() as f32));
        data.extend(row.iter().map(|a| a.cos() as f32));
    }
    Tensor::new([t.len(), 2 * freqs], data).expect("feature size is consistent")
}

/// `[B, n + 1]` indicator rows; `None` selects the trailing null column.
pub fn one_hot(cond: &[Option<u32>], n_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; cond.len() * (n_classes + 1)];
    for (i, c) in cond.iter().enumerate() {
        let k = match *c {
            Some(k) if (k as usize) < n_classes => k as usize,
            Some(k) => return Err(Error::InvalidConfig(format!("condition {k} outside 0..{n_classes}"))),
            None => n_classes,
        };
        data[i * (n_classes + 1) + k] = 1.0;
    }
    Ok(Tensor::new([cond.len(), n_classes + 1], data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    /// Multiplier `s` in `W + s·B·A`.
    pub scale: f32,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, scale: 1.0 }
    }
}

/// Factors for one weight viewed as a `rows × cols` matrix, where `rows` is
/// its leading dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraFactor {
    pub target: String,
    /// `[rank, cols]`.
    pub a: Tensor,
    /// `[rows, rank]`.
    pub b: Tensor,
}

/// Low-rank updates for every parameter of rank two or more.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub rank: usize,
    pub scale: f32,
    pub factors: Vec<LoraFactor>,
}

fn matrix_dims(t: &Tensor) -> (usize, usize) {
    let rows = t.shape()[0];
    (rows, t.numel() / rows.max(1))
}

impl Adapter {
    /// `B = 0`, `A ~ N(0, 1/cols)`, so a fresh adapter is an exact identity.
    pub fn new<R: Rng + ?Sized>(base: &DenoiserNet, cfg: LoraConfig, rng: &mut R) -> Result<Self> {
        if cfg.rank == 0 || !cfg.scale.is_finite() {
            return Err(Error::InvalidConfig(format!("adapter rank {} / scale {}", cfg.rank, cfg.scale)));
        }
        let factors = base
            .params
            .iter()
            .filter(|(_, t)| t.ndim() >= 2)
            .map(|(name, t)| {
                let (rows, cols) = matrix_dims(t);
                LoraFactor {
                    target: name.clone(),
                    a: Tensor::randn([cfg.rank, cols], (1.0 / cols as f32).sqrt(), rng),
                    b: Tensor::zeros([rows, cfg.rank]),
                }
            })
            .collect();
        Ok(Self {
            rank: cfg.rank,
            scale: cfg.scale,
            factors,
        })
    }

    pub fn param_count(&self) -> usize {
        self.factors.iter().map(|f| f.a.numel() + f.b.numel()).sum()
    }

    pub fn factor(&self, target: &str) -> Option<&LoraFactor> {
        self.factors.iter().find(|f| f.target == target)
    }

    /// Every trainable tensor as `(name, tensor)`, `A` before `B` per target.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        self.factors.iter_mut().flat_map(|f| {
            let (a, b) = (&mut f.a, &mut f.b);
            [(format!("{}.A", f.target), a), (format!("{}.B", f.target), b)]
        })
    }

    /// `W + s·B·A` for one base weight, reshaped like `W`. The product is
    /// formed first and scaled after, matching [`bind_trainable`] bit for bit.
    pub fn merge(&self, name: &str, w: &Tensor) -> Tensor {
        let Some(f) = self.factor(name) else {
            return w.clone();
        };
        let (rows, cols) = matrix_dims(w);
        let mut ba = vec![0.0; rows * cols];
        gemm(rows, self.rank, cols, f.b.data(), false, f.a.data(), false, &mut ba, false);
        let mut out = w.clone();
        for (o, d) in out.data_mut().iter_mut().zip(&ba) {
            *o += d * self.scale;
        }
        out
    }

    fn check(&self, base: &DenoiserNet) -> Result<()> {
        for f in &self.factors {
            let i = base
                .index_of(&f.target)
                .ok_or_else(|| Error::Checkpoint(format!("adapter targets unknown weight `{}`", f.target)))?;
            let (rows, cols) = matrix_dims(&base.params[i].1);
            if f.a.shape() != [self.rank, cols] || f.b.shape() != [rows, self.rank] {
                return Err(Error::Checkpoint(format!("adapter factors for `{}` have wrong shapes", f.target)));
            }
        }
        Ok(())
    }
}

/// Binds the base weights (merged with `adapter` if given) as graph constants.
pub fn bind_frozen(g: &mut Graph, base: &DenoiserNet, adapter: Option<&Adapter>) -> Vec<Var> {
    base.params
        .iter()
        .map(|(name, w)| match adapter {
            Some(a) => g.constant(a.merge(name, w)),
            None => g.constant(w.clone()),
        })
        .collect()
}

/// Graph parameters of a trainable adapter, in [`Adapter::tensors_mut`] order.
pub struct AdapterVars {
    pub vars: Vec<Var>,
}

/// Binds base weights as constants and the adapter factors as tracked
/// leaves, building `W + s·(B·A)` in the graph.
pub fn bind_trainable(g: &mut Graph, base: &DenoiserNet, adapter: &Adapter) -> Result<(Vec<Var>, AdapterVars)> {
    adapter.check(base)?;
    let mut vars = Vec::new();
    let mut weights = Vec::with_capacity(base.params.len());
    for (name, w) in &base.params {
        let wv = g.constant(w.clone());
        match adapter.factor(name) {
            Some(f) => {
                let a = g.param(f.a.clone());
                let b = g.param(f.b.clone());
                vars.extend([a, b]);
                let ba = g.matmul(b, a)?;
                let ba = g.scale(ba, adapter.scale);
                let ba = g.reshape(ba, w.shape())?;
                weights.push(g.add(wv, ba)?);
            }
            None => weights.push(wv),
        }
    }
    Ok((weights, AdapterVars { vars }))
}

/// Binds every base parameter as a tracked leaf (pretraining).
pub fn bind_base_trainable(g: &mut Graph, base: &DenoiserNet) -> Vec<Var> {
    base.params.iter().map(|(_, w)| g.param(w.clone())).collect()
}
