//! Restorer state, guided prediction, denoised estimates, Euler sampling and
//! the one-step restoration.
//!
//! Velocity convention: under `x_t = (1 − σ)x + σε` the network predicts
//! `v = ε − x`, so `x_t − σ_t·v = x` exactly for the true velocity.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use diffeng::{Checkpoint, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{concat, lincomb, rows};
use crate::net::{bind_frozen, Adapter, DenoiserNet, LoraConfig, NetConfig};
use crate::schedule::DiffusionSchedule;

/// Which weights a prediction runs with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Base,
    PhiMinus,
    PhiPlus,
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "phi_minus" | "phi-minus" => Ok(Self::PhiMinus),
            "phi_plus" | "phi-plus" => Ok(Self::PhiPlus),
            other => Err(Error::UnknownAdapter(other.to_string())),
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Base => "base",
            Self::PhiMinus => "phi_minus",
            Self::PhiPlus => "phi_plus",
        })
    }
}

/// `x_t − σ·v̂`; identity at `σ = 0`.
pub fn denoise(x_t: &Tensor, sigma: f32, v: &Tensor) -> Result<Tensor> {
    if sigma == 0.0 {
        return Ok(x_t.clone());
    }
    lincomb(1.0, x_t, -sigma, v)
}

/// Deterministic Euler integration from `t = T` to `0` in `steps` equal
/// strides: `x ← x − (σ_t − σ_{t−Δ})·v(x, t)`.
pub fn euler_with(
    schedule: &DiffusionSchedule,
    x_big_t: &Tensor,
    steps: u32,
    mut velocity: impl FnMut(&Tensor, u32) -> Result<Tensor>,
) -> Result<Tensor> {
    if steps == 0 || schedule.steps % steps != 0 {
        return Err(Error::InvalidConfig(format!("{steps} Euler steps do not divide T = {}", schedule.steps)));
    }
    let delta = schedule.steps / steps;
    let mut x = x_big_t.clone();
    let mut t = schedule.steps;
    while t > 0 {
        let v = velocity(&x, t)?;
        let ds = schedule.sigma(t) - schedule.sigma(t - delta);
        x = lincomb(1.0, &x, -ds, &v)?;
        t -= delta;
    }
    Ok(x)
}

/// `x̃_{t0} = diffuse(x̃, t0, ε)` then one denoising step at `t0`.
pub fn one_step_with(
    schedule: &DiffusionSchedule,
    t0: u32,
    x_tilde: &Tensor,
    eps: &Tensor,
    velocity: impl FnOnce(&Tensor, u32) -> Result<Tensor>,
) -> Result<Tensor> {
    if x_tilde.shape() != eps.shape() {
        return Err(Error::InvalidConfig("input and noise shapes differ".into()));
    }
    let xt = Tensor::new(x_tilde.shape().to_vec(), schedule.diffuse(x_tilde.data(), t0, eps.data()))?;
    let v = velocity(&xt, t0)?;
    denoise(&xt, schedule.sigma(t0), &v)
}

/// Frozen base, the restorer adapter `φ⁻` and the critic adapter `φ⁺`.
#[derive(Clone, Debug, PartialEq)]
pub struct RestorerState {
    pub base: DenoiserNet,
    /// When false the base is replaced by the zero-noise predictor
    /// `v = −x_t / (1 − σ_t)`, which makes restoration a passthrough of the
    /// noised input and an exact identity for `ε = 0`.
    pub base_enabled: bool,
    pub phi_minus: Adapter,
    pub phi_plus: Adapter,
    pub lora: LoraConfig,
    pub schedule: DiffusionSchedule,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    net: NetConfig,
    schedule: DiffusionSchedule,
    #[serde(default)]
    lora: Option<LoraConfig>,
    #[serde(default = "yes")]
    base_enabled: bool,
}

fn yes() -> bool {
    true
}

pub const BASE_KIND: &str = "denoiser-base";
pub const RESTORER_KIND: &str = "restorer";

impl RestorerState {
    /// Fresh zero-initialized adapters around `base`, seeded independently.
    pub fn new(base: DenoiserNet, lora: LoraConfig, schedule: DiffusionSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi_minus = Adapter::new(&base, lora, &mut rng)?;
        let phi_plus = Adapter::new(&base, lora, &mut rng)?;
        Ok(Self {
            base,
            base_enabled: true,
            phi_minus,
            phi_plus,
            lora,
            schedule,
        })
    }

    /// A state whose every prediction is the zero-noise velocity.
    pub fn identity(schedule: DiffusionSchedule) -> Result<Self> {
        let net = NetConfig {
            width: 1,
            bottleneck: 1,
            mid_blocks: 0,
            time_dim: 1,
            time_freqs: 1,
            n_classes: 1,
        };
        let base = DenoiserNet::new(net, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut s = Self::new(base, LoraConfig { rank: 1, scale: 1.0 }, schedule, 0)?;
        s.base_enabled = false;
        Ok(s)
    }

    pub fn adapter(&self, which: Which) -> Option<&Adapter> {
        match which {
            Which::Base => None,
            Which::PhiMinus => Some(&self.phi_minus),
            Which::PhiPlus => Some(&self.phi_plus),
        }
    }

    /// One unguided forward pass, `x_t: [B, 3, H, W]`.
    pub fn velocity(&self, which: Which, x_t: &Tensor, t: &[u32], cond: &[Option<u32>]) -> Result<Tensor> {
        if !self.base_enabled {
            return Ok(self.zero_noise_velocity(x_t, t));
        }
        let mut g = Graph::new();
        let w = bind_frozen(&mut g, &self.base, self.adapter(which));
        let x = g.constant(x_t.clone());
        let v = self.base.forward(&mut g, &w, x, t, self.schedule.steps, cond)?;
        Ok(g.value(v).clone())
    }

    fn zero_noise_velocity(&self, x_t: &Tensor, t: &[u32]) -> Tensor {
        let per = x_t.numel() / t.len().max(1);
        let mut v = x_t.clone();
        for (chunk, &ti) in v.data_mut().chunks_mut(per).zip(t) {
            let keep = 1.0 - self.schedule.sigma(ti);
            for x in chunk {
                *x = if keep > 0.0 { -*x / keep } else { 0.0 };
            }
        }
        v
    }

    /// Guided velocity `v_u + g·(v_c − v_u)`. With `g = 1` only the
    /// conditional pass runs; null-condition samples return `v_u` for any `g`.
    pub fn predict(&self, which: Which, x_t: &Tensor, t: &[u32], cond: &[Option<u32>], g: f32) -> Result<Tensor> {
        let b = x_t.shape().first().copied().unwrap_or(0);
        if t.len() != b || cond.len() != b {
            return Err(Error::InvalidConfig("timestep, condition and batch sizes differ".into()));
        }
        if g == 1.0 || cond.iter().all(Option::is_none) {
            return self.velocity(which, x_t, t, cond);
        }
        let both = concat(&[x_t, x_t])?;
        let tt: Vec<u32> = t.iter().chain(t).copied().collect();
        let cc: Vec<Option<u32>> = cond.iter().copied().chain(std::iter::repeat_n(None, b)).collect();
        let v = self.velocity(which, &both, &tt, &cc)?;
        let (vc, vu) = (rows(&v, 0, b), rows(&v, b, b));
        let per = x_t.numel() / b;
        let mut out = vu.clone();
        for (i, c) in cond.iter().enumerate() {
            if c.is_none() {
                continue;
            }
            let r = i * per..(i + 1) * per;
            for ((o, &c), &u) in out.data_mut()[r.clone()].iter_mut().zip(&vc.data()[r.clone()]).zip(&vu.data()[r]) {
                *o = u + g * (c - u);
            }
        }
        Ok(out)
    }

    /// `s(x_t) = x_t − σ_t·v̂(x_t, t)`, per sample.
    pub fn denoised_estimate(
        &self,
        which: Which,
        x_t: &Tensor,
        t: &[u32],
        cond: &[Option<u32>],
        g: f32,
    ) -> Result<Tensor> {
        let v = self.predict(which, x_t, t, cond, g)?;
        let sig: Vec<f32> = t.iter().map(|&ti| self.schedule.sigma(ti)).collect();
        let scaled = crate::latent::scale_rows(&v, &sig);
        lincomb(1.0, x_t, -1.0, &scaled)
    }

    pub fn euler_sample(
        &self,
        which: Which,
        x_big_t: &Tensor,
        steps: u32,
        cond: &[Option<u32>],
        g: f32,
    ) -> Result<Tensor> {
        euler_with(&self.schedule, x_big_t, steps, |x, t| {
            self.predict(which, x, &vec![t; cond.len()], cond, g)
        })
    }

    /// `x̂ = x̃_{t0} − σ_{t0}·v̂_{φ⁻}(x̃_{t0}, t0)` at the schedule's `t0`;
    /// `t0 = T` is the no-intermediate-state ablation.
    pub fn one_step_restore(&self, x_tilde: &Tensor, eps: &Tensor, cond: &[Option<u32>], g: f32) -> Result<Tensor> {
        let t0 = self.schedule.t0;
        one_step_with(&self.schedule, t0, x_tilde, eps, |xt, t| {
            self.predict(Which::PhiMinus, xt, &vec![t; cond.len()], cond, g)
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = Header {
            kind: RESTORER_KIND.into(),
            net: self.base.config,
            schedule: self.schedule,
            lora: Some(self.lora),
            base_enabled: self.base_enabled,
        };
        let mut ck = Checkpoint::new(serde_json::to_string(&header)?);
        for (name, t) in &self.base.params {
            ck.push(format!("base.{name}"), t.clone());
        }
        for (prefix, ad) in [("phi_minus", &self.phi_minus), ("phi_plus", &self.phi_plus)] {
            for f in &ad.factors {
                ck.push(format!("{prefix}.{}.A", f.target), f.a.clone());
                ck.push(format!("{prefix}.{}.B", f.target), f.b.clone());
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let header: Header = serde_json::from_str(&ck.header)?;
        if header.kind != RESTORER_KIND {
            return Err(Error::Checkpoint(format!("expected a {RESTORER_KIND} checkpoint, found `{}`", header.kind)));
        }
        header.schedule.validate()?;
        let lora = header.lora.ok_or_else(|| Error::Checkpoint("missing adapter configuration".into()))?;
        let base = DenoiserNet::from_params(header.net, |n| ck.get(&format!("base.{n}")).cloned())?;
        let mut state = Self::new(base, lora, header.schedule, 0)?;
        state.base_enabled = header.base_enabled;
        for (prefix, ad) in [("phi_minus", &mut state.phi_minus), ("phi_plus", &mut state.phi_plus)] {
            for f in &mut ad.factors {
                for (suffix, slot) in [("A", &mut f.a), ("B", &mut f.b)] {
                    let name = format!("{prefix}.{}.{suffix}", f.target);
                    let t = ck.get(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
                    if t.shape() != slot.shape() {
                        return Err(Error::Checkpoint(format!("`{name}` has shape {:?}", t.shape())));
                    }
                    *slot = t.clone();
                }
            }
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Writes a pretrained base network with its schedule.
pub fn save_base(net: &DenoiserNet, schedule: &DiffusionSchedule, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        kind: BASE_KIND.into(),
        net: net.config,
        schedule: *schedule,
        lora: None,
        base_enabled: true,
    };
    let mut ck = Checkpoint::new(serde_json::to_string(&header)?);
    for (name, t) in &net.params {
        ck.push(name.clone(), t.clone());
    }
    Ok(ck.save(path)?)
}

pub fn load_base(path: impl AsRef<Path>) -> Result<(DenoiserNet, DiffusionSchedule)> {
    let ck = Checkpoint::load(path)?;
    let header: Header = serde_json::from_str(&ck.header)?;
    if header.kind != BASE_KIND {
        return Err(Error::Checkpoint(format!("expected a {BASE_KIND} checkpoint, found `{}`", header.kind)));
    }
    header.schedule.validate()?;
    let net = DenoiserNet::from_params(header.net, |n| ck.get(n).cloned())?;
    Ok((net, header.schedule))
}
