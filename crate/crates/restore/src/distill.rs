//! Distribution-matching distillation of the one-step restorer.
//!
//! Each global step runs one `φ⁻` update (score-difference signal plus
//! fidelity and perceptual terms) followed by one `φ⁺` update (flow-matching
//! on the current restorations). The base network is never written.

use std::path::Path;

use diffeng::optim::global_norm;
use diffeng::{AdamW, AdamWConfig, Graph, ParamMut, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{concat, lincomb, rows, stack};
use crate::model::{RestorerState, Which};
use crate::net::bind_trainable;
use crate::perceptual::{self, Perceptual};
use crate::pretrain::gaussian;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Weight of the critic term; `1 − α` weights the ground-truth term.
    pub alpha: f32,
    /// Guidance scale for both teacher scores.
    pub cfg_scale: f32,
    /// Intermediate state the restorer starts from; `t0 = T` is the ablation.
    pub t0: u32,
    pub lambda_kl: f32,
    pub lambda_l2: f32,
    pub lambda_perc: f32,
    /// Multiplies the reference learning rates `5e-6` (`φ⁻`) and `1e-6` (`φ⁺`).
    pub lr_scale: f32,
    pub lr_decay: LrDecay,
    pub weight_decay: f32,
    pub clip_norm: f32,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub cond_dropout: f64,
    /// Write `restorer_step<k>.ckpt` every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub perceptual_seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            cfg_scale: 7.5,
            t0: 199,
            lambda_kl: 1.0,
            lambda_l2: 1.0,
            lambda_perc: 1.0,
            lr_scale: 800.0,
            lr_decay: LrDecay::Cosine,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            steps: 2000,
            batch: 4,
            seed: 0,
            cond_dropout: 0.1,
            checkpoint_every: 500,
            perceptual_seed: perceptual::DEFAULT_SEED,
        }
    }
}

/// How both adapter learning rates evolve over the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    Constant,
    /// Half cosine from the full rate at step 0 towards zero at `steps`.
    Cosine,
}

pub const LR_PHI_MINUS: f32 = 5e-6;
pub const LR_PHI_PLUS: f32 = 1e-6;

impl DistillConfig {
    pub fn validate(&self, steps_t: u32) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.t0 == 0 || self.t0 > steps_t {
            return bad(format!("t0 {} outside (0, {steps_t}]", self.t0));
        }
        if self.batch == 0 || !(self.lr_scale > 0.0) || !(self.clip_norm > 0.0) {
            return bad("batch, lr_scale and clip_norm must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) || !self.cfg_scale.is_finite() {
            return bad("cond_dropout must lie in [0, 1] and cfg_scale be finite".into());
        }
        Ok(())
    }

    pub fn lr_minus(&self) -> f32 {
        LR_PHI_MINUS * self.lr_scale
    }

    pub fn lr_plus(&self) -> f32 {
        LR_PHI_PLUS * self.lr_scale
    }

    /// Multiplier applied to both rates at `step`.
    pub fn lr_factor(&self, step: usize) -> f32 {
        match self.lr_decay {
            LrDecay::Cosine if self.steps > 0 => {
                let frac = step.min(self.steps) as f64 / self.steps as f64;
                (0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
            }
            _ => 1.0,
        }
    }
}

/// One training pair as latents `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clean: Tensor,
    pub degraded: Tensor,
    pub cond: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// Surrogate `λ_kl·mean(signal ⊙ x̂)`; its gradient is the distribution-matching term.
    pub l_kl: f64,
    pub l2: f64,
    pub perceptual: f64,
    pub l_phi_minus: f64,
    pub l_phi_plus: f64,
    /// Global gradient norms before clipping.
    pub grad_norm_minus: f64,
    pub grad_norm_plus: f64,
}

impl StepReport {
    pub fn is_finite(&self) -> bool {
        [
            self.l_kl,
            self.l2,
            self.perceptual,
            self.l_phi_minus,
            self.l_phi_plus,
            self.grad_norm_minus,
            self.grad_norm_plus,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn diffuse_rows(state: &RestorerState, x: &Tensor, t: &[u32], eps: &Tensor) -> Result<Tensor> {
    let per = x.numel() / t.len().max(1);
    let mut out = Vec::with_capacity(x.numel());
    for (i, &ti) in t.iter().enumerate() {
        let r = i * per..(i + 1) * per;
        out.extend(state.schedule.diffuse(&x.data()[r.clone()], ti, &eps.data()[r]));
    }
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}

/// Un-normalized score-difference signal applied to `x̂`.
///
/// With shared `t` and `ε_t`, `x̂_t` and `x_t` follow the forward process and
/// `signal = α·(s_φ⁺(x̂_t) − s_real(x̂_t)) + (1 − α)·[(s_real(x_t) − x) − (s_real(x̂_t) − x̂)]`,
/// where `s` are guided denoised estimates. Both brackets are proportional
/// (by the same positive factor) to differences of the noisy-marginal score
/// `((1 − σ)·s(y) − y)/σ²`, so descending along the signal moves `x̂` from
/// the critic's density toward the real one and toward the ground truth.
#[allow(clippy::too_many_arguments)]
pub fn dmd_signal(
    state: &RestorerState,
    x_hat: &Tensor,
    x: &Tensor,
    t: &[u32],
    eps_t: &Tensor,
    cond: &[Option<u32>],
    alpha: f32,
    g: f32,
) -> Result<Tensor> {
    if x_hat.shape() != x.shape() || x.shape() != eps_t.shape() {
        return Err(Error::InvalidConfig("restored, clean and noise batches differ in shape".into()));
    }
    let b = t.len();
    let xh_t = diffuse_rows(state, x_hat, t, eps_t)?;
    let mut signal = Tensor::zeros(x.shape().to_vec());
    if alpha < 1.0 {
        let x_t = diffuse_rows(state, x, t, eps_t)?;
        let both = concat(&[&xh_t, &x_t])?;
        let tt: Vec<u32> = t.iter().chain(t).copied().collect();
        let cc: Vec<Option<u32>> = cond.iter().chain(cond).copied().collect();
        let s = state.denoised_estimate(Which::Base, &both, &tt, &cc, g)?;
        let (real_hat, real_x) = (rows(&s, 0, b), rows(&s, b, b));
        // (s_real(x_t) − x) − (s_real(x̂_t) − x̂)
        let gt = lincomb(1.0, &lincomb(1.0, &real_x, -1.0, x)?, -1.0, &lincomb(1.0, &real_hat, -1.0, x_hat)?)?;
        signal = lincomb(1.0, &signal, 1.0 - alpha, &gt)?;
        if alpha > 0.0 {
            let fake = state.denoised_estimate(Which::PhiPlus, &xh_t, t, cond, g)?;
            signal = lincomb(1.0, &signal, alpha, &lincomb(1.0, &fake, -1.0, &real_hat)?)?;
        }
    } else {
        let real_hat = state.denoised_estimate(Which::Base, &xh_t, t, cond, g)?;
        let fake = state.denoised_estimate(Which::PhiPlus, &xh_t, t, cond, g)?;
        signal = lincomb(alpha, &lincomb(1.0, &fake, -1.0, &real_hat)?, 0.0, &signal)?;
    }
    Ok(signal)
}

/// Divides each sample by `mean|signal| + 1e-4`.
pub fn normalize_signal(signal: &Tensor) -> Tensor {
    let b = signal.shape()[0].max(1);
    let per = signal.numel() / b;
    let mut out = signal.clone();
    for chunk in out.data_mut().chunks_mut(per) {
        let m = chunk.iter().map(|v| v.abs() as f64).sum::<f64>() / per as f64;
        let d = (m + 1e-4) as f32;
        for v in chunk {
            *v /= d;
        }
    }
    out
}

/// Owns the optimizers and random stream for the alternating updates.
pub struct Distiller {
    pub state: RestorerState,
    pub cfg: DistillConfig,
    opt_minus: AdamW,
    opt_plus: AdamW,
    perceptual: Perceptual,
    rng: ChaCha8Rng,
}

struct MinusOut {
    l_kl: f64,
    l2: f64,
    perceptual: f64,
    total: f64,
    grad_norm: f64,
}

fn adam(lr: f32, cfg: &DistillConfig) -> AdamW {
    AdamW::new(AdamWConfig {
        lr,
        weight_decay: cfg.weight_decay,
        clip_norm: Some(cfg.clip_norm),
        ..AdamWConfig::default()
    })
}

fn batch_tensors(batch: &[Sample]) -> Result<(Tensor, Tensor, Vec<Option<u32>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty training batch".into()));
    }
    let clean = stack(&batch.iter().map(|s| &s.clean).collect::<Vec<_>>())?;
    let degraded = stack(&batch.iter().map(|s| &s.degraded).collect::<Vec<_>>())?;
    if clean.shape() != degraded.shape() {
        return Err(Error::InvalidConfig("clean and degraded images differ in size".into()));
    }
    Ok((clean, degraded, batch.iter().map(|s| s.cond).collect()))
}

fn apply(
    opt: &mut AdamW,
    adapter: &mut crate::net::Adapter,
    grads: &[Tensor],
) -> Result<diffeng::StepStats> {
    let mut params: Vec<ParamMut> = Vec::with_capacity(grads.len());
    let tensors: Vec<(String, &mut Tensor)> = adapter.tensors_mut().collect();
    let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
    for ((_, value), (grad, name)) in tensors.into_iter().zip(grads.iter().zip(&names)) {
        params.push(ParamMut {
            name,
            value: value.data_mut(),
            grad: grad.data(),
        });
    }
    Ok(opt.step(&mut params)?)
}

impl Distiller {
    /// Adopts `cfg.t0` into the state's schedule so checkpoints carry it.
    pub fn new(mut state: RestorerState, cfg: DistillConfig) -> Result<Self> {
        cfg.validate(state.schedule.steps)?;
        state.schedule.t0 = cfg.t0;
        state.schedule.validate()?;
        Ok(Self {
            opt_minus: adam(cfg.lr_minus(), &cfg),
            opt_plus: adam(cfg.lr_plus(), &cfg),
            perceptual: Perceptual::new(cfg.perceptual_seed),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            state,
            cfg,
        })
    }

    fn sample_t(&mut self, n: usize) -> Vec<u32> {
        let s = self.state.schedule;
        (0..n).map(|_| self.rng.random_range(s.t_min..=s.t_max)).collect()
    }

    fn phi_minus_step(&mut self, batch: &[Sample]) -> Result<MinusOut> {
        let (x, x_tilde, cond) = batch_tensors(batch)?;
        let b = batch.len();
        let t0 = self.state.schedule.t0;
        let eps = gaussian(x.shape(), &mut self.rng);
        let xt0 = diffuse_rows(&self.state, &x_tilde, &vec![t0; b], &eps)?;

        let mut g = Graph::new();
        let (w, vars) = bind_trainable(&mut g, &self.state.base, &self.state.phi_minus)?;
        let xin = g.constant(xt0);
        let v = self.state.base.forward(&mut g, &w, xin, &vec![t0; b], self.state.schedule.steps, &cond)?;
        let sv = g.scale(v, self.state.schedule.sigma(t0));
        let x_hat = g.sub(xin, sv)?;
        let x_hat_value = g.value(x_hat).clone();

        let t = self.sample_t(b);
        let eps_t = gaussian(x.shape(), &mut self.rng);
        let signal = if self.cfg.lambda_kl != 0.0 {
            let s = dmd_signal(&self.state, &x_hat_value, &x, &t, &eps_t, &cond, self.cfg.alpha, self.cfg.cfg_scale)?;
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    step: 0,
                    detail: "teacher scores are not finite".into(),
                });
            }
            normalize_signal(&s)
        } else {
            Tensor::zeros(x.shape().to_vec())
        };

        let sig = g.constant(signal);
        let prod = g.mul(sig, x_hat)?;
        let kl = g.mean(prod);
        let kl = g.scale(kl, self.cfg.lambda_kl);
        let xc = g.constant(x);
        let l2 = g.mse(x_hat, xc)?;
        let perc = self.perceptual.graph_distance(&mut g, x_hat, xc)?;
        let l2w = g.scale(l2, self.cfg.lambda_l2);
        let pw = g.scale(perc, self.cfg.lambda_perc);
        let total = g.add(kl, l2w)?;
        let total = g.add(total, pw)?;
        let out = MinusOut {
            l_kl: g.value(kl).item() as f64,
            l2: g.value(l2).item() as f64,
            perceptual: g.value(perc).item() as f64,
            total: g.value(total).item() as f64,
            grad_norm: 0.0,
        };
        g.backward(total)?;
        let grads: Vec<Tensor> = vars
            .vars
            .iter()
            .map(|&v| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec())))
            .collect();
        let grad_norm = global_norm(grads.iter().map(|t| t.data()));
        apply(&mut self.opt_minus, &mut self.state.phi_minus, &grads)?;
        Ok(MinusOut { grad_norm, ..out })
    }

    fn phi_plus_step(&mut self, batch: &[Sample]) -> Result<(f64, f64)> {
        let (_, x_tilde, cond) = batch_tensors(batch)?;
        let b = batch.len();
        let eps0 = gaussian(x_tilde.shape(), &mut self.rng);
        let x_hat = self.state.one_step_restore(&x_tilde, &eps0, &cond, 1.0)?;
        let t = self.sample_t(b);
        let eps = gaussian(x_hat.shape(), &mut self.rng);
        let xh_t = diffuse_rows(&self.state, &x_hat, &t, &eps)?;
        let target = lincomb(1.0, &eps, -1.0, &x_hat)?;
        let dropout = self.cfg.cond_dropout;
        let cond: Vec<Option<u32>> = cond
            .iter()
            .map(|&c| if self.rng.random_bool(dropout) { None } else { c })
            .collect();

        let mut g = Graph::new();
        let (w, vars) = bind_trainable(&mut g, &self.state.base, &self.state.phi_plus)?;
        let xin = g.constant(xh_t);
        let v = self.state.base.forward(&mut g, &w, xin, &t, self.state.schedule.steps, &cond)?;
        let tv = g.constant(target);
        let loss = g.mse(v, tv)?;
        let value = g.value(loss).item() as f64;
        g.backward(loss)?;
        let grads: Vec<Tensor> = vars
            .vars
            .iter()
            .map(|&v| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec())))
            .collect();
        let grad_norm = global_norm(grads.iter().map(|t| t.data()));
        apply(&mut self.opt_plus, &mut self.state.phi_plus, &grads)?;
        Ok((value, grad_norm))
    }

    /// Runs only the `φ⁻` half of a step; `φ⁺` and the base are untouched.
    pub fn step_phi_minus(&mut self, batch: &[Sample], step: usize) -> Result<StepReport> {
        self.opt_minus.config.lr = self.cfg.lr_minus() * self.cfg.lr_factor(step);
        let m = self.phi_minus_step(batch).map_err(|e| at_step(e, step))?;
        Ok(StepReport {
            step,
            l_kl: m.l_kl,
            l2: m.l2,
            perceptual: m.perceptual,
            l_phi_minus: m.total,
            l_phi_plus: 0.0,
            grad_norm_minus: m.grad_norm,
            grad_norm_plus: 0.0,
        })
    }

    /// Runs only the `φ⁺` half of a step on freshly restored, detached images.
    pub fn step_phi_plus(&mut self, batch: &[Sample], step: usize) -> Result<(f64, f64)> {
        self.opt_plus.config.lr = self.cfg.lr_plus() * self.cfg.lr_factor(step);
        self.phi_plus_step(batch).map_err(|e| at_step(e, step))
    }

    /// One `φ⁻` update followed by one `φ⁺` update on the same batch.
    pub fn step(&mut self, batch: &[Sample], step: usize) -> Result<StepReport> {
        let mut r = self.step_phi_minus(batch, step)?;
        let (l, n) = self.step_phi_plus(batch, step)?;
        r.l_phi_plus = l;
        r.grad_norm_plus = n;
        Ok(r)
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite { step, detail },
        other => other,
    }
}

/// Supplies training batches; implementations must be deterministic in `rng`.
pub trait BatchSource {
    fn next_batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>>;
}

/// Uniform draws with replacement from an in-memory pool.
impl BatchSource for Vec<Sample> {
    fn next_batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
        if self.is_empty() {
            return Err(Error::InvalidConfig("no training pairs".into()));
        }
        Ok((0..n).map(|_| self[rng.random_range(0..self.len())].clone()).collect())
    }
}

/// Seed offset separating the batch stream from the noise stream.
const DATA_STREAM: u64 = 0x0da7_a5ee_d000_0001;

/// Strictly alternating training for `cfg.steps` global steps. Writes
/// `restorer_step<k>.ckpt` into `ckpt_dir` every `cfg.checkpoint_every`
/// steps and aborts with [`Error::NonFinite`] (carrying the offending
/// report as JSON) on the first non-finite value.
pub fn train(
    state: RestorerState,
    source: &mut dyn BatchSource,
    cfg: &DistillConfig,
    ckpt_dir: Option<&Path>,
    mut log: impl FnMut(&StepReport),
) -> Result<(RestorerState, Vec<StepReport>)> {
    let mut d = Distiller::new(state, *cfg)?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DATA_STREAM);
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = source.next_batch(cfg.batch, &mut data_rng)?;
        let r = d.step(&batch, step)?;
        if !r.is_finite() || !adapters_finite(&d.state) {
            return Err(Error::NonFinite {
                step,
                detail: serde_json::to_string(&r)?,
            });
        }
        log(&r);
        reports.push(r);
        if let Some(dir) = ckpt_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                d.state.save(dir.join(format!("restorer_step{}.ckpt", step + 1)))?;
            }
        }
    }
    Ok((d.state, reports))
}

fn adapters_finite(s: &RestorerState) -> bool {
    [&s.phi_minus, &s.phi_plus]
        .iter()
        .all(|a| a.factors.iter().all(|f| f.a.is_finite() && f.b.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{DenoiserNet, LoraConfig, NetConfig};
    use crate::schedule::DiffusionSchedule;

    fn state() -> RestorerState {
        let cfg = NetConfig {
            width: 4,
            bottleneck: 6,
            mid_blocks: 1,
            time_dim: 8,
            time_freqs: 4,
            n_classes: 2,
        };
        let base = DenoiserNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        RestorerState::new(base, LoraConfig { rank: 2, scale: 1.0 }, DiffusionSchedule::default(), 3).unwrap()
    }

    fn pool() -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..3)
            .map(|i| {
                let clean = gaussian(&[3, 8, 8], &mut rng).map(|v| 0.3 * v);
                let degraded = clean.map(|v| 0.7 * v);
                Sample {
                    clean,
                    degraded,
                    cond: (i < 2).then_some(i),
                }
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate(1000).is_ok());
        assert!(DistillConfig { alpha: 1.5, ..Default::default() }.validate(1000).is_err());
        assert!(DistillConfig { t0: 1001, ..Default::default() }.validate(1000).is_err());
        assert!(DistillConfig { t0: 1000, ..Default::default() }.validate(1000).is_ok());
        let c = DistillConfig::default();
        assert!((c.lr_minus() - 4e-3).abs() < 1e-9 && (c.lr_plus() - 8e-4).abs() < 1e-9);
    }

    #[test]
    fn cosine_decay_runs_from_one_towards_zero() {
        let c = DistillConfig { steps: 100, ..Default::default() };
        assert_eq!(c.lr_factor(0), 1.0);
        assert!((c.lr_factor(50) - 0.5).abs() < 1e-6);
        assert!(c.lr_factor(99) > 0.0 && c.lr_factor(99) < 1e-3);
        let f: Vec<f32> = (0..100).map(|k| c.lr_factor(k)).collect();
        assert!(f.windows(2).all(|w| w[1] < w[0]));
        let flat = DistillConfig { lr_decay: LrDecay::Constant, ..c };
        assert!((0..100).all(|k| flat.lr_factor(k) == 1.0));
    }

    #[test]
    fn normalization_is_per_sample() {
        let s = Tensor::new([2, 2], vec![2.0, -2.0, 0.5, 0.5]).unwrap();
        let n = normalize_signal(&s);
        assert!((n.data()[0] - 2.0 / 2.0001).abs() < 1e-6);
        assert!((n.data()[2] - 0.5 / 0.5001).abs() < 1e-6);
        assert_eq!(normalize_signal(&Tensor::zeros([1, 4])).data(), &[0.0; 4]);
    }

    #[test]
    fn zero_steps_return_initial_state() {
        let s = state();
        let cfg = DistillConfig { steps: 0, ..Default::default() };
        let (out, log) = train(s.clone(), &mut pool(), &cfg, None, |_| {}).unwrap();
        assert!(log.is_empty());
        assert_eq!(out.phi_minus, s.phi_minus);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut d = Distiller::new(state(), DistillConfig::default()).unwrap();
        assert!(d.step(&[], 0).is_err());
    }
}
