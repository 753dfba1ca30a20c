//! Flow-matching pretraining of the base denoiser on clean images.

use diffeng::optim::global_norm;
use diffeng::{AdamW, AdamWConfig, Graph, ParamMut, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::stack;
use crate::net::{bind_base_trainable, DenoiserNet};
use crate::schedule::DiffusionSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub clip_norm: f32,
    /// Probability of replacing a sample's condition with the null token.
    pub cond_dropout: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            clip_norm: 1.0,
            cond_dropout: 0.1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.cond_dropout) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!("pretraining settings out of range: {self:?}")));
        }
        Ok(())
    }
}

/// One clean latent `[3, H, W]` with its class condition.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanSample {
    pub latent: Tensor,
    pub cond: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// `N(0, 1)` tensor drawn from `rng`.
pub fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("size matches shape")
}

/// Trains every base parameter with `‖v_θ(x_t, t) − (ε − x)‖²` at
/// `t ~ U{1..T}`. Deterministic for a fixed seed in sequential mode.
pub fn pretrain(
    net: &mut DenoiserNet,
    schedule: &DiffusionSchedule,
    data: &[CleanSample],
    cfg: &PretrainConfig,
    seed: u64,
    mut log: impl FnMut(&PretrainReport),
) -> Result<Vec<PretrainReport>> {
    cfg.validate()?;
    schedule.validate()?;
    if data.is_empty() && cfg.steps > 0 {
        return Err(Error::InvalidConfig("pretraining needs at least one clean image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        clip_norm: Some(cfg.clip_norm),
        ..AdamWConfig::default()
    });
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<&CleanSample> = (0..cfg.batch).map(|_| &data[rng.random_range(0..data.len())]).collect();
        let x = stack(&picks.iter().map(|s| &s.latent).collect::<Vec<_>>())?;
        let t: Vec<u32> = (0..cfg.batch).map(|_| rng.random_range(1..=schedule.steps)).collect();
        let cond: Vec<Option<u32>> = picks
            .iter()
            .map(|s| if rng.random_bool(cfg.cond_dropout) { None } else { s.cond })
            .collect();
        let eps = gaussian(x.shape(), &mut rng);
        let per = x.numel() / cfg.batch;
        let mut xt = vec![0.0; x.numel()];
        let mut target = vec![0.0; x.numel()];
        for (i, &ti) in t.iter().enumerate() {
            let r = i * per..(i + 1) * per;
            xt[r.clone()].copy_from_slice(&schedule.diffuse(&x.data()[r.clone()], ti, &eps.data()[r.clone()]));
            for k in r {
                target[k] = eps.data()[k] - x.data()[k];
            }
        }

        let mut g = Graph::new();
        let w = bind_base_trainable(&mut g, net);
        let xv = g.constant(Tensor::new(x.shape().to_vec(), xt)?);
        let tv = g.constant(Tensor::new(x.shape().to_vec(), target)?);
        let v = net.forward(&mut g, &w, xv, &t, schedule.steps, &cond)?;
        let loss = g.mse(v, tv)?;
        let loss_value = g.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("pretraining loss {loss_value}"),
            });
        }
        g.backward(loss)?;
        let grads: Vec<Tensor> = w.iter().map(|&v| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec()))).collect();
        let grad_norm = global_norm(grads.iter().map(|t| t.data()));
        let mut params: Vec<ParamMut> = net
            .params
            .iter_mut()
            .zip(&grads)
            .map(|((name, value), grad)| ParamMut {
                name,
                value: value.data_mut(),
                grad: grad.data(),
            })
            .collect();
        opt.step(&mut params)?;
        let report = PretrainReport {
            step,
            loss: loss_value,
            grad_norm,
        };
        log(&report);
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn tiny_data() -> Vec<CleanSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..4)
            .map(|i| CleanSample {
                latent: Tensor::new([3, 8, 8], (0..192).map(|_| -0.5 + 0.3 * i as f32 + 0.05 * rng.random::<f32>()).collect()).unwrap(),
                cond: Some(i % 2),
            })
            .collect()
    }

    fn tiny_net() -> DenoiserNet {
        let cfg = NetConfig {
            width: 4,
            bottleneck: 6,
            mid_blocks: 1,
            time_dim: 8,
            time_freqs: 4,
            n_classes: 2,
        };
        DenoiserNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn loss_decreases_and_is_reproducible() {
        let cfg = PretrainConfig {
            steps: 150,
            batch: 4,
            lr: 3e-3,
            ..PretrainConfig::default()
        };
        let mut a = tiny_net();
        let ra = pretrain(&mut a, &DiffusionSchedule::default(), &tiny_data(), &cfg, 3, |_| {}).unwrap();
        let first: f64 = ra[..20].iter().map(|r| r.loss).sum();
        let last: f64 = ra[130..].iter().map(|r| r.loss).sum();
        assert!(last < first, "{first} -> {last}");
        let mut b = tiny_net();
        let rb = pretrain(&mut b, &DiffusionSchedule::default(), &tiny_data(), &cfg, 3, |_| {}).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_steps_leave_the_network_alone() {
        let mut n = tiny_net();
        let before = n.clone();
        let cfg = PretrainConfig { steps: 0, ..PretrainConfig::default() };
        assert!(pretrain(&mut n, &DiffusionSchedule::default(), &[], &cfg, 0, |_| {}).unwrap().is_empty());
        assert_eq!(n, before);
    }
}
