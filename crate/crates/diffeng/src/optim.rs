//! AdamW with global-norm gradient clipping.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    /// Global L2 norm the concatenated gradient is clipped to; `None` disables.
    pub clip_norm: Option<f32>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

/// One parameter as seen by the optimizer.
pub struct ParamMut<'a> {
    pub name: &'a str,
    pub value: &'a mut [f32],
    pub grad: &'a [f32],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor the gradients were multiplied by (1 when not clipped).
    pub clip_scale: f32,
}

/// Optimizer state: first and second moments per parameter, created on the
/// first step and checked against the parameter sizes afterwards.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

/// L2 norm of all gradients taken together, accumulated in f64.
pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a [f32]>) -> f64 {
    grads
        .into_iter()
        .flat_map(|g| g.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [ParamMut<'_>]) -> Result<StepStats> {
        for p in params.iter() {
            if p.value.len() != p.grad.len() {
                return Err(Error::OptimizerState(format!(
                    "`{}` has {} values but {} gradient entries",
                    p.name,
                    p.value.len(),
                    p.grad.len()
                )));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.to_string()));
            }
        }
        if self.step == 0 && self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
            return Err(Error::OptimizerState(format!(
                "expected {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }

        let grad_norm = global_norm(params.iter().map(|p| p.grad));
        let clip_scale = match self.config.clip_norm {
            Some(c) if grad_norm > c as f64 => (c as f64 / grad_norm) as f32,
            _ => 1.0,
        };

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i] * clip_scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value[i] = p.value[i] * decay - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(StepStats {
            grad_norm,
            clip_scale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            ..Default::default()
        });
        let mut w = vec![1.5, -2.0];
        let g = vec![0.0, 0.0];
        for _ in 0..5 {
            opt.step(&mut [ParamMut {
                name: "w",
                value: &mut w,
                grad: &g,
            }])
            .unwrap();
        }
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn clipping_scales_to_norm() {
        let mut opt = AdamW::new(AdamWConfig {
            clip_norm: Some(1.0),
            ..Default::default()
        });
        let mut w = vec![0.0, 0.0];
        let g = vec![6.0, 8.0];
        let stats = opt
            .step(&mut [ParamMut {
                name: "w",
                value: &mut w,
                grad: &g,
            }])
            .unwrap();
        assert!((stats.grad_norm - 10.0).abs() < 1e-12);
        assert!((stats.clip_scale - 0.1).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut w = vec![0.0];
        let err = opt
            .step(&mut [ParamMut {
                name: "enc.weight",
                value: &mut w,
                grad: &[f32::NAN],
            }])
            .unwrap_err();
        assert!(err.to_string().contains("enc.weight"));
    }

    #[test]
    fn decoupled_decay_without_gradient() {
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        });
        let mut w = vec![2.0];
        opt.step(&mut [ParamMut {
            name: "w",
            value: &mut w,
            grad: &[0.0],
        }])
        .unwrap();
        assert!((w[0] - 2.0 * 0.95).abs() < 1e-6);
    }
}
