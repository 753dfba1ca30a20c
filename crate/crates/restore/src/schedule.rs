use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear noise schedule `σ_t = t / T` over integer timesteps `0..=T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSchedule {
    pub steps: u32,
    /// Intermediate state the restorer projects degraded inputs to.
    pub t0: u32,
    pub t_min: u32,
    pub t_max: u32,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self {
            steps: 1000,
            t0: 199,
            t_min: 20,
            t_max: 980,
        }
    }
}

impl DiffusionSchedule {
    /// Requires `0 < t0 ≤ T` and `0 < t_min < t_max < T`. `t0 = T` is the
    /// "no intermediate state" ablation.
    pub fn validate(&self) -> Result<()> {
        let t = self.steps;
        if t < 2 {
            return Err(Error::InvalidConfig(format!("schedule needs T ≥ 2, got {t}")));
        }
        if !(self.t0 > 0 && self.t0 <= t) {
            return Err(Error::InvalidConfig(format!("t0 = {} outside (0, {t}]", self.t0)));
        }
        if !(0 < self.t_min && self.t_min < self.t_max && self.t_max < t) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < t_min < t_max < T, got {} {} {t}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, t: u32) -> f32 {
        (t.min(self.steps) as f64 / self.steps as f64) as f32
    }

    /// `x_t = (1 − σ_t)·x + σ_t·ε`, elementwise.
    pub fn diffuse(&self, x: &[f32], t: u32, eps: &[f32]) -> Vec<f32> {
        let s = self.sigma(t);
        x.iter().zip(eps).map(|(&a, &e)| (1.0 - s) * a + s * e).collect()
    }
}
