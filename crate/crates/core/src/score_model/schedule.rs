use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Variance-exploding schedule `σ(t) = σ_min · (σ_max/σ_min)^t`, in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Nominal number of discrete diffusion steps; `t` itself is continuous.
    pub total_steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { sigma_min: 2.0, sigma_max: 800.0, total_steps: 1000 }
    }
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, total_steps: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) || total_steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "need 0 < sigma_min < sigma_max and steps > 0, got {sigma_min}, {sigma_max}, {total_steps}"
            )));
        }
        Ok(NoiseSchedule { sigma_min, sigma_max, total_steps })
    }

    pub fn sigma<S: Real>(&self, t: S) -> S {
        lit::<S>(self.sigma_min) * lit::<S>(self.sigma_max / self.sigma_min).powf(t)
    }

    /// Inverse of [`sigma`](Self::sigma).
    pub fn level_for_sigma(&self, sigma: f64) -> f64 {
        (sigma / self.sigma_min).ln() / (self.sigma_max / self.sigma_min).ln()
    }
}
