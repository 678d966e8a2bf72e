use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Geometric,
}

/// Monotone decreasing signal level `α_t` on `t ∈ [0, 1]` with `α_0 = 1`.
///
/// Internally everything is expressed through `1 − α_t`, which keeps the
/// first-hitting update `1 − α_next = u^{1/n}(1 − α_τ)` accurate near `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// `α_t = 1 − t`.
    #[default]
    Linear,
    /// `α_t = exp(−(σ_min^{1−t} σ_max^t − σ_min))`; `α_1 = exp(σ_min − σ_max)`.
    Geometric { sigma_min: f64, sigma_max: f64 },
}

impl NoiseSchedule {
    pub fn geometric(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(Error::domain(format!(
                "geometric schedule needs 0 < sigma_min < sigma_max < inf, got ({sigma_min}, {sigma_max})"
            )));
        }
        Ok(NoiseSchedule::Geometric {
            sigma_min,
            sigma_max,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        match self {
            NoiseSchedule::Linear => ScheduleKind::Linear,
            NoiseSchedule::Geometric { .. } => ScheduleKind::Geometric,
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            NoiseSchedule::Linear => 1.0 - t,
            NoiseSchedule::Geometric {
                sigma_min,
                sigma_max,
            } => (-total_noise(t, sigma_min, sigma_max)).exp(),
        }
    }

    /// Inverse of [`alpha`](Self::alpha); the result is clamped to `[0, 1]`.
    pub fn alpha_inv(&self, a: f64) -> f64 {
        self.time_from_one_minus_alpha(1.0 - a)
    }

    /// `1 − α_t`, the masking probability at time `t`.
    pub fn one_minus_alpha(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            NoiseSchedule::Linear => t,
            NoiseSchedule::Geometric {
                sigma_min,
                sigma_max,
            } => -(-total_noise(t, sigma_min, sigma_max)).exp_m1(),
        }
    }

    /// Time at which `1 − α_t = c`, clamped to `[0, 1]`.
    pub fn time_from_one_minus_alpha(&self, c: f64) -> f64 {
        if c.is_nan() {
            return f64::NAN;
        }
        let c = c.clamp(0.0, 1.0);
        match *self {
            NoiseSchedule::Linear => c,
            NoiseSchedule::Geometric {
                sigma_min,
                sigma_max,
            } => {
                let sigma_bar = -(-c).ln_1p();
                let t = (sigma_bar / sigma_min).ln_1p() / (sigma_max / sigma_min).ln();
                t.clamp(0.0, 1.0)
            }
        }
    }

    /// Time whose γ-value is `gamma`; `gamma = +∞` maps to `t = 0`.
    pub fn time_from_gamma(&self, gamma: f64) -> f64 {
        self.time_from_one_minus_alpha((-gamma).exp())
    }
}

fn total_noise(t: f64, sigma_min: f64, sigma_max: f64) -> f64 {
    sigma_min.powf(1.0 - t) * sigma_max.powf(t) - sigma_min
}
