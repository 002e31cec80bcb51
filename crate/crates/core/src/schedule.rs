//! Diffusion noise schedules.
//!
//! Steps are numbered `1..=T`; step `t` carries `α_t`, the running product
//! `ᾱ_t = α_1 ⋯ α_t` and the reverse-step noise scale `σ_t = √(1 − α_t)`.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("a schedule needs at least one step")]
    NoSteps,
    #[error("cosine offset must be finite and non-negative, got {0}")]
    BadOffset(f64),
    #[error("alpha at step {step} is {value}, expected a value in (0, 1)")]
    BadAlpha { step: usize, value: f64 },
    #[error("step {step} outside 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },
}

pub const ALPHA_MIN: f64 = 0.001;
pub const ALPHA_MAX: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from per-step `α_t`, each strictly inside `(0, 1)`.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self, ScheduleError> {
        if alpha.is_empty() {
            return Err(ScheduleError::NoSteps);
        }
        if let Some((i, &value)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0 && **a < 1.0))
        {
            return Err(ScheduleError::BadAlpha { step: i + 1, value });
        }
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    fn slot(&self, t: usize) -> Result<usize, ScheduleError> {
        if t == 0 || t > self.steps() {
            return Err(ScheduleError::StepOutOfRange {
                step: t,
                steps: self.steps(),
            });
        }
        Ok(t - 1)
    }

    pub fn alpha(&self, t: usize) -> Result<f64, ScheduleError> {
        Ok(self.alpha[self.slot(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, ScheduleError> {
        Ok(self.alpha_bar[self.slot(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64, ScheduleError> {
        Ok(libm::sqrt(1.0 - self.alpha(t)?))
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// Cosine schedule: `ᾱ(t) ∝ cos²(((t/T + s)/(1 + s))·π/2)`, normalized to 1 at
/// `t = 0`. Per-step ratios are clipped to `[0.001, 0.9999]` and `ᾱ_t` is then
/// recomputed as their running product so the two stay consistent.
pub fn cosine_schedule(steps: usize, offset: f64) -> Result<NoiseSchedule, ScheduleError> {
    if steps == 0 {
        return Err(ScheduleError::NoSteps);
    }
    if !(offset.is_finite() && offset >= 0.0) {
        return Err(ScheduleError::BadOffset(offset));
    }
    let f = |t: usize| {
        let phase = ((t as f64 / steps as f64 + offset) / (1.0 + offset)) * FRAC_PI_2;
        let c = libm::cos(phase);
        c * c
    };
    let f0 = f(0);
    let alpha = (1..=steps)
        .map(|t| {
            let ratio = (f(t) / f0) / (f(t - 1) / f0);
            if ratio.is_nan() {
                ALPHA_MIN
            } else {
                ratio.clamp(ALPHA_MIN, ALPHA_MAX)
            }
        })
        .collect();
    NoiseSchedule::from_alphas(alpha)
}
