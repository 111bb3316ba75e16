//! Geometric noise-level schedules.
//!
//! Levels are indexed the way the samplers iterate them: level `0` is the
//! observation noise `σ₀`, levels `1..=L` descend below it, and levels
//! `-K..=-1` (inpainting only) sit above it. Internally the sequence is one
//! strictly decreasing vector with `σ₀` at position `sigma0_index == K`.
//! The terminal zero level is never stored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("geometric ratio must lie in (0, 1), got {0}")]
    RatioOutOfRange(f64),
    #[error("sigma_start ({start}) must be >= sigma_last ({last}) > 0")]
    SigmaOrdering { start: f64, last: f64 },
    #[error("noise levels must be positive and finite, got {value} at position {position}")]
    InvalidSigma { position: usize, value: f64 },
    #[error("noise levels must strictly decrease: sigma[{position}] = {current} <= sigma[{next_position}] = {next}", next_position = position + 1)]
    NotDecreasing {
        position: usize,
        current: f64,
        next: f64,
    },
    #[error("empty noise schedule")]
    Empty,
    #[error("sigma0_index {index} out of range for {len} levels")]
    Sigma0IndexOutOfRange { index: usize, len: usize },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("steps_per_level must be at least 1")]
    ZeroSteps,
    #[error("sigma_minus_k ({sigma_minus_k}) must exceed sigma0 ({sigma0})")]
    ExtensionBelowSigma0 { sigma_minus_k: f64, sigma0: f64 },
    #[error("schedule already has {0} levels above sigma0")]
    AlreadyExtended(usize),
    #[error("cannot infer a geometric ratio from a single-level schedule")]
    RatioUnknown,
    #[error("level {level} outside schedule range {min}..={max}")]
    LevelOutOfRange {
        level: isize,
        min: isize,
        max: isize,
    },
    #[error("declared sigma0 {declared} does not match schedule sigma0 {actual}")]
    Sigma0Mismatch { declared: f64, actual: f64 },
}

/// Strictly decreasing noise levels with the step-size scale `ε` and the
/// per-level inner step count `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    sigma0_index: usize,
    epsilon: f64,
    steps_per_level: usize,
}

impl NoiseSchedule {
    pub fn new(
        sigmas: Vec<f64>,
        sigma0_index: usize,
        epsilon: f64,
        steps_per_level: usize,
    ) -> Result<Self, ScheduleError> {
        if sigmas.is_empty() {
            return Err(ScheduleError::Empty);
        }
        for (position, &value) in sigmas.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScheduleError::InvalidSigma { position, value });
            }
        }
        if let Some(position) = sigmas.windows(2).position(|w| w[0] <= w[1]) {
            return Err(ScheduleError::NotDecreasing {
                position,
                current: sigmas[position],
                next: sigmas[position + 1],
            });
        }
        if sigma0_index >= sigmas.len() {
            return Err(ScheduleError::Sigma0IndexOutOfRange {
                index: sigma0_index,
                len: sigmas.len(),
            });
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(ScheduleError::InvalidEpsilon(epsilon));
        }
        if steps_per_level == 0 {
            return Err(ScheduleError::ZeroSteps);
        }
        Ok(Self {
            sigmas,
            sigma0_index,
            epsilon,
            steps_per_level,
        })
    }

    /// `σ_i = sigma_start · ratio^i` for `i = 0..=L`, with
    /// `L = round(ln(sigma_last / sigma_start) / ln(ratio))`.
    pub fn geometric(
        sigma_start: f64,
        sigma_last: f64,
        ratio: f64,
        epsilon: f64,
        steps_per_level: usize,
    ) -> Result<Self, ScheduleError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(ScheduleError::RatioOutOfRange(ratio));
        }
        if !(sigma_last > 0.0 && sigma_start >= sigma_last && sigma_start.is_finite()) {
            return Err(ScheduleError::SigmaOrdering {
                start: sigma_start,
                last: sigma_last,
            });
        }
        let last_level = geometric_level_count(sigma_start, sigma_last, ratio);
        let sigmas = (0..=last_level)
            .map(|i| sigma_start * ratio.powi(i as i32))
            .collect();
        Self::new(sigmas, 0, epsilon, steps_per_level)
    }

    /// Prepends `σ₀/ratio, σ₀/ratio², …` until the first level that reaches
    /// `sigma_minus_k`. The ratio is read off the existing levels.
    pub fn extend_for_inpainting(&self, sigma_minus_k: f64) -> Result<Self, ScheduleError> {
        if self.sigma0_index != 0 {
            return Err(ScheduleError::AlreadyExtended(self.sigma0_index));
        }
        let sigma0 = self.sigma0();
        if !(sigma_minus_k > sigma0) {
            return Err(ScheduleError::ExtensionBelowSigma0 {
                sigma_minus_k,
                sigma0,
            });
        }
        let ratio = self.ratio().ok_or(ScheduleError::RatioUnknown)?;
        let k = extension_level_count(sigma0, sigma_minus_k, ratio);
        let mut sigmas: Vec<f64> = (1..=k)
            .rev()
            .map(|j| sigma0 / ratio.powi(j as i32))
            .collect();
        sigmas.extend_from_slice(&self.sigmas);
        Self::new(sigmas, k, self.epsilon, self.steps_per_level)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma0_index(&self) -> usize {
        self.sigma0_index
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn steps_per_level(&self) -> usize {
        self.steps_per_level
    }

    pub fn sigma0(&self) -> f64 {
        self.sigmas[self.sigma0_index]
    }

    /// Smallest level `σ_L`.
    pub fn sigma_last(&self) -> f64 {
        *self.sigmas.last().expect("schedule is non-empty")
    }

    /// Number of levels above `σ₀` (`K`).
    pub fn levels_above(&self) -> usize {
        self.sigma0_index
    }

    /// Number of levels below `σ₀` (`L`).
    pub fn levels_below(&self) -> usize {
        self.sigmas.len() - 1 - self.sigma0_index
    }

    /// `L + K`, the count of iterated levels.
    pub fn iterated_levels(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// Ratio between consecutive levels, if there are at least two.
    pub fn ratio(&self) -> Option<f64> {
        match self.sigmas.as_slice() {
            [a, b, ..] => Some(b / a),
            _ => None,
        }
    }

    /// Fails unless `declared` agrees with `σ₀` to 1e-9 relative.
    pub fn check_sigma0(&self, declared: f64) -> Result<(), ScheduleError> {
        let actual = self.sigma0();
        if (declared - actual).abs() > 1e-9 * actual {
            return Err(ScheduleError::Sigma0Mismatch { declared, actual });
        }
        Ok(())
    }

    /// `σ_i` for signed level `i` in `-K..=L`.
    pub fn sigma(&self, level: isize) -> Result<f64, ScheduleError> {
        Ok(self.sigmas[self.position(level)?])
    }

    /// Step size `α_i = ε σ_i² / σ_L²`.
    pub fn step_size(&self, level: isize) -> Result<f64, ScheduleError> {
        let sigma = self.sigma(level)?;
        let last = self.sigma_last();
        Ok(self.epsilon * (sigma * sigma) / (last * last))
    }

    fn position(&self, level: isize) -> Result<usize, ScheduleError> {
        let min = -(self.sigma0_index as isize);
        let max = self.levels_below() as isize;
        if level < min || level > max {
            return Err(ScheduleError::LevelOutOfRange { level, min, max });
        }
        Ok((level - min) as usize)
    }
}

impl<'de> Deserialize<'de> for NoiseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            sigmas: Vec<f64>,
            sigma0_index: usize,
            epsilon: f64,
            steps_per_level: usize,
        }
        let raw = Raw::deserialize(deserializer)?;
        NoiseSchedule::new(
            raw.sigmas,
            raw.sigma0_index,
            raw.epsilon,
            raw.steps_per_level,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// `L = round(ln(last / start) / ln(ratio))`.
pub fn geometric_level_count(sigma_start: f64, sigma_last: f64, ratio: f64) -> usize {
    let quotient = (sigma_last / sigma_start).ln() / ratio.ln();
    quotient.round().max(0.0) as usize
}

/// Smallest `K` with `σ₀ / ratio^K >= sigma_minus_k`, with a 1e-12 relative
/// allowance so an exact power of the ratio is not pushed one level further
/// by rounding.
pub fn extension_level_count(sigma0: f64, sigma_minus_k: f64, ratio: f64) -> usize {
    let target = sigma_minus_k * (1.0 - 1e-12);
    let mut k = 0usize;
    while sigma0 / ratio.powi(k as i32) < target {
        k += 1;
    }
    k
}
