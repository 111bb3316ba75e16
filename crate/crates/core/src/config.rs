//! JSON run configuration: everything needed to reproduce a batch of chains.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{DenoiserError, DenoiserSpec};
use crate::sampler::{denoise_chains, inpaint_chains, ChainTrace, SamplerError};
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::signal::{Mask, Signal, SignalError};

pub const DEFAULT_RATIO: f64 = 0.982;
pub const DEFAULT_SIGMA_LAST: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 3.3e-6;
pub const DEFAULT_STEPS: usize = 5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("configuration JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Denoise,
    Inpaint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub ratio: f64,
    pub sigma_last: f64,
    pub epsilon: f64,
    pub steps_per_level: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_minus_k: Option<f64>,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_RATIO,
            sigma_last: DEFAULT_SIGMA_LAST,
            epsilon: DEFAULT_EPSILON,
            steps_per_level: DEFAULT_STEPS,
            sigma_minus_k: None,
        }
    }
}

/// A run: mode, noise level, schedule parameters, prior, seeding and, for
/// inpainting, the observed flat indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub sigma0: f64,
    #[serde(default)]
    pub schedule: ScheduleParams,
    pub denoiser: DenoiserSpec,
    pub seed: u64,
    pub chains: usize,
    #[serde(default)]
    pub trace_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the input signal.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "sigma0 must be a positive finite number, got {}",
                self.sigma0
            )));
        }
        if self.chains == 0 {
            return Err(ConfigError::Invalid("chains must be at least 1".into()));
        }
        self.denoiser.validate()?;
        match self.mode {
            Mode::Denoise if self.mask.is_some() => {
                return Err(ConfigError::Invalid(
                    "mask is only valid in inpaint mode".into(),
                ))
            }
            Mode::Inpaint if self.mask.is_none() => {
                return Err(ConfigError::Invalid("inpaint mode requires a mask".into()))
            }
            Mode::Inpaint if self.schedule.sigma_minus_k.is_none() => {
                return Err(ConfigError::Invalid(
                    "inpaint mode requires schedule.sigma_minus_k".into(),
                ))
            }
            _ => {}
        }
        self.resolve_schedule()?;
        Ok(())
    }

    /// Geometric schedule from `sigma0` to `sigma_last`, extended above
    /// `sigma0` when inpainting.
    pub fn resolve_schedule(&self) -> Result<NoiseSchedule, ConfigError> {
        let p = &self.schedule;
        let base = NoiseSchedule::geometric(
            self.sigma0,
            p.sigma_last,
            p.ratio,
            p.epsilon,
            p.steps_per_level,
        )?;
        match (self.mode, p.sigma_minus_k) {
            (Mode::Inpaint, Some(top)) => Ok(base.extend_for_inpainting(top)?),
            _ => Ok(base),
        }
    }

    pub fn resolve_mask(&self, len: usize) -> Result<Option<Mask>, ConfigError> {
        match &self.mask {
            Some(observed) => Ok(Some(Mask::new(observed.clone(), len)?)),
            None => Ok(None),
        }
    }

    /// Runs all chains on `y` (for inpainting, values off the mask are ignored).
    pub fn run(&self, y: &Signal) -> Result<Vec<ChainTrace>, ConfigError> {
        self.validate()?;
        self.denoiser.check_dimension(y.len())?;
        let schedule = self.resolve_schedule()?;
        let traces = match self.resolve_mask(y.len())? {
            None => denoise_chains(
                y,
                &schedule,
                &self.denoiser,
                self.seed,
                self.chains,
                self.trace_stride,
            )?,
            Some(mask) => inpaint_chains(
                y,
                &mask,
                &schedule,
                &self.denoiser,
                self.seed,
                self.chains,
                self.trace_stride,
            )?,
        };
        Ok(traces)
    }
}
