//! Posterior sampling for image denoising and noisy inpainting.
//!
//! A chain runs annealed Langevin dynamics on a geometric noise schedule,
//! using a denoiser to supply the prior score. Analytic Gaussian and
//! Gaussian-mixture priors come with exact posteriors for testing, and the
//! residual statistics check that `y − x̂` looks like the injected noise.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod denoiser;
pub mod oracle;
pub mod pnm;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod signal;
pub mod stats;

pub use config::{ConfigError, Mode, RunConfig, ScheduleParams};
pub use denoiser::{Denoiser, DenoiserError, DenoiserSpec, Param};
pub use oracle::{GaussianMixture, Moments, OracleError};
pub use pnm::{read_pnm, write_pnm, PnmError};
pub use rng::RandomStream;
pub use sampler::{ChainTrace, SamplerError, Snapshot};
pub use schedule::{NoiseSchedule, ScheduleError};
pub use signal::{Mask, MaskCoverage, Shape, Signal, SignalError};
pub use stats::{ResidualReport, StatsError, Thresholds};
