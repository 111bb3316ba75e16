//! Annealed Langevin posterior samplers for denoising and noisy inpainting.
//!
//! Both samplers repeat the transition
//!
//! ```text
//! x ← x + α_i Δ + √(2 α_i) z,   z ~ N(0, I),   α_i = ε σ_i² / σ_L²
//! ```
//!
//! `T` times per level, where `Δ` is the score of `p(x̃_i | y)`.
//!
//! Denoising starts at `x = y` and walks levels `1..=L`:
//!
//! ```text
//! Δ = s(x, σ_i) + (y − x) / (σ₀² − σ_i²)
//! ```
//!
//! Inpainting starts from `N(0, σ_{-K}² I)`. Above `σ₀` (levels `-K..=-1`)
//! observed coordinates are pulled toward `y` with weight
//! `1 / (σ_i² − σ₀²)` and ignore the prior score, since the cross term
//! `∇_{x^M} log p(x^R | x^M)` is taken to be zero. Unobserved coordinates
//! follow the prior score. Below `σ₀` (levels `1..=L`) observed coordinates
//! get the denoising score and unobserved ones the prior score. Level `0`,
//! where the likelihood variance vanishes, is never iterated. The noise `z`
//! is always drawn over every coordinate.
//!
//! A chain is aborted as soon as any coordinate is non-finite or exceeds
//! [`DIVERGENCE_LIMIT`] in magnitude.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{Denoiser, DenoiserError};
use crate::rng::RandomStream;
use crate::schedule::{NoiseSchedule, ScheduleError};
use crate::signal::{Mask, MaskCoverage, Signal, SignalError};

pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("denoising needs sigma0 at level 0 and at least one level below it (K = {above}, L = {below})")]
    DenoiseSchedule { above: usize, below: usize },
    #[error("inpainting needs at least one level above sigma0")]
    NoPhaseOneLevels,
    #[error("inpainting needs at least one level below sigma0")]
    NoPhaseTwoLevels,
    #[error("likelihood variance {denominator} is not positive at level {level} (sigma_i = {sigma}, sigma0 = {sigma0})")]
    MalformedSchedule {
        level: isize,
        sigma: f64,
        sigma0: f64,
        denominator: f64,
    },
    #[error("chain diverged at level {level}, step {step}: coordinate {index} = {value}")]
    Diverged {
        level: isize,
        step: usize,
        index: usize,
        value: f64,
    },
    #[error("mask covers {mask_len} values but the signal has {signal_len}")]
    MaskMismatch { mask_len: usize, signal_len: usize },
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl SamplerError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, SamplerError::Diverged { .. })
    }
}

/// An iterate recorded at global step `index` (1-based over all levels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub level: isize,
    pub step: usize,
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    #[serde(rename = "final")]
    pub final_signal: Signal,
    /// Set for inpainting runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_coverage: Option<MaskCoverage>,
}

/// Where a level sits relative to `σ₀`.
#[derive(Clone, Copy)]
enum Phase {
    Above,
    Below,
}

struct Chain<'a, D: ?Sized> {
    denoiser: &'a D,
    schedule: &'a NoiseSchedule,
    y: &'a [f64],
    observed: Option<&'a [bool]>,
    stride: usize,
    counter: usize,
    snapshots: Vec<Snapshot>,
    score: Vec<f64>,
    noise: Vec<f64>,
}

impl<D: Denoiser + ?Sized> Chain<'_, D> {
    fn run_level(
        &mut self,
        x: &mut [f64],
        level: isize,
        phase: Phase,
        stream: &mut RandomStream,
        shape: crate::signal::Shape,
    ) -> Result<(), SamplerError> {
        let sigma = self.schedule.sigma(level)?;
        let sigma0 = self.schedule.sigma0();
        let alpha = self.schedule.step_size(level)?;
        let denominator = match phase {
            Phase::Above => sigma * sigma - sigma0 * sigma0,
            Phase::Below => sigma0 * sigma0 - sigma * sigma,
        };
        if !(denominator > 0.0) {
            return Err(SamplerError::MalformedSchedule {
                level,
                sigma,
                sigma0,
                denominator,
            });
        }
        let pull = 1.0 / denominator;
        let kick = (2.0 * alpha).sqrt();
        for step in 1..=self.schedule.steps_per_level() {
            stream.fill_normal(&mut self.noise);
            self.denoiser.prior_score_into(x, sigma, &mut self.score)?;
            for j in 0..x.len() {
                let observed = self.observed.is_none_or(|m| m[j]);
                let delta = match (phase, observed) {
                    (Phase::Below, true) => self.score[j] + (self.y[j] - x[j]) * pull,
                    (Phase::Above, true) => (self.y[j] - x[j]) * pull,
                    (_, false) => self.score[j],
                };
                x[j] += alpha * delta + kick * self.noise[j];
            }
            if let Some((index, &value)) = x
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.abs() <= DIVERGENCE_LIMIT))
            {
                return Err(SamplerError::Diverged {
                    level,
                    step,
                    index,
                    value,
                });
            }
            self.counter += 1;
            if self.stride > 0 && self.counter.is_multiple_of(self.stride) {
                self.snapshots.push(Snapshot {
                    level,
                    step,
                    signal: Signal::new(x.to_vec(), shape)?,
                });
            }
        }
        Ok(())
    }
}

/// Stochastic denoiser: one posterior sample for the noisy signal `y`.
///
/// `trace_stride = 0` records only the final iterate; otherwise every
/// `trace_stride`-th inner step is kept.
pub fn denoise_sample<D: Denoiser + ?Sized>(
    y: &Signal,
    schedule: &NoiseSchedule,
    denoiser: &D,
    stream: &mut RandomStream,
    trace_stride: usize,
) -> Result<ChainTrace, SamplerError> {
    if schedule.sigma0_index() != 0 || schedule.levels_below() == 0 {
        return Err(SamplerError::DenoiseSchedule {
            above: schedule.levels_above(),
            below: schedule.levels_below(),
        });
    }
    let n = y.len();
    let mut chain = Chain {
        denoiser,
        schedule,
        y: y.values(),
        observed: None,
        stride: trace_stride,
        counter: 0,
        snapshots: Vec::new(),
        score: vec![0.0; n],
        noise: vec![0.0; n],
    };
    let mut x = y.values().to_vec();
    for level in 1..=schedule.levels_below() as isize {
        chain.run_level(&mut x, level, Phase::Below, stream, y.shape())?;
    }
    Ok(ChainTrace {
        seed: stream.seed(),
        snapshots: chain.snapshots,
        final_signal: Signal::new(x, y.shape())?,
        mask_coverage: None,
    })
}

/// Noisy inpainting: one posterior sample given `y` on the observed set.
/// Values of `y_masked` outside the mask are ignored.
pub fn inpaint_sample<D: Denoiser + ?Sized>(
    y_masked: &Signal,
    mask: &Mask,
    schedule: &NoiseSchedule,
    denoiser: &D,
    stream: &mut RandomStream,
    trace_stride: usize,
) -> Result<ChainTrace, SamplerError> {
    if mask.total_len() != y_masked.len() {
        return Err(SamplerError::MaskMismatch {
            mask_len: mask.total_len(),
            signal_len: y_masked.len(),
        });
    }
    if schedule.levels_above() == 0 {
        return Err(SamplerError::NoPhaseOneLevels);
    }
    if schedule.levels_below() == 0 {
        return Err(SamplerError::NoPhaseTwoLevels);
    }
    let n = y_masked.len();
    let shape = y_masked.shape();
    let top = -(schedule.levels_above() as isize);
    let sigma_top = schedule.sigma(top)?;
    let mut x: Vec<f64> = (0..n).map(|_| sigma_top * stream.next_normal()).collect();
    let mut chain = Chain {
        denoiser,
        schedule,
        y: y_masked.values(),
        observed: Some(mask.flags()),
        stride: trace_stride,
        counter: 0,
        snapshots: Vec::new(),
        score: vec![0.0; n],
        noise: vec![0.0; n],
    };
    for level in top..0 {
        chain.run_level(&mut x, level, Phase::Above, stream, shape)?;
    }
    for level in 1..=schedule.levels_below() as isize {
        chain.run_level(&mut x, level, Phase::Below, stream, shape)?;
    }
    Ok(ChainTrace {
        seed: stream.seed(),
        snapshots: chain.snapshots,
        final_signal: Signal::new(x, shape)?,
        mask_coverage: Some(mask.coverage()),
    })
}

/// Runs `chains` independent denoising chains in parallel. Chain `c` uses
/// seed `base_seed + c`; the result order is the chain order.
pub fn denoise_chains<D: Denoiser + ?Sized>(
    y: &Signal,
    schedule: &NoiseSchedule,
    denoiser: &D,
    base_seed: u64,
    chains: usize,
    trace_stride: usize,
) -> Result<Vec<ChainTrace>, SamplerError> {
    (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut stream = RandomStream::for_chain(base_seed, c);
            denoise_sample(y, schedule, denoiser, &mut stream, trace_stride)
        })
        .collect()
}

/// Parallel counterpart of [`inpaint_sample`], seeded like [`denoise_chains`].
pub fn inpaint_chains<D: Denoiser + ?Sized>(
    y_masked: &Signal,
    mask: &Mask,
    schedule: &NoiseSchedule,
    denoiser: &D,
    base_seed: u64,
    chains: usize,
    trace_stride: usize,
) -> Result<Vec<ChainTrace>, SamplerError> {
    (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut stream = RandomStream::for_chain(base_seed, c);
            inpaint_sample(
                y_masked,
                mask,
                schedule,
                denoiser,
                &mut stream,
                trace_stride,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserSpec, Param};
    use crate::signal::Shape;

    fn conjugate_schedule(sigma0: f64, steps: usize) -> NoiseSchedule {
        NoiseSchedule::geometric(sigma0, 0.01, 0.982, 3.3e-6, steps).unwrap()
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn vanishing_step_size_only_perturbs() {
        let y = Signal::from_vector(vec![0.6, 0.8]).unwrap();
        let schedule = NoiseSchedule::new(vec![0.5, 0.25], 0, 1e-12, 1).unwrap();
        let spec = DenoiserSpec::gaussian(0.0, 1.0).unwrap();
        let trace = denoise_sample(&y, &schedule, &spec, &mut RandomStream::new(1), 0).unwrap();
        let dist: f64 = trace
            .final_signal
            .values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist <= 1e-4, "{dist}");
    }

    #[test]
    fn same_seed_bit_identical() {
        let shape = Shape::new(16, 16, 1);
        let means = vec![
            Param::Vector((0..256).map(|i| (i % 16) as f64 / 15.0).collect()),
            Param::Vector((0..256).map(|i| (i / 16) as f64 / 15.0).collect()),
        ];
        let spec = DenoiserSpec::gmm(vec![0.4, 0.6], means, vec![0.01, 0.02]).unwrap();
        let mut noise = RandomStream::with_stream(3, 1);
        let y = Signal::new(
            (0..256)
                .map(|i| (i % 16) as f64 / 15.0 + 0.406 * noise.next_normal())
                .collect(),
            shape,
        )
        .unwrap();
        let schedule = conjugate_schedule(0.406, 1);
        let a = denoise_sample(&y, &schedule, &spec, &mut RandomStream::new(9), 7).unwrap();
        let b = denoise_sample(&y, &schedule, &spec, &mut RandomStream::new(9), 7).unwrap();
        assert_eq!(a, b);
        assert!(!a.snapshots.is_empty());
        let c = denoise_sample(&y, &schedule, &spec, &mut RandomStream::new(10), 0).unwrap();
        assert_ne!(a.final_signal, c.final_signal);
        assert!(c.snapshots.is_empty());
    }

    #[test]
    fn trace_final_equals_last_snapshot_when_recorded() {
        let y = Signal::from_vector(vec![0.1]).unwrap();
        let schedule = NoiseSchedule::new(vec![0.5, 0.4, 0.3], 0, 1e-4, 2).unwrap();
        let spec = DenoiserSpec::gaussian(0.0, 1.0).unwrap();
        // 2 levels × 2 steps = 4 steps; stride 2 records steps 2 and 4
        let t = denoise_sample(&y, &schedule, &spec, &mut RandomStream::new(4), 2).unwrap();
        assert_eq!(t.snapshots.len(), 2);
        assert_eq!(t.snapshots[1].signal, t.final_signal);
        assert_eq!((t.snapshots[0].level, t.snapshots[0].step), (1, 2));
        assert_eq!((t.snapshots[1].level, t.snapshots[1].step), (2, 2));
    }

    #[test]
    fn schedule_preconditions() {
        let y = Signal::from_vector(vec![0.1]).unwrap();
        let spec = DenoiserSpec::gaussian(0.0, 1.0).unwrap();
        let single = NoiseSchedule::new(vec![0.5], 0, 1e-4, 1).unwrap();
        assert!(matches!(
            denoise_sample(&y, &single, &spec, &mut RandomStream::new(0), 0),
            Err(SamplerError::DenoiseSchedule { .. })
        ));
        let base = NoiseSchedule::new(vec![0.5, 0.4], 0, 1e-4, 1).unwrap();
        let extended = base.extend_for_inpainting(0.6).unwrap();
        assert!(matches!(
            denoise_sample(&y, &extended, &spec, &mut RandomStream::new(0), 0),
            Err(SamplerError::DenoiseSchedule { above: 1, .. })
        ));
        let mask = Mask::all(1).unwrap();
        assert_eq!(
            inpaint_sample(&y, &mask, &base, &spec, &mut RandomStream::new(0), 0),
            Err(SamplerError::NoPhaseOneLevels)
        );
        let wrong = Mask::all(2).unwrap();
        assert!(matches!(
            inpaint_sample(&y, &wrong, &extended, &spec, &mut RandomStream::new(0), 0),
            Err(SamplerError::MaskMismatch { .. })
        ));
    }

    #[test]
    fn oversized_step_diverges_loudly() {
        let y = Signal::from_vector(vec![0.5]).unwrap();
        let schedule = NoiseSchedule::geometric(0.5, 0.01, 0.982, 100.0, 5).unwrap();
        let spec = DenoiserSpec::gaussian(0.0, 1.0).unwrap();
        let err = denoise_sample(&y, &schedule, &spec, &mut RandomStream::new(0), 0).unwrap_err();
        assert!(err.is_divergence(), "{err}");
    }

    #[test]
    fn mask_coverage_recorded() {
        let y = Signal::from_vector(vec![0.1, 0.2]).unwrap();
        let schedule = NoiseSchedule::new(vec![0.5, 0.4], 0, 1e-4, 1)
            .unwrap()
            .extend_for_inpainting(1.0)
            .unwrap();
        let spec = DenoiserSpec::gaussian(0.0, 1.0).unwrap();
        for (mask, coverage) in [
            (Mask::none(2).unwrap(), MaskCoverage::NoObservations),
            (Mask::all(2).unwrap(), MaskCoverage::Full),
            (Mask::new(vec![1], 2).unwrap(), MaskCoverage::Partial),
        ] {
            let t =
                inpaint_sample(&y, &mask, &schedule, &spec, &mut RandomStream::new(2), 0).unwrap();
            assert_eq!(t.mask_coverage, Some(coverage));
        }
    }

    #[test]
    fn chain_harness_is_order_independent() {
        let y = Signal::from_vector(vec![0.5]).unwrap();
        let schedule = conjugate_schedule(0.5, 2);
        let spec = DenoiserSpec::gaussian(0.0, 1.0).unwrap();
        let all = denoise_chains(&y, &schedule, &spec, 100, 8, 0).unwrap();
        for (c, trace) in all.iter().enumerate() {
            let solo = denoise_sample(
                &y,
                &schedule,
                &spec,
                &mut RandomStream::new(100 + c as u64),
                0,
            )
            .unwrap();
            assert_eq!(&solo, trace);
        }
    }

    #[test]
    fn conjugate_gaussian_posterior_moments() {
        // prior N(0, 1), y = 0.5, σ₀ = 0.5: posterior N(0.4, 0.2)
        let y = Signal::from_vector(vec![0.5]).unwrap();
        let schedule = conjugate_schedule(0.5, 50);
        let spec = DenoiserSpec::gaussian(0.0, 1.0).unwrap();
        let traces = denoise_chains(&y, &schedule, &spec, 0, 2000, 0).unwrap();
        let xs: Vec<f64> = traces.iter().map(|t| t.final_signal.values()[0]).collect();
        let (mean, var) = moments(&xs);
        let se = (0.2f64 / 2000.0).sqrt();
        assert!((mean - 0.4).abs() < 3.0 * se, "mean {mean}");
        assert!((var - 0.2).abs() < 0.05 * 0.2, "var {var}");
    }
}
