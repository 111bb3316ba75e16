//! Exact posteriors for the analytic priors.
//!
//! With `y = x + N(0, σ₀² I)` and an isotropic Gaussian-mixture prior, the
//! posterior is again a mixture: component `k` keeps its shape and is
//! reweighted by how well it explains `y`,
//!
//! ```text
//! w_k   ∝ π_k N(y; μ_k, (σ_k² + σ₀²) I)
//! m_k   = μ_k + σ_k² / (σ_k² + σ₀²) (y − μ_k)
//! v_k   = σ_k² σ₀² / (σ_k² + σ₀²)
//! ```
//!
//! These are the reference values the Langevin chains are checked against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::DenoiserSpec;
use crate::rng::RandomStream;
use crate::signal::{Shape, Signal, SignalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("mixture expects {expected} dimensions, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid mixture: {0}")]
    Invalid(String),
    #[error("observation noise must be positive, got {0}")]
    InvalidSigma(f64),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Mixture of isotropic Gaussians with explicit (non-broadcast) means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

/// Per-coordinate posterior mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianMixture {
    /// Weights must be positive and sum to 1 within 1e-12. Variances may be
    /// zero (point masses) but not negative.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
    ) -> Result<Self, OracleError> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(OracleError::Invalid(format!(
                "{k} weights, {} means, {} variances",
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(OracleError::Invalid(
                "component means differ in length".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(OracleError::Invalid("weights must be positive".into()));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(OracleError::Invalid("weights must sum to 1".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(OracleError::Invalid(
                "variances must be non-negative".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// The prior of a denoiser spec, with scalar means broadcast to `dim`.
    pub fn from_spec(spec: &DenoiserSpec, dim: usize) -> Result<Self, OracleError> {
        spec.validate()
            .map_err(|e| OracleError::Invalid(e.to_string()))?;
        if let Some(expected) = spec.dimension() {
            if expected != dim {
                return Err(OracleError::DimensionMismatch {
                    expected,
                    actual: dim,
                });
            }
        }
        match spec {
            DenoiserSpec::GaussianPrior { mean, variance } => {
                Self::new(vec![1.0], vec![mean.expand(dim)], vec![*variance])
            }
            DenoiserSpec::GmmPrior {
                weights,
                means,
                variances,
            } => Self::new(
                weights.clone(),
                means.iter().map(|m| m.expand(dim)).collect(),
                variances.clone(),
            ),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Closed-form posterior given `y` observed with noise std `sigma0`.
    pub fn exact_posterior(&self, y: &[f64], sigma0: f64) -> Result<Self, OracleError> {
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(OracleError::InvalidSigma(sigma0));
        }
        if y.len() != self.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: self.dim(),
                actual: y.len(),
            });
        }
        let noise = sigma0 * sigma0;
        let d = y.len() as f64;
        let mut log_w: Vec<f64> = Vec::with_capacity(self.components());
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(self.components());
        let mut variances = Vec::with_capacity(self.components());
        for ((&pi, mu), &var) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            let s2 = var + noise;
            let sq: f64 = y.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
            log_w.push(pi.ln() - 0.5 * sq / s2 - 0.5 * d * s2.ln());
            let gain = var / s2;
            means.push(
                y.iter()
                    .zip(mu)
                    .map(|(yj, mj)| mj + gain * (yj - mj))
                    .collect(),
            );
            variances.push(var * noise / s2);
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        let weights: Vec<f64> = unnorm.iter().map(|w| w / total).collect();
        // components whose weight underflows carry no mass and are dropped
        let keep: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
        let kept_total: f64 = keep.iter().map(|&k| weights[k]).sum();
        Ok(Self {
            weights: keep.iter().map(|&k| weights[k] / kept_total).collect(),
            means: keep.iter().map(|&k| means[k].clone()).collect(),
            variances: keep.iter().map(|&k| variances[k]).collect(),
        })
    }

    /// Mean `Σ w_k μ_k` and per-coordinate variance by the law of total
    /// variance.
    pub fn moments(&self) -> Moments {
        let dim = self.dim();
        let mut mean = vec![0.0; dim];
        let mut second = vec![0.0; dim];
        for ((w, mu), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for j in 0..dim {
                mean[j] += w * mu[j];
                second[j] += w * (v + mu[j] * mu[j]);
            }
        }
        let variance = second
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s - m * m).max(0.0))
            .collect();
        Moments { mean, variance }
    }

    /// Draws one exact sample: component, then Gaussian around its mean.
    pub fn sample_into(&self, stream: &mut RandomStream, out: &mut [f64]) {
        let k = stream.next_categorical(&self.weights);
        let sd = self.variances[k].sqrt();
        for (o, m) in out.iter_mut().zip(&self.means[k]) {
            *o = m + sd * stream.next_normal();
        }
    }

    /// `n` exact i.i.d. samples laid out with `shape`.
    pub fn sample_signals(
        &self,
        stream: &mut RandomStream,
        n: usize,
        shape: Shape,
    ) -> Result<Vec<Signal>, OracleError> {
        if shape.len() != self.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: self.dim(),
                actual: shape.len(),
            });
        }
        (0..n)
            .map(|_| {
                let mut v = vec![0.0; self.dim()];
                self.sample_into(stream, &mut v);
                Ok(Signal::new(v, shape)?)
            })
            .collect()
    }
}

/// Posterior of `prior` given the noisy signal `y`.
pub fn exact_posterior(
    prior: &GaussianMixture,
    y: &Signal,
    sigma0: f64,
) -> Result<GaussianMixture, OracleError> {
    prior.exact_posterior(y.values(), sigma0)
}

pub fn posterior_moments(post: &GaussianMixture) -> Moments {
    post.moments()
}

/// `n` exact posterior samples as `1 × d × 1` signals.
pub fn direct_posterior_sample(
    post: &GaussianMixture,
    stream: &mut RandomStream,
    n: usize,
) -> Result<Vec<Signal>, OracleError> {
    post.sample_signals(stream, n, Shape::vector(post.dim()))
}
