//! MMSE denoisers and the score they induce.
//!
//! Any estimator of `E[x | x̃]` under `x̃ = x + N(0, σ² I)` defines the score
//! of the noisy marginal through Tweedie's identity
//!
//! ```text
//! ∇ log p_σ(x̃) = (x̂(x̃, σ) − x̃) / σ²
//! ```
//!
//! The samplers only ever see the [`Denoiser`] trait, so a learned denoiser
//! can replace the analytic priors in [`DenoiserSpec`] without touching them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Signal, SignalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiserError {
    #[error("denoiser expects {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("noise level must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("invalid denoiser spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// An estimator of the clean signal given a noisy one at level `sigma`.
pub trait Denoiser: Send + Sync {
    /// Writes `E[x | x̃ = x_tilde]` into `out` (same length as `x_tilde`).
    fn denoise_into(
        &self,
        x_tilde: &[f64],
        sigma: f64,
        out: &mut [f64],
    ) -> Result<(), DenoiserError>;

    /// Writes the prior score `(x̂ − x̃)/σ²` into `out`.
    fn prior_score_into(
        &self,
        x_tilde: &[f64],
        sigma: f64,
        out: &mut [f64],
    ) -> Result<(), DenoiserError> {
        self.denoise_into(x_tilde, sigma, out)?;
        let inv = 1.0 / (sigma * sigma);
        for (o, x) in out.iter_mut().zip(x_tilde) {
            *o = (*o - x) * inv;
        }
        Ok(())
    }
}

/// A per-coordinate parameter given either as one broadcast scalar or as a
/// full vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Param {
    #[inline]
    pub fn at(&self, index: usize) -> f64 {
        match self {
            Param::Scalar(v) => *v,
            Param::Vector(v) => v[index],
        }
    }

    /// Length constraint, `None` for a broadcast scalar.
    pub fn fixed_len(&self) -> Option<usize> {
        match self {
            Param::Scalar(_) => None,
            Param::Vector(v) => Some(v.len()),
        }
    }

    pub fn expand(&self, len: usize) -> Vec<f64> {
        (0..len).map(|i| self.at(i)).collect()
    }

    fn all_finite(&self) -> bool {
        match self {
            Param::Scalar(v) => v.is_finite(),
            Param::Vector(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Scalar(v)
    }
}

impl From<Vec<f64>> for Param {
    fn from(v: Vec<f64>) -> Self {
        Param::Vector(v)
    }
}

/// Analytic priors with exact posterior-mean denoisers.
///
/// Covariances are isotropic: `σ_p² I` for the Gaussian prior and
/// `σ_k² I` per mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserSpec {
    GaussianPrior {
        mean: Param,
        variance: f64,
    },
    GmmPrior {
        weights: Vec<f64>,
        means: Vec<Param>,
        variances: Vec<f64>,
    },
}

impl DenoiserSpec {
    pub fn gaussian(mean: impl Into<Param>, variance: f64) -> Result<Self, DenoiserError> {
        let spec = DenoiserSpec::GaussianPrior {
            mean: mean.into(),
            variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gmm(
        weights: Vec<f64>,
        means: Vec<Param>,
        variances: Vec<f64>,
    ) -> Result<Self, DenoiserError> {
        let spec = DenoiserSpec::GmmPrior {
            weights,
            means,
            variances,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks weights (positive, summing to 1 within 1e-12), variances and
    /// mean lengths.
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let invalid = |msg: String| Err(DenoiserError::InvalidSpec(msg));
        match self {
            DenoiserSpec::GaussianPrior { mean, variance } => {
                if !(variance.is_finite() && *variance > 0.0) {
                    return invalid(format!("prior variance must be positive, got {variance}"));
                }
                if !mean.all_finite() {
                    return invalid("prior mean must be finite".into());
                }
                if mean.fixed_len() == Some(0) {
                    return invalid("prior mean vector is empty".into());
                }
            }
            DenoiserSpec::GmmPrior {
                weights,
                means,
                variances,
            } => {
                let k = weights.len();
                if k == 0 {
                    return invalid("mixture needs at least one component".into());
                }
                if means.len() != k || variances.len() != k {
                    return invalid(format!(
                        "component count mismatch: {k} weights, {} means, {} variances",
                        means.len(),
                        variances.len()
                    ));
                }
                if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
                    return invalid(format!("weights must be positive, got {w}"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return invalid(format!("weights sum to {total}, not 1"));
                }
                if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return invalid(format!("component variances must be positive, got {v}"));
                }
                if means.iter().any(|m| !m.all_finite()) {
                    return invalid("component means must be finite".into());
                }
                let lens: Vec<usize> = means.iter().filter_map(Param::fixed_len).collect();
                if lens.iter().any(|&l| l != lens[0] || l == 0) {
                    return invalid("component mean vectors differ in length".into());
                }
            }
        }
        Ok(())
    }

    /// Required signal length, or `None` when every parameter broadcasts.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            DenoiserSpec::GaussianPrior { mean, .. } => mean.fixed_len(),
            DenoiserSpec::GmmPrior { means, .. } => means.iter().find_map(Param::fixed_len),
        }
    }

    pub fn check_dimension(&self, len: usize) -> Result<(), DenoiserError> {
        match self.dimension() {
            Some(expected) if expected != len => Err(DenoiserError::DimensionMismatch {
                expected,
                actual: len,
            }),
            _ => Ok(()),
        }
    }

    /// Exact posterior mean `E[x | x̃]` for noise std `sigma`.
    pub fn denoise(&self, x_tilde: &Signal, sigma: f64) -> Result<Signal, DenoiserError> {
        let mut out = vec![0.0; x_tilde.len()];
        self.denoise_into(x_tilde.values(), sigma, &mut out)?;
        Ok(Signal::new(out, x_tilde.shape())?)
    }

    /// `∇ log p_σ(x̃)` via the denoiser.
    pub fn prior_score(&self, x_tilde: &Signal, sigma: f64) -> Result<Signal, DenoiserError> {
        let mut out = vec![0.0; x_tilde.len()];
        self.prior_score_into(x_tilde.values(), sigma, &mut out)?;
        Ok(Signal::new(out, x_tilde.shape())?)
    }

    /// Mixture responsibilities `w_k(x̃) ∝ π_k N(x̃; μ_k, (σ_k² + σ²) I)`.
    /// A Gaussian prior has the single responsibility `[1]`.
    pub fn responsibilities(&self, x_tilde: &[f64], sigma: f64) -> Result<Vec<f64>, DenoiserError> {
        check_sigma(sigma)?;
        self.check_dimension(x_tilde.len())?;
        Ok(match self {
            DenoiserSpec::GaussianPrior { .. } => vec![1.0],
            DenoiserSpec::GmmPrior {
                weights,
                means,
                variances,
            } => mixture_responsibilities(x_tilde, sigma * sigma, weights, means, variances),
        })
    }
}

fn check_sigma(sigma: f64) -> Result<(), DenoiserError> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(DenoiserError::InvalidSigma(sigma))
    }
}

/// Log-domain responsibilities with max subtraction; the shared
/// `-(d/2) ln 2π` term cancels and is omitted.
fn mixture_responsibilities(
    x: &[f64],
    noise_var: f64,
    weights: &[f64],
    means: &[Param],
    variances: &[f64],
) -> Vec<f64> {
    let d = x.len() as f64;
    let mut log_w: Vec<f64> = weights
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((&pi, mean), &var)| {
            let s2 = var + noise_var;
            let sq: f64 = x
                .iter()
                .enumerate()
                .map(|(j, &xj)| {
                    let r = xj - mean.at(j);
                    r * r
                })
                .sum();
            pi.ln() - 0.5 * sq / s2 - 0.5 * d * s2.ln()
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for lw in &mut log_w {
        *lw = (*lw - max).exp();
        total += *lw;
    }
    for lw in &mut log_w {
        *lw /= total;
    }
    log_w
}

impl Denoiser for DenoiserSpec {
    fn denoise_into(
        &self,
        x_tilde: &[f64],
        sigma: f64,
        out: &mut [f64],
    ) -> Result<(), DenoiserError> {
        check_sigma(sigma)?;
        self.check_dimension(x_tilde.len())?;
        if out.len() != x_tilde.len() {
            return Err(DenoiserError::DimensionMismatch {
                expected: x_tilde.len(),
                actual: out.len(),
            });
        }
        let noise_var = sigma * sigma;
        match self {
            DenoiserSpec::GaussianPrior { mean, variance } => {
                let shrink = variance / (variance + noise_var);
                for (j, (o, &x)) in out.iter_mut().zip(x_tilde).enumerate() {
                    let m = mean.at(j);
                    *o = m + shrink * (x - m);
                }
            }
            DenoiserSpec::GmmPrior {
                weights,
                means,
                variances,
            } => {
                let resp = mixture_responsibilities(x_tilde, noise_var, weights, means, variances);
                // Σ_k w_k [μ_k + λ_k (x̃ − μ_k)] = (Σ_k w_k λ_k) x̃ + Σ_k w_k (1 − λ_k) μ_k
                let lambdas: Vec<f64> = variances.iter().map(|v| v / (v + noise_var)).collect();
                let gain: f64 = resp.iter().zip(&lambdas).map(|(w, l)| w * l).sum();
                for (o, &x) in out.iter_mut().zip(x_tilde) {
                    *o = gain * x;
                }
                for ((w, l), mean) in resp.iter().zip(&lambdas).zip(means) {
                    let c = w * (1.0 - l);
                    if c == 0.0 {
                        continue;
                    }
                    match mean {
                        Param::Scalar(m) => out.iter_mut().for_each(|o| *o += c * m),
                        Param::Vector(m) => out.iter_mut().zip(m).for_each(|(o, mj)| *o += c * mj),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`DenoiserSpec::denoise`].
pub fn denoise(spec: &DenoiserSpec, x_tilde: &Signal, sigma: f64) -> Result<Signal, DenoiserError> {
    spec.denoise(x_tilde, sigma)
}

/// Free-function form of [`DenoiserSpec::prior_score`].
pub fn prior_score(
    spec: &DenoiserSpec,
    x_tilde: &Signal,
    sigma: f64,
) -> Result<Signal, DenoiserError> {
    spec.prior_score(x_tilde, sigma)
}
