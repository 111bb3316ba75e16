//! Residual validation and restoration metrics.
//!
//! A restoration `x̂` of `y = x + n` is accepted as a denoising result when
//! the residual `y − x̂` looks like the noise that was removed: white, Gaussian,
//! and with standard deviation `σ₀`. Three tests check that:
//!
//! * **Whiteness.** Pearson correlation between the residual and its copy
//!   shifted by each of the 8 neighbour offsets. Only the valid overlap is
//!   used (no wrap-around) and all channels are pooled. The signed value
//!   with the largest magnitude is reported.
//! * **Normality.** D'Agostino–Pearson omnibus `K²` test, below.
//! * **Energy.** The empirical standard deviation compared with `σ₀`.
//!
//! # D'Agostino–Pearson `K²`
//!
//! With `n` samples, central moments `m_r = Σ (x − x̄)^r / n`,
//! `√b₁ = m₃ / m₂^{3/2}` and `b₂ = m₄ / m₂²`:
//!
//! Skewness (D'Agostino 1970):
//!
//! ```text
//! Y      = √b₁ √((n+1)(n+3) / (6(n−2)))
//! β₂     = 3(n² + 27n − 70)(n+1)(n+3) / ((n−2)(n+5)(n+7)(n+9))
//! W²     = −1 + √(2(β₂ − 1))
//! δ      = 1 / √(ln W)
//! a      = √(2 / (W² − 1))
//! Z₁     = δ ln(Y/a + √((Y/a)² + 1))
//! ```
//!
//! Kurtosis (Anscombe & Glynn 1983):
//!
//! ```text
//! E      = 3(n−1) / (n+1)
//! Var    = 24n(n−2)(n−3) / ((n+1)²(n+3)(n+5))
//! x      = (b₂ − E) / √Var
//! √β₁    = 6(n² − 5n + 2) / ((n+7)(n+9)) · √(6(n+3)(n+5) / (n(n−2)(n−3)))
//! A      = 6 + 8/√β₁ · (2/√β₁ + √(1 + 4/β₁))
//! D      = 1 + x √(2 / (A − 4))
//! Z₂     = ((1 − 2/(9A)) − sign(D) ∛((1 − 2/A) / |D|)) / √(2/(9A))
//! ```
//!
//! `K² = Z₁² + Z₂²` is χ²₂ under the null, so `p = exp(−K²/2)`. These are the
//! same formulas as `scipy.stats.normaltest`; `D = 0` is treated as
//! `Z₂ = (1 − 2/(9A)) / √(2/(9A))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Mask, Shape, Signal, SignalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("signals differ in shape: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("residual is degenerate (zero variance)")]
    DegenerateResidual,
    #[error("whiteness test needs height >= 2 and width >= 2, got {0}")]
    GridTooSmall(Shape),
    #[error("normality test needs at least {needed} samples, got {given}")]
    SampleTooSmall { given: usize, needed: usize },
    #[error("MMSE reference error is zero; ratio undefined")]
    ZeroDenominator,
    #[error("mask covers {mask_len} values but the signal has {signal_len}")]
    MaskMismatch { mask_len: usize, signal_len: usize },
    #[error("too few observed neighbour pairs to estimate correlation")]
    NoPairs,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Minimum sample size accepted by [`normality_p`].
pub const MIN_NORMALITY_SAMPLES: usize = 20;

/// Neighbour offsets `(row, column)` in tie-breaking order.
pub const OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Whiteness {
    pub rho: f64,
    pub direction: (i32, i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    pub z_skew: f64,
    pub z_kurtosis: f64,
    pub k2: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub rho_max: f64,
    pub p_min: f64,
    pub std_rel_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rho_max: 0.05,
            p_min: 0.05,
            std_rel_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_abs_rho: f64,
    pub rho_direction: (i32, i32),
    pub normality_p: f64,
    pub empirical_std: f64,
    pub sigma0: f64,
    pub white: bool,
    pub gaussian: bool,
    pub energy_ok: bool,
}

impl ResidualReport {
    pub const CSV_HEADER: &'static str =
        "max_abs_rho,rho_dy,rho_dx,normality_p,empirical_std,sigma0,white,gaussian,energy_ok";

    pub fn passed(&self) -> bool {
        self.white && self.gaussian && self.energy_ok
    }

    /// One row matching [`Self::CSV_HEADER`]; reals use Rust's shortest
    /// round-trip formatting.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.max_abs_rho,
            self.rho_direction.0,
            self.rho_direction.1,
            self.normality_p,
            self.empirical_std,
            self.sigma0,
            self.white,
            self.gaussian,
            self.energy_ok
        )
    }
}

/// Pearson correlation of `r` with itself shifted by `offset`, over pairs
/// whose both ends are in the grid (and observed, when `mask` is given).
///
/// `ρ(d)` and `ρ(−d)` come out bit-identical.
fn shifted_correlation(
    values: &[f64],
    shape: Shape,
    offset: (i32, i32),
    mask: Option<&[bool]>,
) -> Result<f64, StatsError> {
    let (dy, dx) = offset;
    let (h, w, c) = (shape.height as i64, shape.width as i64, shape.channels);
    // pairs are (p, p + d); iterate p so that both lie in-grid
    let rows = (0.max(-dy as i64))..(h.min(h - dy as i64));
    let cols = (0.max(-dx as i64))..(w.min(w - dx as i64));
    // For offset -d, (p, p - d) = (q + d, q) with q = p - d: the same pairs in
    // the same order with roles swapped. Products commute, and the two means
    // swap, so every accumulated sum is identical.
    let pairs: Vec<(f64, f64)> = rows
        .flat_map(|r| {
            let cols = cols.clone();
            cols.flat_map(move |col| {
                (0..c).filter_map(move |ch| {
                    let a = shape.index(r as usize, col as usize, ch);
                    let b = shape.index((r + dy as i64) as usize, (col + dx as i64) as usize, ch);
                    match mask {
                        Some(m) if !(m[a] && m[b]) => None,
                        _ => Some((values[a], values[b])),
                    }
                })
            })
        })
        .collect();
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for &(a, b) in &pairs {
        n += 1;
        sa += a;
        sb += b;
    }
    if n < 2 {
        return Err(StatsError::NoPairs);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(StatsError::DegenerateResidual);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn whiteness_impl(
    values: &[f64],
    shape: Shape,
    mask: Option<&[bool]>,
) -> Result<Whiteness, StatsError> {
    if shape.height < 2 || shape.width < 2 {
        return Err(StatsError::GridTooSmall(shape));
    }
    let mut best: Option<Whiteness> = None;
    for &offset in &OFFSETS {
        let rho = shifted_correlation(values, shape, offset, mask)?;
        if best.is_none_or(|b| rho.abs() > b.rho.abs()) {
            best = Some(Whiteness {
                rho,
                direction: offset,
            });
        }
    }
    Ok(best.expect("eight offsets evaluated"))
}

/// Correlation for one offset; exposed for symmetry checks.
pub fn shifted_rho(residual: &Signal, offset: (i32, i32)) -> Result<f64, StatsError> {
    shifted_correlation(residual.values(), residual.shape(), offset, None)
}

/// Largest-magnitude neighbour correlation over the 8 offsets. Ties keep
/// the first offset in [`OFFSETS`] order.
pub fn whiteness_rho(residual: &Signal) -> Result<Whiteness, StatsError> {
    whiteness_impl(residual.values(), residual.shape(), None)
}

/// As [`whiteness_rho`], counting only pairs whose both pixels are observed.
pub fn whiteness_rho_masked(residual: &Signal, mask: &Mask) -> Result<Whiteness, StatsError> {
    check_mask(residual, mask)?;
    whiteness_impl(residual.values(), residual.shape(), Some(mask.flags()))
}

/// Full D'Agostino–Pearson computation.
pub fn dagostino_pearson(sample: &[f64]) -> Result<NormalityTest, StatsError> {
    let n = sample.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(StatsError::SampleTooSmall {
            given: n,
            needed: MIN_NORMALITY_SAMPLES,
        });
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in sample {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if !(m2 > 0.0) || m2 <= f64::EPSILON * mean.abs().powi(2) {
        return Err(StatsError::DegenerateResidual);
    }
    let z_skew = skew_z(m3 / m2.powf(1.5), nf);
    let z_kurtosis = kurtosis_z(m4 / (m2 * m2), nf);
    let k2 = z_skew * z_skew + z_kurtosis * z_kurtosis;
    Ok(NormalityTest {
        z_skew,
        z_kurtosis,
        k2,
        p_value: chi2_2dof_survival(k2),
    })
}

fn skew_z(b1: f64, n: f64) -> f64 {
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let ya = y / alpha;
    delta * (ya + (ya * ya + 1.0).sqrt()).ln()
}

fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0
        + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = if denom == 0.0 {
        0.0
    } else {
        denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt()
    };
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// Survival function of χ² with two degrees of freedom.
pub fn chi2_2dof_survival(k2: f64) -> f64 {
    (-0.5 * k2).exp().clamp(0.0, 1.0)
}

/// D'Agostino–Pearson p-value.
pub fn normality_p(sample: &[f64]) -> Result<f64, StatsError> {
    Ok(dagostino_pearson(sample)?.p_value)
}

/// Sample standard deviation about the sample mean (`n − 1` denominator).
pub fn empirical_std(sample: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn check_shapes(a: &Signal, b: &Signal) -> Result<(), StatsError> {
    if a.shape() != b.shape() {
        return Err(StatsError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn check_mask(sig: &Signal, mask: &Mask) -> Result<(), StatsError> {
    if mask.total_len() != sig.len() {
        return Err(StatsError::MaskMismatch {
            mask_len: mask.total_len(),
            signal_len: sig.len(),
        });
    }
    Ok(())
}

fn build_report(
    whiteness: Whiteness,
    sample: &[f64],
    sigma0: f64,
    thresholds: &Thresholds,
) -> Result<ResidualReport, StatsError> {
    let normality_p = normality_p(sample)?;
    let empirical_std = empirical_std(sample);
    Ok(ResidualReport {
        max_abs_rho: whiteness.rho,
        rho_direction: whiteness.direction,
        normality_p,
        empirical_std,
        sigma0,
        white: whiteness.rho.abs() <= thresholds.rho_max,
        gaussian: normality_p >= thresholds.p_min,
        energy_ok: (empirical_std - sigma0).abs() / sigma0 <= thresholds.std_rel_tol,
    })
}

/// Runs the three residual tests on `y − x_hat`.
pub fn validate_residual(
    y: &Signal,
    x_hat: &Signal,
    sigma0: f64,
    thresholds: &Thresholds,
) -> Result<ResidualReport, StatsError> {
    check_shapes(y, x_hat)?;
    let residual = y.difference(x_hat)?;
    let whiteness = whiteness_rho(&residual)?;
    build_report(whiteness, residual.values(), sigma0, thresholds)
}

/// Residual tests restricted to observed pixels (inpainting).
pub fn validate_residual_masked(
    y: &Signal,
    x_hat: &Signal,
    mask: &Mask,
    sigma0: f64,
    thresholds: &Thresholds,
) -> Result<ResidualReport, StatsError> {
    check_shapes(y, x_hat)?;
    check_mask(y, mask)?;
    let residual = y.difference(x_hat)?;
    let whiteness = whiteness_rho_masked(&residual, mask)?;
    let sample: Vec<f64> = mask
        .observed()
        .iter()
        .map(|&i| residual.values()[i])
        .collect();
    build_report(whiteness, &sample, sigma0, thresholds)
}

/// One report per channel, for multichannel residuals.
pub fn validate_residual_per_channel(
    y: &Signal,
    x_hat: &Signal,
    sigma0: f64,
    thresholds: &Thresholds,
) -> Result<Vec<ResidualReport>, StatsError> {
    check_shapes(y, x_hat)?;
    (0..y.shape().channels)
        .map(|c| {
            let (yc, xc) = (
                y.channel(c).expect("in range"),
                x_hat.channel(c).expect("in range"),
            );
            validate_residual(&yc, &xc, sigma0, thresholds)
        })
        .collect()
}

pub fn mse(reference: &Signal, test: &Signal) -> Result<f64, StatsError> {
    check_shapes(reference, test)?;
    Ok(reference
        .values()
        .iter()
        .zip(test.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64)
}

/// `10 log₁₀(peak² / MSE)` in dB. Identical signals give `f64::INFINITY`.
pub fn psnr(reference: &Signal, test: &Signal, peak: f64) -> Result<f64, StatsError> {
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// `MSE(candidate, reference) / MSE(mmse_output, reference)`.
pub fn mse_ratio(
    reference: &Signal,
    candidate: &Signal,
    mmse_output: &Signal,
) -> Result<f64, StatsError> {
    let den = mse(reference, mmse_output)?;
    let num = mse(reference, candidate)?;
    if den == 0.0 {
        return Err(StatsError::ZeroDenominator);
    }
    Ok(num / den)
}
