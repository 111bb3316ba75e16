use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use postsample::stats;
use postsample::Mask;

use crate::failure::{CmdResult, Failure};
use crate::input;
use crate::sample::ThresholdArgs;

#[derive(Args, Debug, Clone)]
pub struct ValidateArgs {
    #[arg(long)]
    pub noisy: PathBuf,
    #[arg(long)]
    pub restored: PathBuf,
    #[arg(long)]
    pub sigma0: f64,
    /// Restrict the tests to pixels that are nonzero in this mask
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

/// Prints the residual report as JSON; succeeds only if every verdict passes.
pub fn cmd_validate(args: &ValidateArgs) -> CmdResult {
    if !(args.sigma0.is_finite() && args.sigma0 > 0.0) {
        return Err(anyhow::anyhow!("--sigma0 must be positive, got {}", args.sigma0).into());
    }
    let thresholds = args.thresholds.thresholds()?;
    let noisy = input::read_image(&args.noisy)?;
    let restored = input::read_image(&args.restored)?;
    let report = match &args.mask {
        None => stats::validate_residual(&noisy, &restored, args.sigma0, &thresholds),
        Some(path) => {
            let observed = input::load_mask(path, noisy.shape())?;
            let mask = Mask::new(observed, noisy.len()).map_err(anyhow::Error::from)?;
            stats::validate_residual_masked(&noisy, &restored, &mask, args.sigma0, &thresholds)
        }
    }
    .context("residual validation")?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).context("serializing report")?
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verdict(format!(
            "white={} gaussian={} energy_ok={}",
            report.white, report.gaussian, report.energy_ok
        )))
    }
}
