//! `postsample`: stochastic denoising and noisy inpainting by annealed
//! Langevin sampling, with residual validation.
//!
//! Exit codes: 0 success, 1 verdict failure, 2 usage or validation error,
//! 3 numerical divergence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod compare;
mod failure;
mod input;
mod sample;
mod validate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::failure::CmdResult;

#[derive(Parser, Debug)]
#[command(
    name = "postsample",
    version,
    about = "Posterior sampling for image denoising and inpainting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw posterior samples of a clean image from a noisy one
    Denoise(sample::SampleArgs),
    /// Fill masked pixels and denoise the observed ones
    Inpaint(sample::InpaintArgs),
    /// Test whether noisy − restored looks like white N(0, σ₀²) noise
    Validate(validate::ValidateArgs),
    /// Compare Langevin moments with exact posterior samples for an analytic prior
    OracleCompare(compare::CompareArgs),
    /// Re-run a denoise or inpaint manifest into a new directory
    Replay(sample::ReplayArgs),
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Denoise(args) => sample::cmd_denoise(args),
        Command::Inpaint(args) => sample::cmd_inpaint(args),
        Command::Validate(args) => validate::cmd_validate(args),
        Command::OracleCompare(args) => compare::cmd_oracle_compare(args),
        Command::Replay(args) => sample::cmd_replay(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            failure.exit_code()
        }
    }
}
