use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use postsample::oracle::{direct_posterior_sample, GaussianMixture};
use postsample::sampler::denoise_chains;
use postsample::{NoiseSchedule, RandomStream, Signal};

use crate::failure::{CmdResult, Failure};
use crate::input::{self, SYNTHETIC_STREAM};

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    /// JSON denoiser spec (gaussian_prior or gmm_prior)
    #[arg(long)]
    pub denoiser: PathBuf,
    /// Observed vector, comma separated
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        required = true
    )]
    pub y: Vec<f64>,
    #[arg(long)]
    pub sigma0: f64,
    #[arg(long, default_value_t = 2000)]
    pub chains: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = postsample::config::DEFAULT_RATIO)]
    pub ratio: f64,
    #[arg(long, default_value_t = postsample::config::DEFAULT_SIGMA_LAST)]
    pub sigma_last: f64,
    #[arg(long, default_value_t = postsample::config::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = postsample::config::DEFAULT_STEPS)]
    pub steps: usize,
    /// Largest accepted |mean difference| in pooled standard errors
    #[arg(long, default_value_t = 3.0)]
    pub max_z: f64,
    /// Relative tolerance on each Langevin variance against the exact one
    #[arg(long, default_value_t = 0.07)]
    pub var_tol: f64,
    /// Largest accepted gap between a mode's share of chains and its weight
    #[arg(long, default_value_t = 0.15)]
    pub mode_tol: f64,
}

fn mean_var(samples: &[Signal], j: usize) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.values()[j]).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|s| (s.values()[j] - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (mean, var)
}

/// Index of the posterior component with the largest density at `x`.
fn nearest_mode(post: &GaussianMixture, x: &[f64]) -> usize {
    let score = |k: usize| {
        let v = post.variances()[k].max(f64::MIN_POSITIVE);
        let sq: f64 = x
            .iter()
            .zip(&post.means()[k])
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        post.weights()[k].ln() - 0.5 * sq / v - 0.5 * x.len() as f64 * v.ln()
    };
    (0..post.components())
        .max_by(|&a, &b| score(a).total_cmp(&score(b)))
        .expect("at least one component")
}

fn shares(post: &GaussianMixture, samples: &[Signal]) -> Vec<f64> {
    let mut counts = vec![0usize; post.components()];
    for s in samples {
        counts[nearest_mode(post, s.values())] += 1;
    }
    counts
        .iter()
        .map(|&c| c as f64 / samples.len() as f64)
        .collect()
}

pub fn cmd_oracle_compare(args: &CompareArgs) -> CmdResult {
    if args.chains < 2 {
        return Err(anyhow!("--chains must be at least 2").into());
    }
    if !(args.sigma0.is_finite() && args.sigma0 > 0.0) {
        return Err(anyhow!("--sigma0 must be positive, got {}", args.sigma0).into());
    }
    let spec = input::load_denoiser(&args.denoiser)?;
    let dim = args.y.len();
    let prior = GaussianMixture::from_spec(&spec, dim).map_err(|e| anyhow!("{e}"))?;
    let post = prior
        .exact_posterior(&args.y, args.sigma0)
        .map_err(|e| anyhow!("{e}"))?;
    let exact = post.moments();
    let schedule = NoiseSchedule::geometric(
        args.sigma0,
        args.sigma_last,
        args.ratio,
        args.epsilon,
        args.steps,
    )
    .map_err(anyhow::Error::from)?;
    let y = Signal::from_vector(args.y.clone()).map_err(anyhow::Error::from)?;
    let langevin: Vec<Signal> = denoise_chains(&y, &schedule, &spec, args.seed, args.chains, 0)?
        .into_iter()
        .map(|t| t.final_signal)
        .collect();
    let mut aux = RandomStream::with_stream(args.seed, SYNTHETIC_STREAM);
    let direct =
        direct_posterior_sample(&post, &mut aux, args.chains).map_err(|e| anyhow!("{e}"))?;

    let n = args.chains as f64;
    let mut problems = Vec::new();
    println!(
        "levels L={} steps/level={} chains={} seed={}",
        schedule.levels_below(),
        args.steps,
        args.chains,
        args.seed
    );
    println!("coord  exact_mean  langevin_mean  direct_mean        z  exact_var  langevin_var  direct_var  var_err");
    for j in 0..dim {
        let (ml, vl) = mean_var(&langevin, j);
        let (md, vd) = mean_var(&direct, j);
        let se = (vl / n + vd / n).sqrt();
        let z = if se > 0.0 { (ml - md) / se } else { 0.0 };
        let var_err = if exact.variance[j] > 0.0 {
            (vl - exact.variance[j]) / exact.variance[j]
        } else {
            vl
        };
        println!(
            "{j:>5}  {:>10.5}  {ml:>13.5}  {md:>11.5}  {z:>+7.2}  {:>9.5}  {vl:>12.5}  {vd:>10.5}  {:>+6.1}%",
            exact.mean[j],
            exact.variance[j],
            100.0 * var_err
        );
        if !(z.abs() <= args.max_z) {
            problems.push(format!("coordinate {j}: mean z={z:+.2}"));
        }
        if !(var_err.abs() <= args.var_tol) {
            problems.push(format!(
                "coordinate {j}: variance off by {:+.1}%",
                100.0 * var_err
            ));
        }
    }
    if post.components() > 1 {
        let (sl, sd) = (shares(&post, &langevin), shares(&post, &direct));
        println!("mode  weight  langevin_share  direct_share");
        for k in 0..post.components() {
            println!(
                "{k:>4}  {:>6.3}  {:>14.3}  {:>12.3}",
                post.weights()[k],
                sl[k],
                sd[k]
            );
            if !((sl[k] - post.weights()[k]).abs() <= args.mode_tol) {
                problems.push(format!(
                    "mode {k}: share {:.3} vs weight {:.3}",
                    sl[k],
                    post.weights()[k]
                ));
            }
        }
    }
    if problems.is_empty() {
        println!("within tolerance");
        Ok(())
    } else {
        Err(Failure::Verdict(problems.join("; ")))
    }
}
