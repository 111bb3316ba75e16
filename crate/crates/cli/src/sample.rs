use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use postsample::stats::{self, Thresholds};
use postsample::{
    write_pnm, ChainTrace, Mask, MaskCoverage, Mode, NoiseSchedule, ResidualReport, RunConfig,
    ScheduleParams, Shape, Signal,
};
use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, Failure};
use crate::input::{self, Prepared, Source};

pub const MANIFEST_FORMAT: &str = "postsample-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const INCOMPLETE_FILE: &str = "INCOMPLETE";
pub const CSV_SCHEMA: &str = "1";

#[derive(Args, Debug, Clone)]
pub struct ThresholdArgs {
    /// Largest acceptable |ρ| over the 8 neighbor offsets
    #[arg(long, default_value_t = 0.05)]
    pub rho_max: f64,
    /// Smallest acceptable normality p-value
    #[arg(long, default_value_t = 0.05)]
    pub p_min: f64,
    /// Relative tolerance on the residual std against σ₀
    #[arg(long, default_value_t = 0.05)]
    pub std_tol: f64,
}

impl ThresholdArgs {
    pub fn thresholds(&self) -> anyhow::Result<Thresholds> {
        for (name, v) in [
            ("rho-max", self.rho_max),
            ("p-min", self.p_min),
            ("std-tol", self.std_tol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bail!("--{name} must be a nonnegative number, got {v}");
            }
        }
        Ok(Thresholds {
            rho_max: self.rho_max,
            p_min: self.p_min,
            std_rel_tol: self.std_tol,
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    /// Noisy PNM image, or synthetic:HxWxC to draw a clean image from the prior
    #[arg(long)]
    pub input: String,
    /// Noise standard deviation of the input
    #[arg(long)]
    pub sigma0: f64,
    /// Geometric ratio between consecutive noise levels
    #[arg(long, default_value_t = postsample::config::DEFAULT_RATIO)]
    pub ratio: f64,
    /// Final noise level σ_L
    #[arg(long, default_value_t = postsample::config::DEFAULT_SIGMA_LAST)]
    pub sigma_last: f64,
    /// Base step size ε
    #[arg(long, default_value_t = postsample::config::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Langevin steps per noise level
    #[arg(long, default_value_t = postsample::config::DEFAULT_STEPS)]
    pub steps: usize,
    /// JSON denoiser spec (gaussian_prior or gmm_prior)
    #[arg(long)]
    pub denoiser: PathBuf,
    /// Base seed; chain c uses seed + c
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Keep every n-th iterate per chain (0 = final only)
    #[arg(long, default_value_t = 0)]
    pub trace_stride: usize,
    /// Treat the input as clean and corrupt it with N(0, σ₀²) first
    #[arg(long)]
    pub add_noise: bool,
    /// maxval of written images
    #[arg(long, default_value_t = 255)]
    pub maxval: u32,
    /// Write plain (ASCII) PNM instead of binary
    #[arg(long)]
    pub ascii: bool,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Args, Debug, Clone)]
pub struct InpaintArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Mask PNM, nonzero = observed
    #[arg(long)]
    pub mask: PathBuf,
    /// Top noise level σ₋K of the extended schedule
    #[arg(long)]
    pub sigma_minus_k: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// Manifest written by a previous denoise or inpaint run
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Compare every artifact with the original run directory
    #[arg(long)]
    pub check: bool,
}

/// What is needed besides the run configuration to redo a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub input: String,
    pub add_noise: bool,
    pub maxval: u32,
    pub ascii: bool,
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub levels_above: usize,
    pub levels_below: usize,
    pub sigma_top: f64,
    pub sigma0: f64,
    pub sigma_last: f64,
    pub epsilon: f64,
    pub steps_per_level: usize,
    pub sigmas: Vec<f64>,
}

impl ScheduleSummary {
    fn new(s: &NoiseSchedule) -> Self {
        Self {
            levels_above: s.levels_above(),
            levels_below: s.levels_below(),
            sigma_top: s.sigmas()[0],
            sigma0: s.sigma0(),
            sigma_last: s.sigma_last(),
            epsilon: s.epsilon(),
            steps_per_level: s.steps_per_level(),
            sigmas: s.sigmas().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub index: usize,
    pub seed: u64,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    /// `None` when no residual could be computed (e.g. nothing observed).
    pub passed: Option<bool>,
    pub psnr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tool_version: String,
    pub request: Request,
    pub config: RunConfig,
    pub shape: Shape,
    pub schedule: ScheduleSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_coverage: Option<MaskCoverage>,
    pub no_observations: bool,
    pub chains: Vec<ChainRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_image: Option<String>,
    pub residuals: String,
    pub replay: String,
}

/// Files written so far; on failure they are deleted and the marker stays.
struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    fn open(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let out = Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        };
        fs::write(out.dir.join(INCOMPLETE_FILE), "run in progress\n")?;
        Ok(out)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    fn finish(self) -> anyhow::Result<()> {
        fs::remove_file(self.dir.join(INCOMPLETE_FILE))?;
        Ok(())
    }

    fn abandon(self, failure: &Failure) {
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
        let _ = fs::write(self.dir.join(INCOMPLETE_FILE), format!("{failure}\n"));
    }
}

fn config_from(args: &SampleArgs, mode: Mode, sigma_minus_k: Option<f64>) -> RunConfig {
    RunConfig {
        mode,
        sigma0: args.sigma0,
        schedule: ScheduleParams {
            ratio: args.ratio,
            sigma_last: args.sigma_last,
            epsilon: args.epsilon,
            steps_per_level: args.steps,
            sigma_minus_k,
        },
        // replaced once the spec file is read
        denoiser: postsample::DenoiserSpec::GaussianPrior {
            mean: postsample::Param::Scalar(0.0),
            variance: 1.0,
        },
        seed: args.seed,
        chains: args.chains,
        trace_stride: args.trace_stride,
        mask: None,
    }
}

fn request_from(args: &SampleArgs, source: &Source) -> anyhow::Result<Request> {
    if args.maxval == 0 || args.maxval > postsample::pnm::MAX_MAXVAL {
        bail!("--maxval must be in 1..=65535, got {}", args.maxval);
    }
    Ok(Request {
        input: source.describe(),
        add_noise: args.add_noise,
        maxval: args.maxval,
        ascii: args.ascii,
        thresholds: args.thresholds.thresholds()?,
        mask_file: None,
    })
}

pub fn cmd_denoise(args: &SampleArgs) -> CmdResult {
    let mut config = config_from(args, Mode::Denoise, None);
    // flag-only checks first so that bad values never touch the disk
    precheck(&config)?;
    config.denoiser = input::load_denoiser(&args.denoiser)?;
    config.validate().map_err(anyhow::Error::from)?;
    let source = Source::parse(&args.input)?;
    let request = request_from(args, &source)?;
    execute(&request, &config, &args.out_dir, &source).map(|_| ())
}

pub fn cmd_inpaint(args: &InpaintArgs) -> CmdResult {
    let a = &args.sample;
    let mut config = config_from(a, Mode::Inpaint, Some(args.sigma_minus_k));
    config.mask = Some(Vec::new());
    precheck(&config)?;
    config.denoiser = input::load_denoiser(&a.denoiser)?;
    let source = Source::parse(&a.input)?;
    let mut request = request_from(a, &source)?;
    let mask_path = std::path::absolute(&args.mask).context("resolving --mask")?;
    request.mask_file = Some(mask_path.display().to_string());
    let shape = match &source {
        Source::Synthetic(shape) => *shape,
        Source::File(path) => input::read_image(path)?.shape(),
    };
    config.mask = Some(input::load_mask(&mask_path, shape)?);
    config.validate().map_err(anyhow::Error::from)?;
    execute(&request, &config, &a.out_dir, &source).map(|_| ())
}

/// Validates everything that does not need the denoiser spec or any file.
fn precheck(config: &RunConfig) -> CmdResult {
    config.validate().map_err(anyhow::Error::from)?;
    Ok(())
}

pub fn cmd_replay(args: &ReplayArgs) -> CmdResult {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", args.manifest.display()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(anyhow::anyhow!("unsupported manifest format {:?}", manifest.format).into());
    }
    manifest.config.validate().map_err(anyhow::Error::from)?;
    let source = Source::parse(&manifest.request.input)?;
    let replayed = execute(&manifest.request, &manifest.config, &args.out_dir, &source)?;
    if args.check {
        let original_dir = args.manifest.parent().unwrap_or(Path::new("."));
        let mut names = vec![MANIFEST_FILE.to_string(), RESIDUALS_FILE.to_string()];
        names.extend(replayed.files());
        let mismatched: Vec<&String> = names
            .iter()
            .filter(|name| {
                fs::read(original_dir.join(name.as_str())).ok()
                    != fs::read(args.out_dir.join(name.as_str())).ok()
            })
            .collect();
        if !mismatched.is_empty() {
            return Err(Failure::Verdict(format!(
                "replay differs in {mismatched:?}"
            )));
        }
        println!("replay identical: {} files", names.len());
    }
    Ok(())
}

impl Manifest {
    fn files(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for c in &self.chains {
            names.push(c.output.clone());
            names.extend(c.trace.clone());
        }
        names.extend(self.clean_image.clone());
        names.extend(self.noisy_image.clone());
        names
    }
}

fn image_name(stem: &str, shape: Shape) -> String {
    format!("{stem}.{}", if shape.channels == 1 { "pgm" } else { "ppm" })
}

fn csv_row(
    label: &str,
    seed: Option<u64>,
    report: Option<&ResidualReport>,
    psnr: Option<f64>,
) -> String {
    let seed = seed.map(|s| s.to_string()).unwrap_or_default();
    let (report, passed) = match report {
        Some(r) => (r.to_csv_row(), r.passed().to_string()),
        None => (
            ",".repeat(ResidualReport::CSV_HEADER.matches(',').count()),
            String::new(),
        ),
    };
    let psnr = psnr.map(|p| p.to_string()).unwrap_or_default();
    format!("{CSV_SCHEMA},{label},{seed},{report},{passed},{psnr}\n")
}

pub fn csv_header() -> String {
    format!(
        "schema,row,seed,{},passed,psnr_db\n",
        ResidualReport::CSV_HEADER
    )
}

/// Residual tests for one output: masked to the observed set when inpainting.
fn residual_report(
    y: &Signal,
    x_hat: &Signal,
    mask: Option<&Mask>,
    sigma0: f64,
    thresholds: &Thresholds,
) -> Option<ResidualReport> {
    match mask {
        None => stats::validate_residual(y, x_hat, sigma0, thresholds).ok(),
        Some(m) if m.coverage() == MaskCoverage::NoObservations => None,
        Some(m) => stats::validate_residual_masked(y, x_hat, m, sigma0, thresholds).ok(),
    }
}

fn execute(
    request: &Request,
    config: &RunConfig,
    out_dir: &Path,
    source: &Source,
) -> CmdResult<Manifest> {
    let Prepared { clean, y } = input::prepare(
        source,
        &config.denoiser,
        config.seed,
        config.sigma0,
        request.add_noise,
    )?;
    let schedule = config.resolve_schedule().map_err(anyhow::Error::from)?;
    let mask = config.resolve_mask(y.len()).map_err(anyhow::Error::from)?;
    let mut out = OutputDir::open(out_dir)?;
    match produce(
        request,
        config,
        &schedule,
        mask.as_ref(),
        clean.as_ref(),
        &y,
        &mut out,
    ) {
        Ok(manifest) => {
            out.finish()?;
            Ok(manifest)
        }
        Err(failure) => {
            out.abandon(&failure);
            Err(failure)
        }
    }
}

fn produce(
    request: &Request,
    config: &RunConfig,
    schedule: &NoiseSchedule,
    mask: Option<&Mask>,
    clean: Option<&Signal>,
    y: &Signal,
    out: &mut OutputDir,
) -> CmdResult<Manifest> {
    let traces: Vec<ChainTrace> = config.run(y)?;
    let shape = y.shape();
    let encode = |s: &Signal| write_pnm(s, !request.ascii, request.maxval);
    let mut csv = csv_header();
    let mut clean_image = None;
    let mut noisy_image = None;
    if let Some(clean) = clean {
        if request.input.starts_with("synthetic:") {
            let name = image_name("clean", shape);
            out.write(&name, &encode(clean).map_err(anyhow::Error::from)?)?;
            clean_image = Some(name);
        }
        if request.add_noise {
            let truth = residual_report(y, clean, mask, config.sigma0, &request.thresholds);
            let psnr = stats::psnr(clean, y, 1.0).ok();
            csv.push_str(&csv_row("truth", None, truth.as_ref(), psnr));
        }
    }
    if request.add_noise {
        let name = image_name("noisy", shape);
        out.write(&name, &encode(y).map_err(anyhow::Error::from)?)?;
        noisy_image = Some(name);
    }
    let mut chains = Vec::with_capacity(traces.len());
    for (index, trace) in traces.iter().enumerate() {
        let x_hat = &trace.final_signal;
        let output = image_name(&format!("chain_{index:03}"), shape);
        out.write(&output, &encode(x_hat).map_err(anyhow::Error::from)?)?;
        let trace_file = if config.trace_stride > 0 {
            let name = format!("trace_{index:03}.json");
            let json = serde_json::to_vec(&trace.snapshots).context("serializing trace")?;
            out.write(&name, &json)?;
            Some(name)
        } else {
            None
        };
        let report = residual_report(y, x_hat, mask, config.sigma0, &request.thresholds);
        let psnr = clean.and_then(|c| stats::psnr(c, x_hat, 1.0).ok());
        csv.push_str(&csv_row(
            &format!("chain_{index}"),
            Some(trace.seed),
            report.as_ref(),
            psnr,
        ));
        chains.push(ChainRecord {
            index,
            seed: trace.seed,
            output,
            trace: trace_file,
            passed: report.as_ref().map(ResidualReport::passed),
            psnr_db: psnr,
        });
    }
    out.write(RESIDUALS_FILE, csv.as_bytes())?;
    let coverage = mask.map(Mask::coverage);
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        request: request.clone(),
        config: config.clone(),
        shape,
        schedule: ScheduleSummary::new(schedule),
        mask_coverage: coverage,
        no_observations: coverage == Some(MaskCoverage::NoObservations),
        chains,
        clean_image,
        noisy_image,
        residuals: RESIDUALS_FILE.to_string(),
        replay: format!("postsample replay --manifest {MANIFEST_FILE} --out-dir <dir>"),
    };
    let json = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    out.write(MANIFEST_FILE, format!("{json}\n").as_bytes())?;
    for c in &manifest.chains {
        let verdict = match c.passed {
            Some(true) => "residual ok",
            Some(false) => "residual FAILED",
            None => "residual n/a",
        };
        let psnr = c
            .psnr_db
            .map(|p| format!(", PSNR {p:.2} dB"))
            .unwrap_or_default();
        println!(
            "chain {} (seed {}): {} -> {}{psnr}",
            c.index, c.seed, verdict, c.output
        );
    }
    if manifest.no_observations {
        println!("mask has no observed pixels: outputs are prior samples");
    }
    Ok(manifest)
}
