use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use postsample::{read_pnm, DenoiserSpec, GaussianMixture, Mask, RandomStream, Shape, Signal};

/// Auxiliary stream ids; chains use stream 0.
pub const SYNTHETIC_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;

const SYNTHETIC_PREFIX: &str = "synthetic:";

/// Where the working image comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File(PathBuf),
    Synthetic(Shape),
}

impl Source {
    /// `synthetic:HxWxC` or a PNM path. Paths are made absolute so that a
    /// manifest can be replayed from any directory.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        if let Some(dims) = text.strip_prefix(SYNTHETIC_PREFIX) {
            let parts: Vec<&str> = dims.split('x').collect();
            let parsed: Result<Vec<usize>, _> = parts.iter().map(|p| p.parse::<usize>()).collect();
            match parsed.as_deref() {
                Ok(&[h, w, c]) if h > 0 && w > 0 && c > 0 => Ok(Source::Synthetic(Shape::new(h, w, c))),
                _ => bail!("synthetic input must look like synthetic:HxWxC with positive sizes, got {text:?}"),
            }
        } else {
            let path = Path::new(text);
            let path = std::path::absolute(path).with_context(|| format!("resolving {text}"))?;
            Ok(Source::File(path))
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Source::File(p) => p.display().to_string(),
            Source::Synthetic(s) => {
                format!("{SYNTHETIC_PREFIX}{}x{}x{}", s.height, s.width, s.channels)
            }
        }
    }
}

/// The image the sampler sees, and the clean image when it is known.
pub struct Prepared {
    pub clean: Option<Signal>,
    pub y: Signal,
}

pub fn read_image(path: &Path) -> anyhow::Result<Signal> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_pnm(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn load_denoiser(path: &Path) -> anyhow::Result<DenoiserSpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: DenoiserSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing denoiser spec {}", path.display()))?;
    spec.validate()
        .with_context(|| format!("denoiser spec {}", path.display()))?;
    Ok(spec)
}

/// Loads or synthesizes the input, then optionally adds `N(0, σ₀²)` noise
/// drawn from the noise stream of `seed`.
pub fn prepare(
    source: &Source,
    prior: &DenoiserSpec,
    seed: u64,
    sigma0: f64,
    add_noise: bool,
) -> anyhow::Result<Prepared> {
    let (base, known_clean) = match source {
        Source::File(path) => (read_image(path)?, add_noise),
        Source::Synthetic(shape) => {
            let mixture = GaussianMixture::from_spec(prior, shape.len())
                .map_err(|e| anyhow!("synthetic input {shape}: {e}"))?;
            let mut stream = RandomStream::with_stream(seed, SYNTHETIC_STREAM);
            let clean = mixture.sample_signals(&mut stream, 1, *shape)?.remove(0);
            (clean, true)
        }
    };
    prior
        .check_dimension(base.len())
        .with_context(|| format!("input {} does not fit the denoiser", base.shape()))?;
    let y = if add_noise {
        let mut stream = RandomStream::with_stream(seed, NOISE_STREAM);
        let noisy = base
            .values()
            .iter()
            .map(|v| v + sigma0 * stream.next_normal())
            .collect();
        Signal::new(noisy, base.shape())?
    } else {
        base.clone()
    };
    Ok(Prepared {
        clean: known_clean.then_some(base),
        y,
    })
}

/// Observed flat indices from a mask image (nonzero = observed). A
/// single-channel mask applies to every channel of the input.
pub fn load_mask(path: &Path, shape: Shape) -> anyhow::Result<Vec<usize>> {
    let mask = read_image(path)?;
    let m = mask.shape();
    if m.height != shape.height
        || m.width != shape.width
        || !(m.channels == 1 || m.channels == shape.channels)
    {
        bail!("mask {} does not match input {}", m, shape);
    }
    let observed = (0..shape.len())
        .filter(|&i| {
            let (pixel, channel) = (i / shape.channels, i % shape.channels);
            let j = if m.channels == 1 {
                pixel
            } else {
                pixel * m.channels + channel
            };
            mask.values()[j] != 0.0
        })
        .collect();
    Mask::new(observed, shape.len())
        .map(|mask| mask.observed().to_vec())
        .map_err(Into::into)
}
