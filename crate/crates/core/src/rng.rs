//! Reproducible random streams.
//!
//! Every stream is a ChaCha20 generator (`rand_chacha::ChaCha20Rng`, seeded
//! with `seed_from_u64`). Uniforms take the top 53 bits of a `u64` draw, and
//! standard normals come from the polar-free Box–Muller transform:
//!
//! ```text
//! u1 = 1 - U,  u2 = U'        (u1 in (0, 1], u2 in [0, 1))
//! r  = sqrt(-2 ln u1)
//! z0 = r cos(2π u2),  z1 = r sin(2π u2)
//! ```
//!
//! `z0` is returned first and `z1` is kept as the next draw, so a stream
//! consumes exactly one `u64` per normal on average.
//!
//! Parallel chains never share a stream: chain `c` of a run seeded `s` uses
//! `RandomStream::new(s + c)` (wrapping). Auxiliary draws (synthetic inputs,
//! injected noise) use the same seed on a different ChaCha stream id so they
//! stay independent of chain 0.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// ChaCha stream id used by sampling chains.
pub const CHAIN_STREAM: u64 = 0;

#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha20Rng,
    seed: u64,
    spare: Option<f64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, CHAIN_STREAM)
    }

    /// Same seed, independent ChaCha stream.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            seed,
            spare: None,
        }
    }

    /// Stream for chain `chain` of a run with base seed `base_seed`.
    pub fn for_chain(base_seed: u64, chain: usize) -> Self {
        Self::new(chain_seed(base_seed, chain))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn next_categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.next_uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }
}

/// Seed of chain `chain` under base seed `base_seed`.
pub fn chain_seed(base_seed: u64, chain: usize) -> u64 {
    base_seed.wrapping_add(chain as u64)
}

/// `len` i.i.d. standard normal draws.
pub fn gaussian_vector(stream: &mut RandomStream, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    stream.fill_normal(&mut out);
    out
}
