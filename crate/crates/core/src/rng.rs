//! Reproducible random streams.
//!
//! Every replication draws from its own ChaCha8 generator, seeded with
//! `mix64(master_seed, stream_index)`:
//!
//! ```text
//! z  = master_seed + (stream_index + 1) * 0x9E3779B97F4A7C15   (wrapping)
//! z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z ^ (z >> 31)
//! ```
//!
//! i.e. the SplitMix64 output function applied to a Weyl-sequence offset.
//! The generator is ChaCha with 8 rounds; its stream is fixed by
//! `rand_chacha` and does not depend on the platform.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifier of the generator algorithm and seeding scheme. Bump on any
/// change that alters sampled values.
pub const GENERATOR_VERSION: &str = "chacha8+splitmix64/v1";

pub type SimRng = ChaCha8Rng;

/// SplitMix64-style avalanche of `(seed, index)`.
pub fn mix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A `(seed, stream_index)` pair naming one replication's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        RngStream { seed, stream_index }
    }

    pub fn rng(&self) -> SimRng {
        SimRng::seed_from_u64(mix64(self.seed, self.stream_index))
    }
}

/// Standard exponential variate, strictly positive.
#[inline]
pub fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln()
}

/// Uniform on `[0, 1)`.
#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}
