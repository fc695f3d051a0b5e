//! Counter-based random streams.
//!
//! Every block of the sampler draws from its own ChaCha stream keyed by
//! `(seed, tag, country, quantile)`, so serial and parallel execution
//! consume identical random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamTag {
    Equation = 1,
    Quantile = 2,
    Global = 3,
    Forecast = 4,
    Girf = 5,
    Simulate = 6,
    Origin = 7,
}

pub fn stream(seed: u64, tag: StreamTag, a: usize, b: usize) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((tag as u64) << 56) ^ ((a as u64 & 0x0fff_ffff) << 28) ^ (b as u64 & 0x0fff_ffff);
    rng.set_stream(id);
    rng
}

/// Derives a child seed, used for per-origin chains in recursive evaluation.
pub fn child_seed(seed: u64, tag: StreamTag, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ ((tag as u64) << 56) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
