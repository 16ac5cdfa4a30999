//! Deterministic per-element RNG streams.
//!
//! Renderers draw noise from a stream derived from (base seed, element
//! index), so results are independent of pixel visiting order and thread
//! schedule.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step, used to decorrelate stream seeds.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for element `index` of the stream identified by `seed`.
pub(crate) fn element_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ index.wrapping_add(1)))
}

/// Derive a child stream seed, for nested structures (frames, runs).
pub(crate) fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ 0x5DEE_CE66_D1CE_4E5B) ^ index.wrapping_add(1))
}
