// SPDX-License-Identifier: MIT OR Apache-2.0

//! Keyed random substreams.
//!
//! Every stochastic quantity is drawn from a generator derived from a key
//! path such as `(seed, step, replicate)`. Replicates can therefore be
//! evaluated in any order, or in parallel, and still reproduce the same
//! numbers bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Sentinel replicate index for the per-step tie-breaking uniform.
pub const TIE_BREAK: u64 = u64::MAX;
/// Sentinel replicate index for an MCMC chain.
pub const CHAIN: u64 = u64::MAX - 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key path into a single 64-bit seed.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for the substream identified by `(seed, path...)`.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, path))
}
