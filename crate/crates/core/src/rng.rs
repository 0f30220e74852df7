//! Deterministic random number generation.
//!
//! All sampling in the crate goes through ChaCha8 seeded from a `u64`, so a
//! `(seed, input)` pair reproduces bit-identical output on every platform.
//! Derived stream seeds are produced with the SplitMix64 finalizer, which
//! keeps independent streams (per training step, per batch, per sweep cell)
//! decorrelated without shared mutable RNG state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Build the crate-wide RNG from a bare seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a child seed from a base seed and a stream index (SplitMix64 mix).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
