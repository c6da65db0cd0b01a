//! Seed derivation.
//!
//! Every source of randomness in the crate is a [`ChaCha8Rng`] seeded through
//! [`derive_seed`], so one configured seed fans out into independent,
//! reproducible streams (per epoch, per image, per posterior sample, ...).
//! The scheme is `splitmix64(fnv1a(domain) ^ mix(base, index))`: the domain
//! string separates purposes, the index separates items within a purpose.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed, a purpose label and an index.
pub fn derive_seed(base: u64, domain: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for byte in domain.bytes() {
        h = (h ^ u64::from(byte)).wrapping_mul(FNV_PRIME);
    }
    splitmix64(h ^ splitmix64(base ^ splitmix64(index)))
}

/// A deterministic RNG for the given seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
