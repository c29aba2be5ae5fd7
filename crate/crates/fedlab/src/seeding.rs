//! Deterministic seed derivation.
//!
//! Every random decision in a run flows from one top-level seed. Sub-streams
//! (init, sampling, per-client training, poisoning, ...) are derived by
//! mixing tag constants into the base seed, so adding a consumer never
//! perturbs the draws of an existing one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DATA: u64 = 0x01;
pub const STREAM_SPLIT: u64 = 0x02;
pub const STREAM_PARTITION: u64 = 0x03;
pub const STREAM_MALICIOUS: u64 = 0x04;
pub const STREAM_POISON: u64 = 0x05;
pub const STREAM_INIT: u64 = 0x06;
pub const STREAM_SAMPLE: u64 = 0x07;
pub const STREAM_TRAIN: u64 = 0x08;
pub const STREAM_DISTILL: u64 = 0x09;
pub const STREAM_GENERATOR: u64 = 0x0a;
pub const STREAM_RESERVE: u64 = 0x0b;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a base seed with a stream tag.
pub fn mix2(seed: u64, tag: u64) -> u64 {
    splitmix(splitmix(seed) ^ tag)
}

/// Mixes a base seed with a stream tag and an index (round, client, ...).
pub fn mix3(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(mix2(seed, tag) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Builds the crate-wide RNG from a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
