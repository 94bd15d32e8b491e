//! Seeded random streams.
//!
//! Each consumer (negative sampling, dropout, adversarial pool sampling, data
//! generation) draws from its own stream derived from the run seed, so
//! enabling one consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream identifiers.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const NEGATIVES: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const ADVERSARY: u64 = 4;
    pub const SILVER: u64 = 5;
    pub const DOWNSAMPLE: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
    pub const SHUFFLE: u64 = 8;
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rng for a single unit of work (e.g. one example at one step), independent
/// of scheduling order.
pub fn keyed_rng(seed: u64, stream: u64, key: &[u64]) -> Rng {
    let mut h = fnv1a64(&seed.to_le_bytes());
    for k in key {
        h = fnv1a64_extend(h, &k.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.set_stream(stream);
    rng
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

pub fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}
