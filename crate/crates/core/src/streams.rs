//! Keyed ChaCha8 streams.
//!
//! Every random decision in a run draws from its own stream derived from
//! `(seed, purpose, round, client)`, so serial and parallel execution consume
//! identical bits and changing one knob (say, the compressor) never shifts
//! which clients are sampled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Sample,
    Compress,
    Downlink,
    Batch,
    Partition,
    Problem,
    Check,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Sample => 0x5341_4d50,
            Purpose::Compress => 0x434f_4d50,
            Purpose::Downlink => 0x444f_574e,
            Purpose::Batch => 0x4241_5443,
            Purpose::Partition => 0x5041_5254,
            Purpose::Problem => 0x5052_4f42,
            Purpose::Check => 0x4348_4543,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit subseed from a base seed and a list of key parts.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn stream(seed: u64, purpose: Purpose, round: u64, client: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[purpose.tag(), round, client]))
}
