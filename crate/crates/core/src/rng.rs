//! Seeded random streams.
//!
//! Every random quantity is drawn from its own ChaCha stream keyed by a
//! `(seed, stream)` pair, so adding draws to one stage never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams used by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Attributes = 2,
    Treatment = 3,
    Noise = 4,
    SemiSynthetic = 5,
    Split = 6,
    Init = 7,
    Dropout = 8,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// SplitMix64 finaliser, used to derive child seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed for one replicate of one grid cell.
pub fn derive_seed(grid_seed: u64, cell: u64, replicate: u64) -> u64 {
    mix(mix(mix(grid_seed) ^ cell) ^ replicate.wrapping_mul(0xd6e8_feb8_6659_fd93))
}
