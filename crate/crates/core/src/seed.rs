//! Independent generator streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived generator is used for. Distinct streams never share draws,
/// so enabling one randomized step does not shift another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Sampling = 3,
    Baseline = 4,
    Data = 5,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, round: u64) -> u64 {
    mix(mix(base ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(stream as u64) ^ round.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

pub fn rng_for(base: u64, stream: Stream, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, round))
}
