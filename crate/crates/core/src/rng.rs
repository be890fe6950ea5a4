//! Named random sub-streams derived from a single run seed.
//!
//! Every random decision in a run (data generation, parameter init,
//! augmentation, shuffling, splits) draws from its own stream, keyed by the
//! run seed plus a stream tag and up to three indices. Resuming a run at an
//! epoch boundary therefore needs nothing beyond the seed and the epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Augment = 3,
    Shuffle = 4,
    Split = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed for `(seed, stream, indices)`.
pub fn derive_seed(seed: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &i in indices {
        h = splitmix(h ^ splitmix(i.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, indices))
}
