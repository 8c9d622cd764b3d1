//! Seed derivation.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by the master
//! seed and a path such as `(Purpose::Attack, round, client, batch, sample)`.
//! Path components are folded in with the SplitMix64 finalizer, so streams for
//! different clients or samples never depend on how many other streams exist
//! or on the order in which they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Partition = 2,
    Participation = 3,
    Shuffle = 4,
    Attack = 5,
    Eval = 6,
    Data = 7,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `seed`; order-sensitive.
pub fn derive_seed(seed: u64, purpose: Purpose, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, path))
}
