//! Seed derivation and the portable generator used everywhere.
//!
//! All randomness flows from a single `u64` through [`derive_seed`], which
//! mixes a parent seed with a path of indices (SplitMix64 finalizer applied
//! per component). The harness uses the following paths:
//!
//! | stream                | path                                 |
//! |-----------------------|--------------------------------------|
//! | trial                 | `derive_seed(base, &[sweep, trial])` |
//! | signal                | `derive_seed(trial, &[0])`           |
//! | matrix of channel `j` | `derive_seed(trial, &[1, j])`        |
//! | noise of channel `j`  | `derive_seed(trial, &[2, j])`        |
//! | theory Monte Carlo    | `derive_seed(base, &[3, sweep])`     |
//!
//! Each derived seed initializes a [`ChaCha8Rng`], whose output is specified
//! bit-for-bit and independent of platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, &i| {
        splitmix64(acc ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
