//! Seed derivation. Every randomized step owns a ChaCha stream whose seed is a
//! pure function of the run seed and the step's coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of coordinates into one 64-bit seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng_from(base: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags so that different consumers of the same run seed never collide.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const ROLES: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SELECT: u64 = 6;
    pub const CLIENT: u64 = 7;
}
