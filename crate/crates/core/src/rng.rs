//! Seed plumbing. Every random stream in a run is derived from the run seed
//! and a fixed stream tag, so changing one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags used by the pruning harness.
pub mod stream {
    pub const DATA: u64 = 0x01;
    pub const INIT: u64 = 0x02;
    pub const TRAIN: u64 = 0x03;
    pub const BATCH: u64 = 0x04;
    pub const NOISE: u64 = 0x05;
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
