//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream type used throughout the crate.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of indices into a master seed, e.g. `(master, [floor, run, stream])`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &part| splitmix64(acc ^ splitmix64(part)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream tags used with [`derive_seed`].
pub mod stream {
    pub const ACCESS_POINTS: u64 = 1;
    pub const FINGERPRINT_DB: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const RSSI: u64 = 4;
    pub const IMU: u64 = 5;
    pub const LIDAR: u64 = 6;
    pub const SPLIT: u64 = 7;
}
