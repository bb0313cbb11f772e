use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// ChaCha8 generator for one independent stream of a seeded experiment.
///
/// Work item `stream` always sees the same numbers regardless of how the
/// items are scheduled across threads.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for a derived sub-experiment (calibration vs. test sets, etc).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
