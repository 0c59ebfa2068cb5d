//! Seed derivation for the reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for a tuple of identifiers, e.g. `(seed, frame, iteration)`.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    let seed = parts
        .iter()
        .fold(0x005E_ED0F_u64, |acc, &p| mix64(acc ^ mix64(p)));
    ChaCha8Rng::seed_from_u64(seed)
}
