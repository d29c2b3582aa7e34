//! Deterministic random streams. A single master seed fans out to one
//! independent generator per realization, so results cannot depend on how
//! realizations are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer: a bijective scramble with good avalanche, standard
/// for turning structured integers into seed material.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for realization `index` under `master`. Distinct indices give
/// streams with unrelated seeds even when masters are small consecutive
/// integers, which is how users pick them.
pub fn stream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    ))
}
