//! Seeded random source shared by initialization, shuffling, sampling and the
//! synthetic generator.

use rand::SeedableRng;

/// xoshiro256++; `seed_from_u64` expands the seed with splitmix64.
pub type Prng = rand_xoshiro::Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Derives an independent child seed, e.g. one per scene or per worker.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the mixed pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
