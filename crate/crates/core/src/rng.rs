//! Seed derivation. Every stochastic step draws from a ChaCha stream whose
//! seed is a pure function of the global seed and the case identity, so cases
//! can run in any order or in parallel with reproducible results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// `mix(global_seed, case_id)`.
pub fn case_seed(global: u64, case_id: &str) -> u64 {
    splitmix64(global ^ splitmix64(fnv1a(case_id.as_bytes())))
}

/// Derive a sub-seed, e.g. per repetition.
pub fn derive(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn stream(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
