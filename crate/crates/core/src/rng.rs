//! Seeded, portable random streams. ChaCha8 is pinned as the generator so
//! permutations and weight draws reproduce bit-for-bit on every platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for (seed, stream). Stream 0 is reserved for weight
/// initialization; stream 1 + epoch drives that epoch's shuffle.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    // fixed tail distinguishes this keying scheme from a bare seed
    key[16..24].copy_from_slice(&0x9E37_79B9_7F4A_7C15_u64.to_le_bytes());
    key[24..32].copy_from_slice(&0x85EB_CA6B_27D4_EB4F_u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
