//! Seeded random streams.
//!
//! All randomness in the crate flows through [`ChaCha8Rng`] instances created
//! here, so results depend only on the seeds passed in.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent stream for one item (a clip id, a split name, ...) so that the
/// draws for an item do not depend on processing order.
pub fn derive(seed: u64, label: &str) -> ChaCha8Rng {
    let mut bytes = alloc::vec::Vec::with_capacity(8 + label.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    seeded(fnv1a(&bytes))
}
