//! Seeding helpers.
//!
//! All randomness in the crate flows through [`ChaCha8Rng`] streams so
//! that every run is reproducible from a single `u64` seed. Derived
//! seeds (per episode, per pool, per cell) are produced by hashing the
//! base seed together with the derivation labels, which keeps parallel
//! work deterministic regardless of scheduling.

pub use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// FNV-1a over arbitrary bytes; used for seed derivation and for the
/// record checksums in the binary file formats.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent seed from a base seed and a label path.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut buf = Vec::with_capacity(8 + labels.iter().map(|l| l.len() + 1).sum::<usize>());
    buf.extend_from_slice(&base.to_le_bytes());
    for l in labels {
        buf.push(0x1f);
        buf.extend_from_slice(l.as_bytes());
    }
    fnv1a64(&buf)
}

/// Seed plus index, the convention for per-episode streams.
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    base.wrapping_add(episode)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
