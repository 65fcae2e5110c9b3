//! Seed derivation for independent, named random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator used for every stochastic choice in the crate.
pub type StreamRng = ChaCha8Rng;

/// Derives a 64-bit seed from a master seed, a stream label and a list of
/// integer keys. Distinct labels or keys give statistically independent
/// streams; the mapping is stable across platforms and releases.
pub fn derive_seed(master: u64, label: &str, keys: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for k in keys {
        hasher.update(k.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(master: u64, label: &str, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, label, keys))
}
