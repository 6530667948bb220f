//! Seed fan-out. Every random draw in the crate comes from a generator
//! derived here from the single run seed, a component label and an index
//! (usually the training step), so runs are reproducible and resumable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_rng(seed: u64, component: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(component.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// A derived `u64` seed for APIs that take one.
pub fn derive_seed(seed: u64, component: &str, index: u64) -> u64 {
    use rand::RngCore;
    derive_rng(seed, component, index).next_u64()
}
