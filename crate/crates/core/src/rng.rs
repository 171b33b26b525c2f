//! Deterministic RNG stream derivation.
//!
//! Every stochastic stage derives its own ChaCha stream from the global seed
//! plus a purpose label and indices (epoch, record row, restart, ...). Streams
//! are therefore independent of worker count and iteration order, which is
//! what makes multi-worker runs reproduce the single-worker results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from `(seed, label, indices)`.
pub fn derive_rng(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([label.len() as u8]);
    hasher.update(label.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Deterministic Fisher-Yates shuffle of `0..n` driven by a derived stream.
pub fn shuffled_indices(seed: u64, label: &str, indices: &[u64], n: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = derive_rng(seed, label, indices);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}
