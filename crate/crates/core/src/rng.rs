//! Seeded random sources.
//!
//! Every stochastic operation takes an explicit [`SeedRng`]. Independent
//! workers (metric repetitions, sampling chunks) get child generators whose
//! seeds are derived from a root seed and a stable label, so results do not
//! depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed from `root`, a purpose label and an index.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn child(root: u64, label: &str, index: u64) -> SeedRng {
    seeded(derive_seed(root, label, index))
}

pub fn standard_normal(rng: &mut SeedRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut SeedRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
