//! Stable seed derivation.
//!
//! Seeds are derived by hashing their inputs with SHA-256 so that derived
//! streams do not depend on iteration order, thread scheduling or the
//! standard library's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Incremental builder for a derived 64-bit seed.
#[derive(Clone)]
pub struct SeedHasher(Sha256);

impl SeedHasher {
    pub fn new(domain: &str) -> Self {
        let mut h = Sha256::new();
        h.update((domain.len() as u64).to_le_bytes());
        h.update(domain.as_bytes());
        SeedHasher(h)
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn str(mut self, s: &str) -> Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn finish(self) -> u64 {
        let digest = self.0.finalize();
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(out)
    }
}

/// Deterministic generator used everywhere randomness is needed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_input_sensitive() {
        let a = SeedHasher::new("x").u64(1).str("b7").finish();
        let b = SeedHasher::new("x").u64(1).str("b7").finish();
        let c = SeedHasher::new("x").u64(2).str("b7").finish();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // length prefixes keep ("ab","c") and ("a","bc") apart
        let d = SeedHasher::new("x").str("ab").str("c").finish();
        let e = SeedHasher::new("x").str("a").str("bc").finish();
        assert_ne!(d, e);
    }
}
