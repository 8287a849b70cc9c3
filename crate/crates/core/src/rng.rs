//! Per-item random streams.
//!
//! Every randomized stage derives its generator from `(seed, item_id)` alone,
//! so results never depend on scheduling or worker count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    item_id: String,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, item_id: impl Into<String>) -> Self {
        let item_id = item_id.into();
        let mut hasher = Sha256::new();
        hasher.update(b"groundkit.rng.v1\0");
        hasher.update(seed.to_le_bytes());
        hasher.update(item_id.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            seed,
            item_id,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// A stream for a sub-task of this item, e.g. one grid cell or one stage.
    pub fn derive(&self, label: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.item_id, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
