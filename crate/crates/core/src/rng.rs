//! Splittable, seeded random streams.
//!
//! A stream is identified by a master seed and a derivation path of 64-bit
//! indices. The ChaCha8 key of a stream is the SHA-256 digest of
//! `"mcprop-stream-v1" ‖ master_seed ‖ path length ‖ path entries` (all
//! little-endian), so the draws of a substream depend only on its path, never
//! on the order in which sibling streams are created or consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"mcprop-stream-v1";

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    path: Vec<u64>,
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Root stream (empty path) for a master seed.
    pub fn new(master_seed: u64) -> Self {
        Self::at_path(master_seed, Vec::new())
    }

    pub fn at_path(master_seed: u64, path: Vec<u64>) -> Self {
        let mut h = Sha256::new();
        h.update(DOMAIN_TAG);
        h.update(master_seed.to_le_bytes());
        h.update((path.len() as u64).to_le_bytes());
        for p in &path {
            h.update(p.to_le_bytes());
        }
        let key: [u8; 32] = h.finalize().into();
        RngStream {
            master_seed,
            path,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Child stream at `path ++ [index]`. Independent of this stream's
    /// current position.
    pub fn substream(&self, index: u64) -> RngStream {
        let mut path = self.path.clone();
        path.push(index);
        Self::at_path(self.master_seed, path)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
