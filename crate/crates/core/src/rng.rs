//! Keyed random draws.
//!
//! Each draw owns a ChaCha8 stream whose 256-bit key is the index tuple
//! `(seed, chip, block, slot)` laid out verbatim, so distinct tuples never
//! share a stream and a value never depends on the order draws are made in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Block index reserved for per-chip draws.
pub const CHIP_SCOPE: u64 = u64::MAX;

/// Slots used under [`CHIP_SCOPE`].
pub const SLOT_DIE: u64 = 0;
pub const SLOT_LEAKAGE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub chip: u64,
    pub block: u64,
    pub slot: u64,
}

impl StreamKey {
    pub fn chip_level(seed: u64, chip: u64, slot: u64) -> Self {
        Self {
            seed,
            chip,
            block: CHIP_SCOPE,
            slot,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.chip.to_le_bytes());
        key[16..24].copy_from_slice(&self.block.to_le_bytes());
        key[24..32].copy_from_slice(&self.slot.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// One standard-normal variate.
    pub fn normal(&self) -> f64 {
        StandardNormal.sample(&mut self.rng())
    }
}
