//! Seeded random streams.
//!
//! A [`RandomStream`] is just a 64-bit seed. Every consumer asks for a named
//! [`Substream`] and gets a fresh ChaCha generator whose key is a hash of the
//! seed and the substream name, so draws for one purpose never shift draws
//! for another. Child streams (per sample, per sweep cell, ...) are derived
//! the same way from a label and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Purposes that own an independent generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Substream {
    Data,
    SamplerInit,
    DistorterInit,
    NoiseDraw,
    PairPick,
    AttackerInit,
    UserInit,
}

impl Substream {
    pub const ALL: [Substream; 7] = [
        Substream::Data,
        Substream::SamplerInit,
        Substream::DistorterInit,
        Substream::NoiseDraw,
        Substream::PairPick,
        Substream::AttackerInit,
        Substream::UserInit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Substream::Data => "data",
            Substream::SamplerInit => "sampler-init",
            Substream::DistorterInit => "distorter-init",
            Substream::NoiseDraw => "noise-draw",
            Substream::PairPick => "pair-pick",
            Substream::AttackerInit => "attacker-init",
            Substream::UserInit => "user-init",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    seed: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator for `which`. Calling this twice yields two
    /// generators producing the same sequence.
    pub fn substream(&self, which: Substream) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(which.name().as_bytes(), 0))
    }

    /// A child stream identified by `label` and `index`.
    pub fn derive(&self, label: &str, index: u64) -> RandomStream {
        let key = self.key(label.as_bytes(), index);
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&key[..8]);
        RandomStream::new(u64::from_le_bytes(seed))
    }

    fn key(&self, label: &[u8], index: u64) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label);
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        key
    }
}
