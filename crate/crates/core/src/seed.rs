//! Deterministic seeding.
//!
//! Every stochastic step draws from a ChaCha stream keyed by `(seed, stream)`,
//! so results do not depend on thread scheduling. A master seed is expanded
//! into named sub-seeds with a keyed SHA-256 so that changing, say, the
//! k-means seed leaves data generation and initialization untouched.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Named purposes for derived seeds.
pub const SUBSEED_NAMES: [&str; 5] = ["data", "init", "shuffle", "eval", "kmeans"];

/// A ChaCha8 generator positioned on an independent stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a named sub-seed from a master seed.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"quanta-subseed\0");
    hasher.update(master.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// The fully expanded seed set recorded in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub master: u64,
    pub derived: BTreeMap<String, u64>,
}

impl SeedSet {
    pub fn new(master: u64) -> Self {
        let derived = SUBSEED_NAMES
            .iter()
            .map(|name| (name.to_string(), derive_seed(master, name)))
            .collect();
        Self { master, derived }
    }

    pub fn get(&self, name: &str) -> u64 {
        self.derived
            .get(name)
            .copied()
            .unwrap_or_else(|| derive_seed(self.master, name))
    }

    pub fn data(&self) -> u64 {
        self.get("data")
    }

    pub fn init(&self) -> u64 {
        self.get("init")
    }

    pub fn shuffle(&self) -> u64 {
        self.get("shuffle")
    }

    pub fn eval(&self) -> u64 {
        self.get("eval")
    }

    pub fn kmeans(&self) -> u64 {
        self.get("kmeans")
    }
}
