//! Keyed random streams.
//!
//! Every random draw in a simulation comes from a stream addressed by
//! `(master_seed, purpose, repeat, device, round, draw)`. The key is hashed into a
//! ChaCha seed, so the randomness a device sees in a round does not depend on
//! the order in which devices or rounds are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha12Rng;

/// Named purposes. Distinct labels give disjoint streams by construction.
pub mod purpose {
    pub const INIT: &str = "init";
    pub const TASK: &str = "task";
    pub const DATA: &str = "data";
    pub const POOL: &str = "pool";
    pub const HOLDOUT: &str = "holdout";
    pub const CHANNEL: &str = "channel";
    pub const NOISE: &str = "noise";
    pub const RESAMPLE: &str = "resample";
    pub const PROBE: &str = "probe";
    pub const SELFTEST: &str = "selftest";
}

/// Full address of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    pub seed: u64,
    pub purpose: &'static str,
    pub repeat: u64,
    pub device: u64,
    pub round: u64,
    /// Alternate realization index; 0 is the primary run.
    pub draw: u64,
}

impl StreamId {
    pub fn new(seed: u64, purpose: &'static str) -> Self {
        Self {
            seed,
            purpose,
            repeat: 0,
            device: 0,
            round: 0,
            draw: 0,
        }
    }

    pub fn repeat(mut self, repeat: u64) -> Self {
        self.repeat = repeat;
        self
    }

    pub fn device(mut self, device: u64) -> Self {
        self.device = device;
        self
    }

    pub fn round(mut self, round: u64) -> Self {
        self.round = round;
        self
    }

    pub fn draw(mut self, draw: u64) -> Self {
        self.draw = draw;
        self
    }

    pub fn rng(&self) -> StreamRng {
        let mut hasher = Sha256::new();
        hasher.update(b"airfeel/v1");
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.purpose.len() as u64).to_le_bytes());
        hasher.update(self.purpose.as_bytes());
        hasher.update(self.repeat.to_le_bytes());
        hasher.update(self.device.to_le_bytes());
        hasher.update(self.round.to_le_bytes());
        hasher.update(self.draw.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        StreamRng::from_seed(seed)
    }
}
