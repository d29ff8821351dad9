//! Reproducible random streams keyed by `(master seed, purpose, trial)`.
//!
//! Each key selects an independent ChaCha8 stream, so trial `i` draws the same
//! numbers no matter which worker runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags keep streams of different experiments disjoint.
pub mod purpose {
    pub const WALK: u64 = 1;
    pub const ENVIRONMENT: u64 = 2;
    pub const SPINE: u64 = 3;
    pub const BINOMIAL: u64 = 4;
    pub const IMPORTANCE: u64 = 5;
    pub const TAIL: u64 = 6;
}

pub fn stream(master: u64, purpose: u64, trial: u64) -> Stream {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(trial);
    rng
}
