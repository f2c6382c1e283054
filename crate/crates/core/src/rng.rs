//! Seed fan-out. A master seed selects a ChaCha key; each consumer draws from
//! its own numbered stream, so parallel workers stay reproducible no matter
//! how they are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers used across the crate.
pub mod stream {
    pub const SUBSAMPLE: u64 = 1;
    pub const SOLVER: u64 = 2;
    pub const DIAGNOSTICS: u64 = 3;
    pub const ARRANGEMENT: u64 = 4;
    /// Trainer restarts use `TRAINER + restart_index`.
    pub const TRAINER: u64 = 1 << 32;
}

pub fn child(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}
