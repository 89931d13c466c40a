//! Seeded, splittable random streams.
//!
//! Every experiment arm derives its generator from `(seed, stream)`. ChaCha is
//! counter based, so distinct stream ids give independent sequences that do not
//! depend on how many values other arms consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

pub fn stream(seed: u64, stream_id: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Named stream ids so that arms of one experiment never collide.
pub mod streams {
    pub const DISC_INIT: u64 = 1;
    pub const GEN_INIT: u64 = 2;
    pub const REAL_BATCH: u64 = 3;
    pub const FAKE_BATCH: u64 = 4;
    pub const HOLDOUT: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const QUADRATURE: u64 = 8;
    pub const CONFIG: u64 = 9;
    pub const HOLDOUT_NOISE: u64 = 10;
    pub const SIMULATION: u64 = 11;
}
