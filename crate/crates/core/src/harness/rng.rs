//! Counter-based splitting of the root seed into independent streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream identifiers; per-task streams add the task index.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PRETRAIN: u64 = 3;
    pub const FINE_TUNE: u64 = 100;
    pub const EXEMPLARS: u64 = 200;
    pub const COMPRESS: u64 = 300;
    pub const KMEANS: u64 = 400;
    pub const METRIC: u64 = 500;
}

/// Generator for `stream` under `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A derived 64-bit seed for APIs that take a plain seed.
pub fn seed_for(seed: u64, stream: u64) -> u64 {
    rng_for(seed, stream).random()
}
