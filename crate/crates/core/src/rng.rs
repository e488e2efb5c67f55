//! Seed fan-out. Every random draw in the crate comes from a ChaCha stream
//! derived from one user seed and a fixed per-purpose stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DATA: u64 = 1;
pub const STREAM_MASK: u64 = 2;
pub const STREAM_FOLDS: u64 = 3;
pub const STREAM_IMPUTE_INIT: u64 = 4;
pub const STREAM_SUBSPACE: u64 = 6;
pub const STREAM_MONITOR: u64 = 7;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
