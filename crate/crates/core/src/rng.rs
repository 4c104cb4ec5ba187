//! Seeded random streams.
//!
//! Every consumer derives its generator from a master seed and a stream
//! index, so per-chunk and per-trial randomness does not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for `stream` under `master_seed`.
pub fn stream_rng(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Combine a row and trial index into one stream id.
pub fn stream_id(row: usize, trial: usize) -> u64 {
    ((row as u64) << 32) | (trial as u64 & 0xffff_ffff)
}
