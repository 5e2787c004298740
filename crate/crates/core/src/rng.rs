//! Per-trial random streams.
//!
//! Every Monte Carlo trial owns a ChaCha8 stream keyed by the run seed and
//! selected by the trial index through ChaCha's 64-bit stream id. Trial `i`
//! of seed `s` therefore draws the same numbers no matter which worker runs
//! it or in which order, and single-path APIs use stream 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
