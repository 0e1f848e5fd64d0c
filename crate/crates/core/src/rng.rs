//! Reproducible random number streams.
//!
//! All sampling in this crate draws from ChaCha12. A master seed plus a
//! stream id select one of 2^64 statistically independent substreams, so
//! parallel Monte Carlo replications can each own a stream derived only from
//! `(seed, replication index)` and reproduce bit-for-bit regardless of
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The generator used throughout the crate.
pub type Stream = ChaCha12Rng;

/// Root stream for a master seed (stream id 0).
pub fn master(seed: u64) -> Stream {
    derive(seed, 0)
}

/// Substream `stream_id` of the given master seed.
///
/// Replication `i` of a Monte Carlo experiment uses `derive(seed, i + 1)`;
/// id 0 is reserved for single-stream use.
pub fn derive(seed: u64, stream_id: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
