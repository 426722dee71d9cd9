//! Reproducible random streams.
//!
//! Every trajectory draws from its own ChaCha8 stream keyed by the pair
//! `(master_seed, stream_id)`. ChaCha is a counter-based generator, so a
//! stream can be opened on any worker without coordination and two runs with
//! the same key produce the same bits regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A generator bound to one `(master_seed, stream_id)` key.
pub type StreamRng = ChaCha8Rng;

/// Opens the stream for `stream_id` under `master_seed`.
pub fn stream(master_seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}

/// Uniform draw on `[0, 1)`.
#[inline]
pub fn uniform(rng: &mut StreamRng) -> f64 {
    rng.random::<f64>()
}
