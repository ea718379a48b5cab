//! Reproducible random streams for parallel sampling.
//!
//! A run seed and a stream index determine a ChaCha8 keystream: the seed is
//! expanded into the 256-bit key by `SeedableRng::seed_from_u64`, and the
//! stream index selects the 64-bit ChaCha stream id. Path `i` of a Monte
//! Carlo run always draws from stream `i`, so results do not depend on how
//! paths are distributed over worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// The generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
