//! Seeded random streams.
//!
//! Every stochastic component takes an explicit [`SimRng`]. Independent
//! streams for the same seed are obtained through ChaCha's 64-bit stream id,
//! so "attempt 3" or "trial 17" always map to the same bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for `seed`, positioned on substream `stream`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for `seed` on the default substream.
pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
