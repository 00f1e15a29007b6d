//! Counter-based random streams.
//!
//! Every consumer of randomness derives its generator from a `(seed, stream)`
//! pair, so results never depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed for a named sub-purpose.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7466_6f72_6765);
    rng.set_stream(purpose);
    rng.next_u64()
}
