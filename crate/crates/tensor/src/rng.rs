//! Seedable counter-based random streams.
//!
//! All stochastic operations take an explicit generator. Independent work
//! items (instances in a batch, evaluation examples) draw from their own
//! stream keyed by `(seed, stream id)`, so results do not depend on the
//! order in which a thread pool schedules them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes a label into a seed so that different consumers of one master seed
/// draw unrelated streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
