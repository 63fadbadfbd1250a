//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(seed, stream)`, so results are reproducible across platforms and
//! independent of call order between streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used across the crate. Distinct purposes never share a stream.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE_BASE: u64 = 1 << 20;
    pub const PERMUTATION: u64 = 2;
    pub const LAYER_ORDER: u64 = 3;
    pub const MINIBATCH: u64 = 4;
    pub const DATA: u64 = 5;
}

pub type Rng = ChaCha8Rng;

/// RNG for `(seed, stream)`.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    use rand::Rng as _;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
