//! Seed splitting for independent, reproducible replicates.
//!
//! Replicate `i` of a run seeded with `base_seed` uses a ChaCha8 generator
//! keyed by `base_seed` on stream `i`. Streams are independent, so results
//! do not depend on how replicates are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for replicate `index` of a run seeded with `base_seed`.
pub fn replicate_rng(base_seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// Draws a fresh base seed from a parent generator, for nested splitting.
pub fn child_seed<R: Rng + ?Sized>(parent: &mut R) -> u64 {
    parent.random()
}
