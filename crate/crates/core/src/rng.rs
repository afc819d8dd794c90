//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded from
//! a `u64` and a stream id, so results do not depend on the `rand` version's
//! choice of default generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream ids used by the pipeline for a given seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 0,
    Centers = 1,
    Init = 2,
    Corruption = 3,
    Shuffle = 4,
    Dropout = 5,
    Synth = 6,
}

pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
