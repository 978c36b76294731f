//! Named random streams derived from a single run seed.
//!
//! Each component draws from its own ChaCha stream so that toggling one
//! component (for example disabling imputation) leaves every other stream
//! untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Gating,
    Imputation,
    Sampling,
    Env,
    Init,
    Dropout,
    Teacher,
    Eval,
    Prototypes,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Gating => 1,
            Stream::Imputation => 2,
            Stream::Sampling => 3,
            Stream::Env => 4,
            Stream::Init => 5,
            Stream::Dropout => 6,
            Stream::Teacher => 7,
            Stream::Eval => 8,
            Stream::Prototypes => 9,
        }
    }
}

pub fn stream(seed: u64, stream: Stream) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// A stream further split by an index, e.g. one prototype bank per index.
pub fn indexed_stream(seed: u64, stream: Stream, index: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.id());
    rng
}
