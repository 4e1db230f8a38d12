//! Seeded random streams.
//!
//! One master seed fans out into independent ChaCha8 streams, one per
//! consumer, so that changing how often one component draws never shifts
//! the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RngStream {
    Graph = 1,
    Node = 2,
    Model = 3,
    Score = 4,
    Data = 5,
}

pub fn stream_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// The four streams consumed by one online run.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub graph: ChaCha8Rng,
    pub node: ChaCha8Rng,
    pub model: ChaCha8Rng,
    pub score: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            graph: stream_rng(seed, RngStream::Graph),
            node: stream_rng(seed, RngStream::Node),
            model: stream_rng(seed, RngStream::Model),
            score: stream_rng(seed, RngStream::Score),
        }
    }
}
