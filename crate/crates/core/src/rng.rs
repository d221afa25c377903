//! Named random substreams derived from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every consumer of randomness draws from its own stream so that, for
/// example, a policy's exploration never shifts the task sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Placement,
    Tasks,
    Fading,
    Mobility,
    Policy,
    Init,
    Replay,
    Calibration,
    Eval,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Placement => 1,
            Stream::Tasks => 2,
            Stream::Fading => 3,
            Stream::Mobility => 4,
            Stream::Policy => 5,
            Stream::Init => 6,
            Stream::Replay => 7,
            Stream::Calibration => 8,
            Stream::Eval => 9,
        }
    }
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    substream_indexed(seed, stream, 0)
}

/// Per-entity variant, e.g. one exploration stream per agent.
pub fn substream_indexed(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.id() << 32) | (index & 0xffff_ffff));
    rng
}

/// Mix a seed with an index into a new seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
