//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit generator. Workers derive
//! their own stream from `(seed, stream id)` so results do not depend on
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids for the training roles. They sit far above any sample index
/// so a training seed never replays a dataset stream.
pub mod roles {
    const BASE: u64 = 1 << 63;
    pub const POSE_INIT: u64 = BASE + 1;
    pub const AUG_INIT: u64 = BASE + 2;
    pub const POSE_PRETRAIN: u64 = BASE + 3;
    pub const AUG_PRETRAIN: u64 = BASE + 4;
    pub const JOINT: u64 = BASE + 5;
}
