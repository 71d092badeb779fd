//! Named random streams.
//!
//! Every draw in the crate comes from a ChaCha8 generator keyed by the run
//! seed and a stream id, so dataset sampling, weight init, and diffusion
//! noise never share state and parallel tasks can each own a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Well-known stream ids.
pub mod streams {
    pub const DATASET: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SEEDS: u64 = 4;
    pub const EMBED_INIT: u64 = 5;
    pub const EMBED_TRAIN: u64 = 6;
    pub const COMBOS: u64 = 7;
    pub const PROBES: u64 = 8;
    pub const DDPM_NOISE: u64 = 9;
    pub const UNIQUENESS: u64 = 10;
}

pub fn stream(run_seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(stream_id);
    rng
}

/// A per-task stream: one independent generator for each `(purpose, index)`,
/// so results do not depend on how tasks are spread over workers.
pub fn task_stream(run_seed: u64, purpose: u64, index: u64) -> StreamRng {
    stream(run_seed, (purpose << 32) | (index & 0xffff_ffff))
}

pub fn normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
