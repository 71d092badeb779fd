//! Shared fixtures for the benchmarks.

use ddimlab::rng::{self, streams};
use ddimlab::{DatasetSpec, DenoiserConfig, DenoiserNet, NoiseSchedule, PointSet, ScheduleKind, Tensor};

pub const SEED: u64 = 7;

/// An untrained default-architecture denoiser, the default schedule and a
/// two-moons dataset. Timing does not depend on the weights.
pub fn fixture(n: usize) -> (DenoiserNet, NoiseSchedule, PointSet) {
    let net = DenoiserNet::init(2, &DenoiserConfig::default(), SEED).expect("valid default config");
    let schedule = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 1000).expect("valid default schedule");
    let data = DatasetSpec::TwoMoons { n, noise: 0.05 }.generate(SEED).expect("valid dataset");
    (net, schedule, data)
}

/// `rows x cols` standard normal entries.
pub fn normal(rows: usize, cols: usize, stream: u64) -> Tensor {
    Tensor::new(vec![rows, cols], rng::normal_vec(&mut rng::stream(SEED, streams::SEEDS + stream), rows * cols)).expect("length matches shape")
}
