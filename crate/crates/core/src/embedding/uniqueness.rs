//! Do independently trained models send a shared seed to the same place?

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dist2;
use crate::denoiser::{DenoiserConfig, DenoiserNet};
use crate::diffusion::{generate_batch, train, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// One independently trained model: architecture plus the seed used for its
/// initialization and minibatch order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessArm {
    pub net: DenoiserConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub seeds: usize,
    /// Mean distance between the two outputs of the same seed.
    pub d_pair: f64,
    /// Mean distance after randomly re-pairing the outputs.
    pub d_rand: f64,
    pub ratio: f64,
    pub final_losses: Option<(f64, f64)>,
}

/// Outputs of two nets on the same seeds, plus the random re-pairing used
/// as the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedOutputs {
    pub seeds: Tensor,
    pub a: Tensor,
    pub b: Tensor,
    /// Output `i` of `a` is compared with output `perm[i]` of `b`.
    pub perm: Vec<usize>,
}

impl PairedOutputs {
    pub fn report(&self) -> UniquenessReport {
        let n = self.seeds.rows();
        let mean = |pair: &dyn Fn(usize) -> usize| (0..n).map(|i| dist2(self.a.row(i), self.b.row(pair(i))).sqrt()).sum::<f64>() / n as f64;
        let d_pair = mean(&|i| i);
        let d_rand = mean(&|i| self.perm[i]);
        UniquenessReport { seeds: n, d_pair, d_rand, ratio: d_pair / d_rand, final_losses: None }
    }
}

/// Generates from `n` shared standard normal seeds with both nets.
pub fn paired_outputs(a: &DenoiserNet, b: &DenoiserNet, schedule: &NoiseSchedule, n: usize, k: usize, seed: u64, workers: usize) -> Result<PairedOutputs> {
    if n < 2 {
        return Err(Error::invalid("need at least 2 shared seeds"));
    }
    if a.dim != b.dim {
        return Err(Error::shape("uniqueness", format!("{}-d vs {}-d nets", a.dim, b.dim)));
    }
    let mut rng = rng::stream(seed, streams::UNIQUENESS);
    let seeds = Tensor::from_parts(vec![n, a.dim], rng::normal_vec(&mut rng, n * a.dim));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (ya, _) = generate_batch(a, schedule, &seeds, k, workers)?;
    let (yb, _) = generate_batch(b, schedule, &seeds, k, workers)?;
    Ok(PairedOutputs { seeds, a: ya, b: yb, perm })
}

/// Paired against randomly re-paired output distances of two nets.
pub fn compare_nets(a: &DenoiserNet, b: &DenoiserNet, schedule: &NoiseSchedule, n: usize, k: usize, seed: u64, workers: usize) -> Result<UniquenessReport> {
    Ok(paired_outputs(a, b, schedule, n, k, seed, workers)?.report())
}

/// Trains both arms on `data` and compares them with [`compare_nets`].
#[allow(clippy::too_many_arguments)]
pub fn uniqueness_experiment(
    data: &Tensor,
    arm_a: &UniquenessArm,
    arm_b: &UniquenessArm,
    schedule: &NoiseSchedule,
    train_cfg: &TrainConfig,
    n: usize,
    k: usize,
    seed: u64,
    workers: usize,
) -> Result<UniquenessReport> {
    let d = data.cols();
    let fit = |arm: &UniquenessArm| -> Result<(DenoiserNet, f64)> {
        let init = DenoiserNet::init(d, &arm.net, arm.seed)?;
        let (net, report) = train(&init, data, schedule, train_cfg, arm.seed)?;
        Ok((net, report.final_loss))
    };
    let (a, la) = fit(arm_a)?;
    let (b, lb) = fit(arm_b)?;
    let mut report = compare_nets(&a, &b, schedule, n, k, seed, workers)?;
    report.final_losses = Some((la, lb));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::SinusoidalEmbed;
    use crate::schedule::ScheduleKind;

    fn arm(widths: Vec<usize>, seed: u64) -> UniquenessArm {
        UniquenessArm { net: DenoiserConfig { widths, embed: SinusoidalEmbed { width: 4, min_freq: 1.0, max_freq: 10.0 }, ..Default::default() }, seed }
    }

    #[test]
    fn identical_arms_agree_exactly() {
        let data = Tensor::from_rows(&[[0.5, -0.5], [1.0, 0.2], [-0.3, 0.8]]).unwrap();
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 50).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..Default::default() };
        let r = uniqueness_experiment(&data, &arm(vec![6], 1), &arm(vec![6], 1), &s, &cfg, 16, 5, 0, 1).unwrap();
        assert_eq!(r.d_pair, 0.0);
        assert!(r.d_rand > 0.0 && r.ratio == 0.0);
        let (la, lb) = r.final_losses.unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn untrained_nets_report_a_finite_ratio() {
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 50).unwrap();
        let a = DenoiserNet::init(2, &arm(vec![6], 1).net, 1).unwrap();
        let b = DenoiserNet::init(2, &arm(vec![5, 5], 2).net, 2).unwrap();
        let r = compare_nets(&a, &b, &s, 64, 5, 0, 1).unwrap();
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
        assert!(compare_nets(&a, &b, &s, 1, 5, 0, 1).is_err());
    }
}
