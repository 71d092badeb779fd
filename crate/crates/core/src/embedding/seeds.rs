//! Seed clouds found by gradient descent through the sampler, and the
//! convexity experiments run on them.

use std::io::Write;

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dist2;
use crate::autodiff::Tape;
use crate::denoiser::DenoiserNet;
use crate::diffusion::{ddim_chain, generate_batch, run_parallel};
use crate::error::{Error, Result};
use crate::io;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{self, streams, StreamRng};
use crate::schedule::NoiseSchedule;
use crate::tensor::{matmul, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CloudSource {
    Gradient,
    Grid { tol: f64 },
}

/// Seeds that (approximately) generate `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedCloud {
    pub target: Vec<f64>,
    /// `m x d`
    pub seeds: Tensor,
    pub initial_errors: Vec<f64>,
    /// Squared distance between `generate(seed)` and the target.
    pub recon_errors: Vec<f64>,
    /// Seeds whose optimization hit a non-finite value and was stopped.
    pub failed: Vec<bool>,
    pub source: CloudSource,
    pub steps: usize,
    pub lr: f64,
    pub k: usize,
}

impl SeedCloud {
    pub fn len(&self) -> usize {
        self.recon_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn median_error(&self) -> f64 {
        median(&self.recon_errors)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.target.len();
        let mut header = vec!["seed".to_string()];
        header.extend((0..d).map(|j| format!("z{j}")));
        header.extend(["initial_error", "error", "failed"].map(String::from));
        let rows = (0..self.len()).map(|i| {
            let mut rec = vec![i.to_string()];
            rec.extend(self.seeds.row(i).iter().map(|&v| io::fmt_f64(v)));
            rec.push(io::fmt_f64(self.initial_errors[i]));
            rec.push(io::fmt_f64(self.recon_errors[i]));
            rec.push(u8::from(self.failed[i]).to_string());
            rec
        });
        io::write_records(out, &header, rows)
    }
}

/// Median of the finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdConfig {
    /// Number of seeds `m`.
    pub seeds: usize,
    pub steps: usize,
    pub lr: f64,
    /// Sampler steps unrolled for backpropagation.
    pub k: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig { seeds: 64, steps: 2000, lr: 0.02, k: 25 }
    }
}

/// Squared distance of each seed's output to `target`.
pub fn recon_errors(net: &DenoiserNet, schedule: &NoiseSchedule, seeds: &Tensor, target: &[f64], k: usize) -> Result<Vec<f64>> {
    let (out, _) = generate_batch(net, schedule, seeds, k, 1)?;
    Ok((0..out.rows()).map(|i| dist2(out.row(i), target)).collect())
}

struct Optimized {
    seeds: Tensor,
    initial: Vec<f64>,
    best: Vec<f64>,
    failed: Vec<bool>,
}

/// Adam on `sum_i |generate(z_i) - y_i|^2`. Adam acts elementwise, so every
/// row is optimized independently of the others. Each row keeps its best
/// iterate, and rows that turn non-finite are frozen there.
fn optimize(net: &DenoiserNet, schedule: &NoiseSchedule, init: &Tensor, targets: &Tensor, steps: usize, lr: f64, k: usize) -> Result<Optimized> {
    let (m, d) = init.dims2("embed_gd")?;
    if targets.shape() != init.shape() || d != net.dim {
        return Err(Error::shape("embed_gd", format!("seeds {:?}, targets {:?}, {}-d net", init.shape(), targets.shape(), net.dim)));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    schedule.subsequence(k)?;
    let mut z = vec![init.clone()];
    let mut best = init.clone();
    let mut best_err = vec![f64::INFINITY; m];
    let mut initial = vec![f64::NAN; m];
    let mut failed = vec![false; m];
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), &z);

    for step in 0..=steps {
        let tape = Tape::new();
        let params = net.mlp.bind(&tape);
        let zv = tape.param(z[0].clone());
        let out = ddim_chain(&tape, net, &params, &zv, schedule, k, |_, _| {})?;
        {
            let values = out.value();
            for i in 0..m {
                let e = dist2(values.row(i), targets.row(i));
                if step == 0 {
                    initial[i] = e;
                }
                if failed[i] {
                    continue;
                }
                if !e.is_finite() {
                    failed[i] = true;
                } else if e < best_err[i] {
                    best_err[i] = e;
                    best.row_mut(i).copy_from_slice(z[0].row(i));
                }
            }
        }
        if step == steps || lr == 0.0 || failed.iter().all(|&f| f) {
            break;
        }
        let loss = out.squared_error(tape.constant(targets.clone()))?;
        let mut grad = tape.backward(loss)?.take(zv);
        drop(tape);
        for i in 0..m {
            if !failed[i] && !grad.row(i).iter().all(|g| g.is_finite()) {
                failed[i] = true;
            }
            if failed[i] {
                grad.row_mut(i).fill(0.0);
            }
        }
        adam.step(&mut z, &[grad])?;
        for i in (0..m).filter(|&i| failed[i]) {
            z[0].row_mut(i).copy_from_slice(best.row(i));
        }
    }
    for e in best_err.iter_mut().filter(|e| e.is_infinite()) {
        *e = f64::NAN;
    }
    Ok(Optimized { seeds: best, initial, best: best_err, failed })
}

fn normal_seeds(rng: &mut StreamRng, m: usize, d: usize) -> Tensor {
    Tensor::from_parts(vec![m, d], rng::normal_vec(rng, m * d))
}

/// Optimizes the given starting seeds towards one target.
pub fn embed_gd_from(net: &DenoiserNet, schedule: &NoiseSchedule, target: &[f64], init: &Tensor, steps: usize, lr: f64, k: usize) -> Result<SeedCloud> {
    let targets = Tensor::tile_row(target, init.rows());
    let opt = optimize(net, schedule, init, &targets, steps, lr, k)?;
    Ok(SeedCloud {
        target: target.to_vec(),
        seeds: opt.seeds,
        initial_errors: opt.initial,
        recon_errors: opt.best,
        failed: opt.failed,
        source: CloudSource::Gradient,
        steps,
        lr,
        k,
    })
}

/// `cfg.seeds` standard normal seeds optimized towards `target`.
pub fn embed_gd(net: &DenoiserNet, schedule: &NoiseSchedule, target: &[f64], cfg: &GdConfig, seed: u64) -> Result<SeedCloud> {
    if cfg.seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let init = normal_seeds(&mut rng::stream(seed, streams::SEEDS), cfg.seeds, target.len());
    embed_gd_from(net, schedule, target, &init, cfg.steps, cfg.lr, cfg.k)
}

/// One cloud per target row. Target `i` draws its seeds from its own stream,
/// so the result does not depend on `workers`.
pub fn embed_gd_targets(net: &DenoiserNet, schedule: &NoiseSchedule, targets: &Tensor, cfg: &GdConfig, run_seed: u64, workers: usize) -> Result<Vec<SeedCloud>> {
    let (n, d) = targets.dims2("embed_gd_targets")?;
    if cfg.seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let task = |i: usize| {
        let init = normal_seeds(&mut rng::task_stream(run_seed, streams::SEEDS, i as u64), cfg.seeds, d);
        embed_gd_from(net, schedule, targets.row(i), &init, cfg.steps, cfg.lr, cfg.k)
    };
    if workers <= 1 {
        return (0..n).map(task).collect();
    }
    run_parallel(workers, || (0..n).into_par_iter().map(task).collect())
}

/// Result of a gradient refinement started from given seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineResult {
    pub seeds: Tensor,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub failed: Vec<bool>,
}

/// Refines each seed row towards the matching target row.
pub fn refine_seed_gd(net: &DenoiserNet, schedule: &NoiseSchedule, seeds: &Tensor, targets: &Tensor, steps: usize, lr: f64, k: usize) -> Result<RefineResult> {
    let opt = optimize(net, schedule, seeds, targets, steps, lr, k)?;
    Ok(RefineResult { seeds: opt.seeds, before: opt.initial, after: opt.best, failed: opt.failed })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComboResult {
    /// `count x m`, each row summing to one.
    pub weights: Tensor,
    pub seeds: Tensor,
    pub errors: Vec<f64>,
}

impl ComboResult {
    /// Evaluates given weight rows on a cloud.
    pub fn evaluate(net: &DenoiserNet, schedule: &NoiseSchedule, cloud: &SeedCloud, weights: Tensor) -> Result<Self> {
        let seeds = matmul(&weights, &cloud.seeds)?;
        let errors = recon_errors(net, schedule, &seeds, &cloud.target, cloud.k)?;
        Ok(ComboResult { weights, seeds, errors })
    }
}

/// Random affine combinations of the cloud's seeds. By default the weights
/// are Dirichlet(1, ..., 1), i.e. convex. With `signed`, each row is the
/// difference of two Dirichlet draws plus `1/m`, which still sums to one
/// but can leave the convex hull.
pub fn convex_combos(net: &DenoiserNet, schedule: &NoiseSchedule, cloud: &SeedCloud, count: usize, signed: bool, seed: u64) -> Result<ComboResult> {
    let m = cloud.len();
    if m < 2 {
        return Err(Error::invalid(format!("combinations need at least 2 seeds, cloud has {m}")));
    }
    let mut rng = rng::stream(seed, streams::COMBOS);
    let dirichlet = |rng: &mut StreamRng| -> Vec<f64> {
        let draws: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        draws.into_iter().map(|v| v / total).collect()
    };
    let mut data = Vec::with_capacity(count * m);
    for _ in 0..count {
        let w = dirichlet(&mut rng);
        if signed {
            let v = dirichlet(&mut rng);
            data.extend(w.iter().zip(&v).map(|(a, b)| a - b + 1.0 / m as f64));
        } else {
            data.extend(w);
        }
    }
    ComboResult::evaluate(net, schedule, cloud, Tensor::from_parts(vec![count, m], data))
}

/// Error of `generate(mean of the first k seeds)` for each `k` in `ks`.
pub fn progressive_mean(net: &DenoiserNet, schedule: &NoiseSchedule, cloud: &SeedCloud, ks: &[usize]) -> Result<Vec<f64>> {
    let m = cloud.len();
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[1] <= w[0]) || ks[ks.len() - 1] > m {
        return Err(Error::invalid(format!("ks must be strictly ascending within 1..={m}")));
    }
    let d = cloud.target.len();
    let mut means = Vec::with_capacity(ks.len() * d);
    let mut acc = vec![0.0; d];
    let mut next = 0;
    for i in 0..m {
        for (a, v) in acc.iter_mut().zip(cloud.seeds.row(i)) {
            *a += v;
        }
        if next < ks.len() && ks[next] == i + 1 {
            means.extend(acc.iter().map(|a| a / (i + 1) as f64));
            next += 1;
        }
    }
    recon_errors(net, schedule, &Tensor::from_parts(vec![ks.len(), d], means), &cloud.target, cloud.k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserConfig, SinusoidalEmbed};
    use crate::schedule::ScheduleKind;

    fn setup() -> (DenoiserNet, NoiseSchedule) {
        let cfg = DenoiserConfig { widths: vec![16, 16], embed: SinusoidalEmbed { width: 8, min_freq: 1.0, max_freq: 50.0 }, ..Default::default() };
        (DenoiserNet::init(2, &cfg, 5).unwrap(), NoiseSchedule::new(ScheduleKind::continuous_cosine(), 100).unwrap())
    }

    fn cfg(steps: usize, lr: f64) -> GdConfig {
        GdConfig { seeds: 6, steps, lr, k: 5 }
    }

    #[test]
    fn zero_steps_and_zero_lr_keep_initial_seeds() {
        let (net, s) = setup();
        let target = [0.5, -0.5];
        let init = normal_seeds(&mut rng::stream(9, streams::SEEDS), 6, 2);
        for c in [cfg(0, 0.02), cfg(20, 0.0)] {
            let cloud = embed_gd(&net, &s, &target, &c, 9).unwrap();
            assert_eq!(cloud.seeds, init);
            assert_eq!(cloud.recon_errors, cloud.initial_errors);
            assert_eq!(cloud.recon_errors, recon_errors(&net, &s, &init, &target, 5).unwrap());
        }
    }

    #[test]
    fn descent_is_monotone_reproducible_and_leaves_net_alone() {
        let (net, s) = setup();
        let before = net.mlp.fingerprint();
        let target = [0.5, -0.5];
        let cloud = embed_gd(&net, &s, &target, &cfg(60, 0.05), 3).unwrap();
        assert_eq!(net.mlp.fingerprint(), before);
        assert!(cloud.recon_errors.iter().zip(&cloud.initial_errors).all(|(a, b)| a <= b));
        assert!(cloud.median_error() < median(&cloud.initial_errors));
        let again = recon_errors(&net, &s, &cloud.seeds, &target, 5).unwrap();
        for (a, b) in again.iter().zip(&cloud.recon_errors) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(cloud, embed_gd(&net, &s, &target, &cfg(60, 0.05), 3).unwrap());
    }

    #[test]
    fn non_finite_seed_is_flagged_without_spoiling_the_batch() {
        let (net, s) = setup();
        let init = Tensor::from_parts(vec![2, 2], vec![f64::NAN, 0.0, 0.3, 0.1]);
        let cloud = embed_gd_from(&net, &s, &[0.0, 0.0], &init, 10, 0.05, 5).unwrap();
        assert_eq!(cloud.failed, vec![true, false]);
        assert!(cloud.recon_errors[0].is_nan());
        assert!(cloud.recon_errors[1].is_finite() && cloud.recon_errors[1] <= cloud.initial_errors[1]);
    }

    #[test]
    fn targets_are_independent_of_workers() {
        let (net, s) = setup();
        let targets = Tensor::from_rows(&[[0.5, -0.5], [0.0, 1.0], [-1.0, 0.2]]).unwrap();
        let serial = embed_gd_targets(&net, &s, &targets, &cfg(5, 0.05), 2, 1).unwrap();
        let parallel = embed_gd_targets(&net, &s, &targets, &cfg(5, 0.05), 2, 3).unwrap();
        assert_eq!(serial, parallel);
        assert_ne!(serial[0].seeds, serial[1].seeds);
    }

    #[test]
    fn combination_examples() {
        let (net, s) = setup();
        let cloud = embed_gd(&net, &s, &[0.5, -0.5], &cfg(3, 0.05), 4).unwrap();
        let one_hot = Tensor::from_rows(&[[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]]).unwrap();
        let r = ComboResult::evaluate(&net, &s, &cloud, one_hot).unwrap();
        assert_eq!(r.errors[0], cloud.recon_errors[2]);
        let mean = ComboResult::evaluate(&net, &s, &cloud, Tensor::full(vec![1, 6], 1.0 / 6.0)).unwrap();
        for j in 0..2 {
            let m: f64 = (0..6).map(|i| cloud.seeds.at(i, j)).sum::<f64>() / 6.0;
            assert!((mean.seeds.at(0, j) - m).abs() < 1e-12);
        }
        for signed in [false, true] {
            let c = convex_combos(&net, &s, &cloud, 10, signed, 1).unwrap();
            for i in 0..10 {
                let row = c.weights.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            if !signed {
                assert!(c.weights.data().iter().all(|&w| w >= 0.0));
            }
        }
        let signed = convex_combos(&net, &s, &cloud, 50, true, 1).unwrap();
        assert!(signed.weights.data().iter().any(|&w| w < 0.0));
        let single = SeedCloud { recon_errors: vec![0.0], ..cloud.clone() };
        assert!(convex_combos(&net, &s, &single, 3, false, 1).is_err());
    }

    #[test]
    fn progressive_mean_examples() {
        let (net, s) = setup();
        let cloud = embed_gd(&net, &s, &[0.5, -0.5], &cfg(3, 0.05), 4).unwrap();
        let curve = progressive_mean(&net, &s, &cloud, &[1, 2, 6]).unwrap();
        assert_eq!(curve[0], cloud.recon_errors[0]);
        // Dyadic coordinates keep the running means exact.
        let same = SeedCloud { seeds: Tensor::tile_row(&[0.5, -0.25], 6), ..cloud.clone() };
        let flat = progressive_mean(&net, &s, &same, &[1, 3, 6]).unwrap();
        assert!(flat.iter().all(|&e| e == flat[0]));
        assert!(progressive_mean(&net, &s, &cloud, &[2, 1]).is_err());
        assert!(progressive_mean(&net, &s, &cloud, &[7]).is_err());
    }

    #[test]
    fn refinement_never_increases_error() {
        let (net, s) = setup();
        let seeds = Tensor::from_rows(&[[0.1, 0.2], [1.0, -1.0]]).unwrap();
        let targets = Tensor::from_rows(&[[0.5, -0.5], [0.0, 0.3]]).unwrap();
        let none = refine_seed_gd(&net, &s, &seeds, &targets, 0, 0.05, 5).unwrap();
        assert_eq!(none.before, none.after);
        let r = refine_seed_gd(&net, &s, &seeds, &targets, 30, 0.05, 5).unwrap();
        assert!(r.after.iter().zip(&r.before).all(|(a, b)| a <= b));
        let again = refine_seed_gd(&net, &s, &r.seeds, &targets, 30, 0.05, 5).unwrap();
        assert!(again.after.iter().zip(&r.after).all(|(a, b)| a <= b));
    }

    #[test]
    fn median_handles_parity_and_non_finite() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, f64::NAN, 2.0, 3.0]), 2.5);
        assert!(median(&[f64::NAN]).is_nan());
    }
}
