//! Forward diffusion, denoiser training, and the DDIM / DDPM reverse
//! processes.
//!
//! The reverse update used everywhere is the general non-Markovian step
//!
//! ```text
//! x_prev = sqrt(a_prev) * x0_hat + sqrt(1 - a_prev - sigma^2) * eps_hat + sigma * z
//! x0_hat = (x_t - sqrt(1 - a_t) * eps_hat) / sqrt(a_t)
//! ```
//!
//! DDIM is `sigma = 0`, which makes generation a deterministic function of
//! the seed. DDPM ancestral sampling uses the posterior standard deviation.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Ops, Tape};
use crate::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{self, streams};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// `x_t = sqrt(alpha) * x0 + sqrt(1 - alpha) * eps`, one alpha per row.
pub fn diffuse_alphas(x0: &Tensor, alphas: &[f64], eps: &Tensor) -> Result<Tensor> {
    if x0.shape() != eps.shape() || x0.rank() != 2 || alphas.len() != x0.rows() {
        return Err(Error::shape(
            "diffuse",
            format!("x0 {:?}, eps {:?}, {} alphas", x0.shape(), eps.shape(), alphas.len()),
        ));
    }
    let d = x0.cols();
    let mut out = x0.clone();
    for (i, &a) in alphas.iter().enumerate() {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("alpha {a} outside [0, 1]")));
        }
        let (s, n) = (a.sqrt(), (1.0 - a).sqrt());
        for (o, e) in out.row_mut(i).iter_mut().zip(&eps.data()[i * d..(i + 1) * d]) {
            *o = s * *o + n * e;
        }
    }
    Ok(out)
}

/// Forward diffusion at integer steps, one per row.
pub fn diffuse(x0: &Tensor, schedule: &NoiseSchedule, t: &[usize], eps: &Tensor) -> Result<Tensor> {
    let alphas = t.iter().map(|&t| schedule.alpha(t)).collect::<Result<Vec<f64>>>()?;
    diffuse_alphas(x0, &alphas, eps)
}

/// The one-shot clean estimate from a noise prediction.
pub fn x0_from_eps<G: Ops>(g: G, x_t: &G::Value, eps: &G::Value, alpha: f64) -> Result<G::Value> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("cannot denoise at alpha = {alpha}; alpha must be in (0, 1]")));
    }
    let s = alpha.sqrt();
    g.lincomb(1.0 / s, x_t, -(1.0 - alpha).sqrt() / s, eps)
}

/// The deterministic update from `alpha` to `alpha_prev` given a noise
/// prediction.
pub fn ddim_update<G: Ops>(g: G, x_t: &G::Value, eps: &G::Value, alpha: f64, alpha_prev: f64) -> Result<G::Value> {
    check_ddim_order(alpha, alpha_prev)?;
    let x0 = x0_from_eps(g, x_t, eps, alpha)?;
    g.lincomb(alpha_prev.sqrt(), &x0, (1.0 - alpha_prev).sqrt(), eps)
}

fn check_ddim_order(alpha: f64, alpha_prev: f64) -> Result<()> {
    if !(0.0 < alpha && alpha <= alpha_prev && alpha_prev <= 1.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "DDIM step needs 0 < alpha_t <= alpha_prev <= 1 and alpha_t < 1, got {alpha} -> {alpha_prev}"
        )));
    }
    Ok(())
}

/// `f(x_t, alpha_t)`: the network's estimate of the clean point.
pub fn estimate_x0(net: &DenoiserNet, x_t: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("estimate_x0 at alpha = {alpha}: division by zero")));
    }
    let eps = net.predict_eps(x_t, &vec![alpha; x_t.rows()])?;
    x0_from_eps(Eager, x_t, &eps, alpha)
}

pub fn ddim_step(net: &DenoiserNet, x_t: &Tensor, alpha: f64, alpha_prev: f64) -> Result<Tensor> {
    check_ddim_order(alpha, alpha_prev)?;
    let eps = net.predict_eps(x_t, &vec![alpha; x_t.rows()])?;
    ddim_update(Eager, x_t, &eps, alpha, alpha_prev)
}

/// One ancestral step `t -> t - 1` on the full schedule table.
///
/// `sigma_scale` multiplies the posterior standard deviation: 1 is DDPM
/// sampling, 0 turns the step into the DDIM update. At `t = 1` the injected
/// noise is always zero.
pub fn ddpm_step(net: &DenoiserNet, x_t: &Tensor, t: usize, schedule: &NoiseSchedule, z: &Tensor, sigma_scale: f64) -> Result<Tensor> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::invalid(format!("DDPM step t={t} outside 1..={}", schedule.steps())));
    }
    if z.shape() != x_t.shape() {
        return Err(Error::shape("ddpm_step", format!("z {:?} vs x {:?}", z.shape(), x_t.shape())));
    }
    let (alpha, prev) = (schedule.alpha(t)?, schedule.alpha(t - 1)?);
    let sigma = if t == 1 { 0.0 } else { sigma_scale * schedule.posterior_std(t)? };
    let eps = net.predict_eps(x_t, &vec![alpha; x_t.rows()])?;
    let x0 = x0_from_eps(Eager, x_t, &eps, alpha)?;
    let dir = (1.0 - prev - sigma * sigma).max(0.0).sqrt();
    let mut out = Eager.lincomb(prev.sqrt(), &x0, dir, &eps)?;
    if sigma != 0.0 {
        for (o, zv) in out.data_mut().iter_mut().zip(z.data()) {
            *o += sigma * zv;
        }
    }
    Ok(out)
}

/// Full ancestral sampling from `t = T` to 0. Row `i` draws its noise from
/// its own stream, so the result does not depend on batch composition.
pub fn ddpm_sample(net: &DenoiserNet, schedule: &NoiseSchedule, seeds: &Tensor, run_seed: u64, sigma_scale: f64) -> Result<(Tensor, Trajectory)> {
    let (n, d) = seeds.dims2("ddpm_sample")?;
    let mut row_rngs: Vec<_> = (0..n as u64).map(|i| rng::task_stream(run_seed, streams::DDPM_NOISE, i)).collect();
    let mut x = seeds.clone();
    let mut traj = Trajectory { t: vec![schedule.steps()], states: vec![x.clone()] };
    for t in (1..=schedule.steps()).rev() {
        let mut z = Vec::with_capacity(n * d);
        for r in row_rngs.iter_mut() {
            z.extend(rng::normal_vec(r, d));
        }
        let z = Tensor::from_parts(vec![n, d], z);
        x = ddpm_step(net, &x, t, schedule, &z, sigma_scale)?;
        traj.t.push(t - 1);
        traj.states.push(x.clone());
    }
    Ok((x, traj))
}

/// States of a batch along the reverse process, from the seed at the
/// largest step down to `t = 0`. `states[k]` is the whole batch at `t[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t: Vec<usize>,
    pub states: Vec<Tensor>,
}

impl Trajectory {
    /// `(t, x_t)` pairs for one row of the batch.
    pub fn row(&self, i: usize) -> Vec<(usize, Vec<f64>)> {
        self.t.iter().zip(&self.states).map(|(&t, s)| (t, s.row(i).to_vec())).collect()
    }

    pub fn rows(&self) -> usize {
        self.states.first().map(|s| s.rows()).unwrap_or(0)
    }

    /// Columns `row,step,t,x0,...`, one line per row and step.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let d = self.states.first().map(|s| s.cols()).unwrap_or(0);
        let mut header = vec!["row".to_string(), "step".to_string(), "t".to_string()];
        header.extend((0..d).map(|j| format!("x{j}")));
        let mut records = Vec::new();
        for i in 0..self.rows() {
            for (k, (&t, s)) in self.t.iter().zip(&self.states).enumerate() {
                let mut rec = vec![i.to_string(), k.to_string(), t.to_string()];
                rec.extend(s.row(i).iter().map(|&v| crate::io::fmt_f64(v)));
                records.push(rec);
            }
        }
        crate::io::write_records(out, &header, records)
    }
}

/// The DDIM chain over `subsequence(K)`, written against [`Ops`] so it can
/// be unrolled on a tape for backpropagation into the seeds.
pub fn ddim_chain<G: Ops>(
    g: G,
    net: &DenoiserNet,
    params: &[G::Value],
    seeds: &G::Value,
    schedule: &NoiseSchedule,
    k: usize,
    mut record: impl FnMut(usize, &G::Value),
) -> Result<G::Value> {
    let idx = schedule.subsequence(k)?;
    let n = g.shape(seeds)[0];
    let mut x = seeds.clone();
    record(*idx.last().expect("non-empty"), &x);
    for w in idx.windows(2).rev() {
        let (t_prev, t) = (w[0], w[1]);
        let (alpha, alpha_prev) = (schedule.alpha(t)?, schedule.alpha(t_prev)?);
        let cond = net.conditioning_uniform(alpha, n)?;
        let eps = net.predict_with(g, params, &x, &cond)?;
        x = ddim_update(g, &x, &eps, alpha, alpha_prev)?;
        record(t_prev, &x);
    }
    Ok(x)
}

/// Deterministic generation from one seed.
pub fn generate(net: &DenoiserNet, schedule: &NoiseSchedule, seed: &[f64], k: usize) -> Result<(Vec<f64>, Trajectory)> {
    let seeds = Tensor::new(vec![1, seed.len()], seed.to_vec())?;
    let (out, traj) = generate_batch(net, schedule, &seeds, k, 1)?;
    Ok((out.row(0).to_vec(), traj))
}

fn generate_serial(net: &DenoiserNet, schedule: &NoiseSchedule, seeds: &Tensor, k: usize) -> Result<(Tensor, Trajectory)> {
    let params = net.mlp.bind(Eager);
    let mut traj = Trajectory { t: Vec::with_capacity(k + 1), states: Vec::with_capacity(k + 1) };
    let out = ddim_chain(Eager, net, &params, seeds, schedule, k, |t, x| {
        traj.t.push(t);
        traj.states.push(x.clone());
    })?;
    Ok((out, traj))
}

/// Rows are independent; with `workers > 1` the batch is split into
/// contiguous chunks evaluated in parallel, with identical results.
pub fn generate_batch(net: &DenoiserNet, schedule: &NoiseSchedule, seeds: &Tensor, k: usize, workers: usize) -> Result<(Tensor, Trajectory)> {
    let (n, d) = seeds.dims2("generate_batch")?;
    if d != net.dim {
        return Err(Error::shape("generate_batch", format!("{d}-d seeds for a {}-d net", net.dim)));
    }
    if k < 2 {
        return Err(Error::invalid(format!("generation needs K >= 2, got {k}")));
    }
    if workers <= 1 || n < 2 {
        return generate_serial(net, schedule, seeds, k);
    }
    let chunk = n.div_ceil(workers);
    let parts: Vec<(usize, usize)> = (0..n).step_by(chunk).map(|s| (s, (s + chunk).min(n))).collect();
    let results = run_parallel(workers, || {
        parts
            .par_iter()
            .map(|&(s, e)| {
                let idx: Vec<usize> = (s..e).collect();
                generate_serial(net, schedule, &seeds.select_rows(&idx), k)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = Vec::with_capacity(n * d);
    let steps = results[0].1.t.clone();
    let mut states: Vec<Vec<f64>> = vec![Vec::with_capacity(n * d); steps.len()];
    for (o, tr) in &results {
        out.extend_from_slice(o.data());
        for (acc, s) in states.iter_mut().zip(&tr.states) {
            acc.extend_from_slice(s.data());
        }
    }
    let traj = Trajectory {
        t: steps,
        states: states.into_iter().map(|v| Tensor::from_parts(vec![n, d], v)).collect(),
    };
    Ok((Tensor::from_parts(vec![n, d], out), traj))
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn run_parallel<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeSampling {
    /// Uniform position in `[0, 1]` mapped through the schedule's
    /// continuous form.
    Continuous,
    /// Uniform integer step in `1..=T`.
    Integer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Final learning rate as a fraction of the initial one, reached by a
    /// cosine decay over all steps. 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub time_sampling: TimeSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 128,
            optimizer: AdamConfig::with_lr(2e-3),
            final_lr_fraction: 0.05,
            time_sampling: TimeSampling::Continuous,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.optimizer.lr >= 0.0) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::invalid("learning rate must be >= 0 and its final fraction in [0, 1]"));
        }
        Ok(())
    }

    pub(crate) fn lr_at(&self, step: usize, total: usize) -> f64 {
        cosine_lr(self.optimizer.lr, self.final_lr_fraction, step, total)
    }
}

/// Cosine decay from `base` at step 0 to `base * final_fraction` at the
/// last of `total` steps.
pub(crate) fn cosine_lr(base: f64, final_fraction: f64, step: usize, total: usize) -> f64 {
    if total <= 1 || final_fraction >= 1.0 {
        return base;
    }
    let progress = step as f64 / (total - 1) as f64;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (final_fraction + (1.0 - final_fraction) * cosine)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Trains the noise predictor on the unweighted squared error between the
/// injected and the predicted noise, averaged over batch and coordinates.
pub fn train(net: &DenoiserNet, data: &Tensor, schedule: &NoiseSchedule, cfg: &TrainConfig, seed: u64) -> Result<(DenoiserNet, TrainReport)> {
    cfg.validate()?;
    let (n, d) = data.dims2("train")?;
    if n == 0 || d != net.dim {
        return Err(Error::shape("train", format!("dataset {:?} for a {}-d net", data.shape(), net.dim)));
    }
    let mut rng = rng::stream(seed, streams::TRAIN);
    let mut params = net.mlp.params();
    let mut adam = AdamState::new(cfg.optimizer, &params);
    let mut model = net.clone();
    let batch = cfg.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let b = chunk.len();
            let x0 = data.select_rows(chunk);
            let alphas: Vec<f64> = (0..b)
                .map(|_| match cfg.time_sampling {
                    TimeSampling::Continuous => schedule.alpha_continuous(rng.gen::<f64>()),
                    TimeSampling::Integer => {
                        let t = rng.gen_range(1..=schedule.steps());
                        schedule.alphas()[t]
                    }
                })
                .collect();
            let eps = Tensor::from_parts(vec![b, d], rng::normal_vec(&mut rng, b * d));
            let x_t = diffuse_alphas(&x0, &alphas, &eps)?;
            let cond = model.conditioning(&alphas)?;

            let tape = Tape::new();
            let leaves: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
            let pred = model.predict_with(&tape, &leaves, &tape.constant(x_t), &cond)?;
            let loss = pred.squared_error(tape.constant(eps))?.scale(1.0 / (b * d) as f64);
            let loss_value = loss.value().item();
            let lr = cfg.lr_at(step, total_steps);
            if !loss_value.is_finite() {
                return Err(Error::Diverged { step, lr, loss: loss_value });
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = leaves.iter().map(|&l| grads.take(l)).collect();
            drop(tape);
            adam.config.lr = lr;
            adam.step(&mut params, &grads)?;
            sum += loss_value * b as f64;
            step += 1;
        }
        epoch_losses.push(sum / n as f64);
    }
    model.mlp.set_params(params)?;
    if !model.mlp.is_finite() {
        return Err(Error::Diverged { step, lr: cfg.optimizer.lr, loss: f64::NAN });
    }
    let final_loss = *epoch_losses.last().expect("epochs >= 1");
    Ok((model, TrainReport { epoch_losses, epochs: cfg.epochs, final_loss }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::nn::Activation;
    use crate::schedule::ScheduleKind;
    use crate::denoiser::SinusoidalEmbed;

    fn small_net(seed: u64) -> DenoiserNet {
        let cfg = DenoiserConfig { widths: vec![16, 16], activation: Activation::Silu, embed: SinusoidalEmbed { width: 8, min_freq: 1.0, max_freq: 100.0 } };
        DenoiserNet::init(2, &cfg, seed).unwrap()
    }

    #[test]
    fn diffuse_examples() {
        let x0 = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        let eps = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        let out = diffuse_alphas(&x0, &[0.25], &eps).unwrap();
        assert_eq!(out.data()[0], 0.5);
        assert!((out.data()[1] - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(diffuse_alphas(&x0, &[1.0], &Tensor::zeros(vec![1, 2])).unwrap(), x0);
        assert_eq!(diffuse_alphas(&x0, &[0.0], &eps).unwrap(), eps);
        assert!(diffuse_alphas(&x0, &[0.5, 0.5], &eps).is_err());
    }

    #[test]
    fn true_noise_inverts_forward_process() {
        let x0 = Tensor::from_rows(&[[0.3, -1.2], [2.0, 0.1]]).unwrap();
        let eps = Tensor::from_rows(&[[1.5, 0.2], [-0.4, -2.0]]).unwrap();
        for a in [1e-3, 0.1, 0.5, 0.99, 1.0] {
            let x_t = diffuse_alphas(&x0, &[a, a], &eps).unwrap();
            let back = x0_from_eps(Eager, &x_t, &eps, a).unwrap();
            for (u, v) in back.data().iter().zip(x0.data()) {
                assert!((u - v).abs() < 1e-9, "alpha {a}");
            }
        }
        assert!(x0_from_eps(Eager, &x0, &eps, 0.0).is_err());
    }

    #[test]
    fn ddim_update_identities() {
        let x = Tensor::from_rows(&[[0.3, -1.2]]).unwrap();
        let eps = Tensor::from_rows(&[[1.5, 0.2]]).unwrap();
        let same = ddim_update(Eager, &x, &eps, 0.4, 0.4).unwrap();
        for (u, v) in same.data().iter().zip(x.data()) {
            assert!((u - v).abs() < 1e-12);
        }
        let last = ddim_update(Eager, &x, &eps, 0.4, 1.0).unwrap();
        assert_eq!(last, x0_from_eps(Eager, &x, &eps, 0.4).unwrap());
        assert!(ddim_update(Eager, &x, &eps, 0.5, 0.4).is_err());
        assert!(ddim_update(Eager, &x, &eps, 1.0, 1.0).is_err());
    }

    #[test]
    fn oracle_chain_stays_on_the_interpolation() {
        let x0 = Tensor::from_rows(&[[0.7, -0.2]]).unwrap();
        let eps = Tensor::from_rows(&[[-1.1, 0.4]]).unwrap();
        let s = NoiseSchedule::new(ScheduleKind::cosine(), 50).unwrap();
        let idx = s.subsequence(10).unwrap();
        let mut x = diffuse_alphas(&x0, &[s.alphas()[50]], &eps).unwrap();
        for w in idx.windows(2).rev() {
            let (a, ap) = (s.alphas()[w[1]], s.alphas()[w[0]]);
            x = ddim_update(Eager, &x, &eps, a, ap).unwrap();
            let expect = diffuse_alphas(&x0, &[ap], &eps).unwrap();
            for (u, v) in x.data().iter().zip(expect.data()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ddpm_step_at_one_ignores_noise() {
        let net = small_net(1);
        let s = NoiseSchedule::new(ScheduleKind::linear(), 10).unwrap();
        let x = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        let z1 = Tensor::from_rows(&[[3.0, -3.0]]).unwrap();
        let a = ddpm_step(&net, &x, 1, &s, &z1, 1.0).unwrap();
        let b = ddpm_step(&net, &x, 1, &s, &Tensor::zeros(vec![1, 2]), 1.0).unwrap();
        assert_eq!(a, b);
        assert!(ddpm_step(&net, &x, 0, &s, &z1, 1.0).is_err());
        assert!(ddpm_step(&net, &x, 11, &s, &z1, 1.0).is_err());
    }

    #[test]
    fn ddpm_with_zero_sigma_matches_ddim() {
        let net = small_net(2);
        let s = NoiseSchedule::new(ScheduleKind::linear(), 10).unwrap();
        let seeds = Tensor::from_rows(&[[0.5, -1.0], [1.5, 0.3]]).unwrap();
        let (ddim, _) = generate_batch(&net, &s, &seeds, 10, 1).unwrap();
        let mut x = seeds.clone();
        for t in (1..=10).rev() {
            x = ddpm_step(&net, &x, t, &s, &Tensor::zeros(vec![2, 2]), 0.0).unwrap();
        }
        for (u, v) in x.data().iter().zip(ddim.data()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn ddpm_sampling_is_reproducible() {
        let net = small_net(3);
        let s = NoiseSchedule::new(ScheduleKind::linear(), 10).unwrap();
        let seeds = Tensor::from_rows(&[[0.5, -1.0], [1.5, 0.3]]).unwrap();
        let (a, ta) = ddpm_sample(&net, &s, &seeds, 5, 1.0).unwrap();
        let (b, tb) = ddpm_sample(&net, &s, &seeds, 5, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.t.first(), Some(&10));
        assert_eq!(ta.t.last(), Some(&0));
    }

    #[test]
    fn generate_unrolls_and_records() {
        let net = small_net(4);
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 100).unwrap();
        let seed = [0.4, -0.9];
        let (x0, traj) = generate(&net, &s, &seed, 2).unwrap();
        // K = 2: one step to t = 50, then the closing step to t = 0.
        let x = Tensor::from_rows(&[seed]).unwrap();
        let mid = ddim_step(&net, &x, s.alphas()[100], s.alphas()[50]).unwrap();
        let last = ddim_step(&net, &mid, s.alphas()[50], 1.0).unwrap();
        assert_eq!(last.row(0), x0.as_slice());
        assert_eq!(traj.t, vec![100, 50, 0]);
        assert_eq!(traj.states[0].row(0), &seed);
        let (again, _) = generate(&net.clone(), &s, &seed, 2).unwrap();
        assert_eq!(again, x0);
        assert!(generate(&net, &s, &seed, 1).is_err());
    }

    #[test]
    fn batches_are_row_independent() {
        let net = small_net(5);
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 1000).unwrap();
        let seeds = Tensor::from_rows(&[[0.1, 0.2], [-1.0, 0.5], [2.0, -0.3], [0.0, 0.0], [0.9, 0.9]]).unwrap();
        let (all, _) = generate_batch(&net, &s, &seeds, 25, 1).unwrap();
        let (one, _) = generate(&net, &s, seeds.row(2), 25).unwrap();
        assert_eq!(all.row(2), one.as_slice());
        let perm = [4, 2, 0, 3, 1];
        let (permuted, _) = generate_batch(&net, &s, &seeds.select_rows(&perm), 25, 1).unwrap();
        assert_eq!(permuted, all.select_rows(&perm));
        let (par, _) = generate_batch(&net, &s, &seeds, 25, 3).unwrap();
        assert_eq!(par, all);
    }

    #[test]
    fn zero_learning_rate_leaves_net_unchanged() {
        let net = small_net(6);
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 100).unwrap();
        let data = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        let cfg = TrainConfig { epochs: 1, optimizer: AdamConfig::with_lr(0.0), ..TrainConfig::default() };
        let (trained, report) = train(&net, &data, &s, &cfg, 1).unwrap();
        assert_eq!(trained, net);
        assert_eq!(report.epoch_losses.len(), 1);
        let bad = TrainConfig { epochs: 0, ..cfg };
        assert!(train(&net, &data, &s, &bad, 1).is_err());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let net = small_net(7);
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 100).unwrap();
        let data = crate::datasets::gen_two_moons(256, 0.05, 1).unwrap().points;
        let cfg = TrainConfig { epochs: 30, batch_size: 64, ..TrainConfig::default() };
        let (a, ra) = train(&net, &data, &s, &cfg, 9).unwrap();
        let (b, rb) = train(&net, &data, &s, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.final_loss < ra.epoch_losses[0], "{:?}", ra.epoch_losses);
        assert!(ra.epoch_losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn divergence_is_reported() {
        let net = small_net(8);
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 100).unwrap();
        let data = Tensor::from_rows(&[[1e300, 1e300], [-1e300, 1e300]]).unwrap();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        match train(&net, &data, &s, &cfg, 1) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
