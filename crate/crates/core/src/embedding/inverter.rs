//! Embedding networks: a learned map from a datapoint to one of its seeds,
//! trained through the frozen generator.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Tape};
use crate::denoiser::DenoiserNet;
use crate::diffusion::{cosine_lr, ddim_chain, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{self, streams};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// An unconditioned `d -> d` MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedNet {
    pub mlp: Mlp,
}

impl EmbedNet {
    pub fn init(dim: usize, widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, streams::EMBED_INIT);
        Ok(EmbedNet { mlp: Mlp::init(dim, widths, dim, activation, &mut rng)? })
    }

    pub fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Predicted seeds for a batch of points.
    pub fn seeds(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.forward(Eager, &self.mlp.bind(Eager), x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub final_lr_fraction: f64,
    /// Sampler steps unrolled for backpropagation.
    pub k: usize,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        EmbedTrainConfig { epochs: 200, batch_size: 128, optimizer: AdamConfig::with_lr(2e-3), final_lr_fraction: 0.05, k: 10 }
    }
}

/// Minimizes the mean of `|generate(enet(x)) - x|^2` over `data`, updating
/// only the embedding network.
pub fn train_embed_net(
    enet: &EmbedNet,
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    data: &Tensor,
    cfg: &EmbedTrainConfig,
    seed: u64,
) -> Result<(EmbedNet, TrainReport)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be at least 1"));
    }
    if !(cfg.optimizer.lr >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {}", cfg.optimizer.lr)));
    }
    let (n, d) = data.dims2("train_embed_net")?;
    if n == 0 || d != net.dim || d != enet.dim() {
        return Err(Error::shape("train_embed_net", format!("data {:?}, {}-d generator, {}-d inverter", data.shape(), net.dim, enet.dim())));
    }
    schedule.subsequence(cfg.k)?;
    let mut rng = rng::stream(seed, streams::EMBED_TRAIN);
    let mut params = enet.mlp.params();
    let mut adam = AdamState::new(cfg.optimizer, &params);
    let batch = cfg.batch_size.min(n);
    let total = n.div_ceil(batch) * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let x = data.select_rows(chunk);
            let tape = Tape::new();
            let leaves: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
            let frozen = net.mlp.bind(&tape);
            let xv = tape.constant(x);
            let z = enet.mlp.forward(&tape, &leaves, &xv)?;
            let out = ddim_chain(&tape, net, &frozen, &z, schedule, cfg.k, |_, _| {})?;
            let total_error = out.squared_error(xv)?;
            let loss = total_error.scale(1.0 / chunk.len() as f64);
            let value = loss.value().item();
            let lr = cosine_lr(cfg.optimizer.lr, cfg.final_lr_fraction, step, total);
            if !value.is_finite() {
                return Err(Error::Diverged { step, lr, loss: value });
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = leaves.iter().map(|&l| grads.take(l)).collect();
            drop(tape);
            adam.config.lr = lr;
            adam.step(&mut params, &grads)?;
            sum += value * chunk.len() as f64;
            step += 1;
        }
        epoch_losses.push(sum / n as f64);
    }
    let mut trained = enet.clone();
    trained.mlp.set_params(params)?;
    let final_loss = *epoch_losses.last().expect("epochs >= 1");
    Ok((trained, TrainReport { epoch_losses, epochs: cfg.epochs, final_loss }))
}
