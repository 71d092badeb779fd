//! The noise-prediction network `eps(x_t, alpha_t)`.
//!
//! The noise level enters as a sinusoidal embedding of the noise variance
//! `1 - alpha_t`, concatenated to the point coordinates at the input layer.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Ops};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidalEmbed {
    pub width: usize,
    pub min_freq: f64,
    pub max_freq: f64,
}

impl Default for SinusoidalEmbed {
    fn default() -> Self {
        SinusoidalEmbed { width: 32, min_freq: 1.0, max_freq: 1000.0 }
    }
}

impl SinusoidalEmbed {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || !self.width.is_multiple_of(2) {
            return Err(Error::invalid(format!("embedding width must be even and >= 2, got {}", self.width)));
        }
        if !(self.min_freq > 0.0 && self.min_freq <= self.max_freq && self.max_freq.is_finite()) {
            return Err(Error::invalid(format!(
                "embedding frequencies must satisfy 0 < min <= max, got {} and {}",
                self.min_freq, self.max_freq
            )));
        }
        Ok(())
    }

    /// Geometrically spaced frequencies from `min_freq` to `max_freq`.
    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.width / 2;
        if half == 1 {
            return vec![self.min_freq];
        }
        let (lo, hi) = (self.min_freq.ln(), self.max_freq.ln());
        (0..half).map(|k| (lo + (hi - lo) * k as f64 / (half - 1) as f64).exp()).collect()
    }

    /// `[sin(2 pi f_k v)..., cos(2 pi f_k v)...]` for `v` in `[0, 1]`.
    pub fn embed(&self, value: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("embedded value {value} outside [0, 1]")));
        }
        let freqs = self.frequencies();
        let mut out = Vec::with_capacity(self.width);
        out.extend(freqs.iter().map(|f| (TAU * f * value).sin()));
        out.extend(freqs.iter().map(|f| (TAU * f * value).cos()));
        Ok(out)
    }

    /// One embedding row per value.
    pub fn embed_rows(&self, values: &[f64]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(values.len() * self.width);
        for &v in values {
            data.extend(self.embed(v)?);
        }
        Ok(Tensor::from_parts(vec![values.len(), self.width], data))
    }
}

/// Architecture descriptor: everything but the parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub embed: SinusoidalEmbed,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { widths: vec![128, 128, 128], activation: Activation::Silu, embed: SinusoidalEmbed::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    pub dim: usize,
    pub embed: SinusoidalEmbed,
    pub mlp: Mlp,
}

/// The value the network is conditioned on for a given `alpha_t`.
pub fn conditioning_value(alpha: f64) -> f64 {
    1.0 - alpha
}

impl DenoiserNet {
    pub fn init(dim: usize, config: &DenoiserConfig, seed: u64) -> Result<Self> {
        config.embed.validate()?;
        let mut rng = rng::stream(seed, streams::INIT);
        let mlp = Mlp::init(dim + config.embed.width, &config.widths, dim, config.activation, &mut rng)?;
        Ok(DenoiserNet { dim, embed: config.embed, mlp })
    }

    pub fn zeros(dim: usize, config: &DenoiserConfig) -> Result<Self> {
        config.embed.validate()?;
        let mlp = Mlp::zeros(dim + config.embed.width, &config.widths, dim, config.activation)?;
        Ok(DenoiserNet { dim, embed: config.embed, mlp })
    }

    pub fn config(&self) -> DenoiserConfig {
        DenoiserConfig { widths: self.mlp.hidden_widths(), activation: self.mlp.activation, embed: self.embed }
    }

    /// Embedding rows for per-row alphas.
    pub fn conditioning(&self, alphas: &[f64]) -> Result<Tensor> {
        let values: Vec<f64> = alphas.iter().map(|&a| conditioning_value(a)).collect();
        self.embed.embed_rows(&values)
    }

    /// Embedding rows for `n` rows sharing one alpha.
    pub fn conditioning_uniform(&self, alpha: f64, n: usize) -> Result<Tensor> {
        let row = self.embed.embed(conditioning_value(alpha))?;
        Ok(Tensor::tile_row(&row, n))
    }

    /// Forward pass given bound parameters and precomputed conditioning rows.
    pub fn predict_with<G: Ops>(&self, g: G, params: &[G::Value], x: &G::Value, conditioning: &Tensor) -> Result<G::Value> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.dim || shape[0] != conditioning.rows() {
            return Err(Error::shape(
                "predict_eps",
                format!("x {shape:?} with {} conditioning rows for a {}-d net", conditioning.rows(), self.dim),
            ));
        }
        let cond = g.constant(conditioning.clone());
        let input = g.concat(x, &cond)?;
        self.mlp.forward(g, params, &input)
    }

    /// Predicted noise for a batch `x_t` with one alpha per row.
    pub fn predict_eps(&self, x_t: &Tensor, alphas: &[f64]) -> Result<Tensor> {
        if alphas.len() != x_t.rows() {
            return Err(Error::shape("predict_eps", format!("{} rows but {} alphas", x_t.rows(), alphas.len())));
        }
        let cond = self.conditioning(alphas)?;
        self.predict_with(Eager, &self.mlp.bind(Eager), x_t, &cond)
    }
}
