//! Multilayer perceptrons written against [`Ops`], so the same forward pass
//! runs eagerly or on a tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Ops, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{OpKind, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn op(self) -> OpKind {
        match self {
            Activation::Silu => OpKind::Silu,
            Activation::Tanh => OpKind::Tanh,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl Mlp {
    /// Weights uniform in `±sqrt(6 / fan_in)` (standard deviation
    /// `sqrt(2 / fan_in)`), biases zero.
    pub fn init(input: usize, widths: &[usize], output: usize, activation: Activation, rng: &mut StreamRng) -> Result<Self> {
        let sizes = Self::sizes(input, widths, output)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                Layer { weight: Tensor::from_parts(vec![fan_in, fan_out], data), bias: Tensor::zeros(vec![fan_out]) }
            })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn zeros(input: usize, widths: &[usize], output: usize, activation: Activation) -> Result<Self> {
        let sizes = Self::sizes(input, widths, output)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer { weight: Tensor::zeros(vec![w[0], w[1]]), bias: Tensor::zeros(vec![w[1]]) })
            .collect();
        Ok(Mlp { layers, activation })
    }

    fn sizes(input: usize, widths: &[usize], output: usize) -> Result<Vec<usize>> {
        if widths.is_empty() || widths.contains(&0) || input == 0 || output == 0 {
            return Err(Error::invalid(format!(
                "MLP needs non-empty positive widths, got {input} -> {widths:?} -> {output}"
            )));
        }
        let mut sizes = vec![input];
        sizes.extend_from_slice(widths);
        sizes.push(output);
        Ok(sizes)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.weight.cols()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters as `[w0, b0, w1, b1, ...]`.
    pub fn params(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape("set_params", format!("expected {} tensors, got {}", 2 * self.layers.len(), params.len())));
        }
        let mut it = params.into_iter();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (w, b) = (it.next().expect("len checked"), it.next().expect("len checked"));
            if w.shape() != layer.weight.shape() || b.shape() != layer.bias.shape() {
                return Err(Error::shape(
                    "set_params",
                    format!("layer {i}: got {:?}/{:?}, expected {:?}/{:?}", w.shape(), b.shape(), layer.weight.shape(), layer.bias.shape()),
                ));
            }
            layer.weight = w;
            layer.bias = b;
        }
        Ok(())
    }

    /// Parameters as constants of `g`.
    pub fn bind<G: Ops>(&self, g: G) -> Vec<G::Value> {
        self.params().into_iter().map(|p| g.constant(p)).collect()
    }

    /// Parameters as trainable leaves of `tape`.
    pub fn bind_trainable<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params().into_iter().map(|p| tape.param(p)).collect()
    }

    pub fn forward<G: Ops>(&self, g: G, params: &[G::Value], x: &G::Value) -> Result<G::Value> {
        debug_assert_eq!(params.len(), 2 * self.layers.len());
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for i in 0..=last {
            h = g.matmul(&h, &params[2 * i])?;
            h = g.add_row(&h, &params[2 * i + 1])?;
            if i < last {
                h = g.apply(self.activation.op(), &[&h])?;
            }
        }
        Ok(h)
    }

    /// FNV-1a over the parameter bits; changes whenever any parameter does.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for v in l.weight.data().iter().chain(l.bias.data()) {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}
