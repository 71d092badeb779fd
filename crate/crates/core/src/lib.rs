//! Deterministic denoising diffusion (DDIM) on low-dimensional point data.
//!
//! The crate covers the whole pipeline: a small tape-based autodiff engine,
//! noise schedules, synthetic datasets, an MLP noise predictor with
//! sinusoidal noise conditioning, training and sampling, and the latent
//! inversion experiments in [`embedding`].

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tape methods return `Result` and cannot implement the operator traits.
#![allow(clippy::should_implement_trait)]

pub mod autodiff;
pub mod checkpoint;
pub mod datasets;
pub mod denoiser;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod io;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod svg;
pub mod tensor;

pub use autodiff::{grad_check, Eager, Gradients, Ops, Tape, Var};
pub use datasets::{Affine, DatasetSpec, PointSet};
pub use denoiser::{DenoiserConfig, DenoiserNet, SinusoidalEmbed};
pub use diffusion::{generate, generate_batch, train, TrainConfig, TrainReport, Trajectory};
pub use error::{Error, Result};
pub use nn::{Activation, Mlp};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use schedule::{NoiseSchedule, ScheduleKind, ScheduleSpec};
pub use tensor::{forward_primitive, OpKind, Tensor};
