//! Run configuration: one JSON document per invocation.
//!
//! Every field has a default, so `{}` is a complete config. Unknown keys are
//! rejected at every level. The resolved config, including the run seed, is
//! written next to each command's outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ddimlab::embedding::{EmbedTrainConfig, GdConfig};
use ddimlab::{Activation, DatasetSpec, DenoiserConfig, ScheduleSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Root of every random stream used by the run.
    pub run_seed: u64,
    pub dataset: DatasetSpec,
    pub schedule: ScheduleSpec,
    pub net: DenoiserConfig,
    pub train: TrainConfig,
    /// Trained model read by the non-training commands. Defaults to the
    /// checkpoint `train` writes into the output directory.
    pub checkpoint: Option<PathBuf>,
    pub generate: GenerateParams,
    pub gravmap: GravmapParams,
    pub embed_gd: EmbedGdParams,
    pub embed_net: EmbedNetParams,
    pub pca: PcaParams,
    pub density: DensityParams,
    pub uniqueness: UniquenessParams,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateParams {
    pub n: usize,
    pub k: usize,
}

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams { n: 512, k: 25 }
    }
}

/// A regular grid of seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridParams {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams { bounds: vec![(-3.0, 3.0); 2], resolution: 61 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GravmapParams {
    pub grid: GridParams,
    pub k: usize,
    /// Assignment radius around dataset points.
    pub tau: f64,
    /// Dataset points whose grid clouds are extracted.
    pub probes: usize,
    /// Cloud radius around each probe.
    pub tol: f64,
    /// Width of the Gaussian in the exported attraction profile.
    pub profile_sigma: f64,
    pub profile_r_max: f64,
    pub profile_points: usize,
}

impl Default for GravmapParams {
    fn default() -> Self {
        GravmapParams {
            grid: GridParams::default(),
            k: 25,
            tau: 0.05,
            probes: 32,
            tol: 0.05,
            profile_sigma: 1.0,
            profile_r_max: 5.0,
            profile_points: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedGdParams {
    /// Number of dataset points inverted.
    pub targets: usize,
    pub gd: GdConfig,
    /// Random combinations evaluated per cloud.
    pub combos: usize,
    /// Allow negative weights (still summing to one) in the combinations.
    pub signed: bool,
    /// Progressive means use the first 1..=progressive seeds.
    pub progressive: usize,
}

impl Default for EmbedGdParams {
    fn default() -> Self {
        EmbedGdParams { targets: 32, gd: GdConfig::default(), combos: 100, signed: false, progressive: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedNetParams {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub train: EmbedTrainConfig,
    /// Held-out points the inverter is evaluated on.
    pub eval_points: usize,
    pub refine_steps: usize,
    pub refine_lr: f64,
}

impl Default for EmbedNetParams {
    fn default() -> Self {
        EmbedNetParams {
            widths: vec![128, 128],
            activation: Activation::Silu,
            train: EmbedTrainConfig::default(),
            eval_points: 256,
            refine_steps: 500,
            refine_lr: 0.005,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudKind {
    /// Grid seeds whose output lands near the probe.
    Grid,
    /// Seeds found by gradient descent.
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaParams {
    /// Analyse the seeds in this CSV instead of computing clouds.
    pub cloud: Option<PathBuf>,
    pub source: CloudKind,
    pub probes: usize,
    pub grid: GridParams,
    pub tol: f64,
    pub k: usize,
    /// Normalized factors for the component traversals.
    pub factors: Vec<f64>,
}

impl Default for PcaParams {
    fn default() -> Self {
        PcaParams {
            cloud: None,
            source: CloudKind::Grid,
            probes: 16,
            grid: GridParams { bounds: vec![(-3.0, 3.0); 2], resolution: 201 },
            tol: 0.05,
            k: 25,
            factors: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityParams {
    pub grid: GridParams,
    pub samples: usize,
    pub bandwidth: f64,
    pub k: usize,
    /// Off-manifold reference ring, centred at the origin.
    pub ring_radius: f64,
    pub ring_points: usize,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams {
            grid: GridParams { bounds: vec![(-3.5, 3.5); 2], resolution: 141 },
            samples: 4096,
            bandwidth: 0.1,
            k: 25,
            ring_radius: 3.0,
            ring_points: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessParams {
    pub arm_a: ddimlab::embedding::UniquenessArm,
    pub arm_b: ddimlab::embedding::UniquenessArm,
    pub n: usize,
    pub k: usize,
}

impl Default for UniquenessParams {
    fn default() -> Self {
        use ddimlab::embedding::UniquenessArm;
        UniquenessParams {
            arm_a: UniquenessArm { net: DenoiserConfig::default(), seed: 0 },
            arm_b: UniquenessArm { net: DenoiserConfig { widths: vec![64; 4], ..Default::default() }, seed: 1 },
            n: 512,
            k: 25,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// The checkpoint to read: the configured one, or the one `train`
    /// leaves in `out`.
    pub fn checkpoint_path(&self, out: &Path) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| out.join(crate::commands::CHECKPOINT_FILE))
    }
}
