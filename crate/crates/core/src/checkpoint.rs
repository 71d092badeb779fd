//! Trained denoisers on disk.
//!
//! A checkpoint is a JSON document holding the architecture, the schedule it
//! was trained with, the data normalization and every parameter as a
//! 17-significant-digit decimal, so that loading reproduces the network
//! bitwise. A fingerprint of the parameter bits guards against edits and
//! corruption.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::datasets::Affine;
use crate::denoiser::{DenoiserConfig, DenoiserNet};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::nn::Mlp;
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// How the parameters were obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub dataset: String,
    pub epochs: usize,
    pub run_seed: u64,
    pub final_loss: f64,
}

/// One parameter tensor. Values are kept as their decimal text so the
/// document is written and read without any float formatting by serde.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamArray {
    shape: Vec<usize>,
    values: Vec<Box<RawValue>>,
}

impl ParamArray {
    fn from_tensor(t: &Tensor) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::NonFinite("cannot checkpoint non-finite parameters".into()));
        }
        let values = t.data().iter().map(|&v| RawValue::from_string(fmt_f64(v))).collect::<std::result::Result<_, _>>()?;
        Ok(ParamArray { shape: t.shape().to_vec(), values })
    }

    fn to_tensor(&self) -> Result<Tensor> {
        let data = self
            .values
            .iter()
            .map(|v| v.get().parse::<f64>().map_err(|e| Error::Parse(format!("parameter {:?}: {e}", v.get()))))
            .collect::<Result<Vec<f64>>>()?;
        Tensor::new(self.shape.clone(), data)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dim: usize,
    pub architecture: DenoiserConfig,
    pub schedule: ScheduleSpec,
    /// Map from raw data coordinates to the ones the net was trained in.
    pub normalization: Option<Affine>,
    pub provenance: Provenance,
    /// FNV-1a over the parameter bits, as 16 hex digits.
    pub fingerprint: String,
    params: Vec<ParamArray>,
}

impl Checkpoint {
    pub fn new(net: &DenoiserNet, schedule: ScheduleSpec, normalization: Option<Affine>, provenance: Provenance) -> Result<Self> {
        let params = net.mlp.params().iter().map(ParamArray::from_tensor).collect::<Result<_>>()?;
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            dim: net.dim,
            architecture: net.config(),
            schedule,
            normalization,
            provenance,
            fingerprint: format!("{:016x}", net.mlp.fingerprint()),
            params,
        })
    }

    /// Rebuilds the network, checking shapes and the fingerprint.
    pub fn net(&self) -> Result<DenoiserNet> {
        let cfg = &self.architecture;
        cfg.embed.validate()?;
        let mut mlp = Mlp::zeros(self.dim + cfg.embed.width, &cfg.widths, self.dim, cfg.activation)?;
        let params = self.params.iter().map(ParamArray::to_tensor).collect::<Result<Vec<_>>>()?;
        mlp.set_params(params)?;
        let found = format!("{:016x}", mlp.fingerprint());
        if found != self.fingerprint {
            return Err(Error::Parse(format!("parameter fingerprint {found} does not match the recorded {}", self.fingerprint)));
        }
        Ok(DenoiserNet { dim: self.dim, embed: cfg.embed, mlp })
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a checkpoint. The format version is checked before anything
    /// else, so documents from other versions fail with [`Error::Version`].
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Head {
            format_version: u32,
        }
        let head: Head = serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        if head.format_version != FORMAT_VERSION {
            return Err(Error::Version { found: head.format_version, expected: FORMAT_VERSION });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Loads and rebuilds in one step.
    pub fn load_net(path: impl AsRef<Path>) -> Result<(Self, DenoiserNet)> {
        let c = Self::load(path)?;
        let net = c.net()?;
        Ok((c, net))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::SinusoidalEmbed;

    fn sample() -> (DenoiserNet, Checkpoint) {
        let cfg = DenoiserConfig { widths: vec![7, 5], embed: SinusoidalEmbed { width: 4, min_freq: 1.0, max_freq: 30.0 }, ..Default::default() };
        let net = DenoiserNet::init(2, &cfg, 11).unwrap();
        let prov = Provenance { dataset: "two-moons".into(), epochs: 3, run_seed: 11, final_loss: 0.1 + 0.2 };
        let norm = Affine { mean: vec![0.5, 1.0 / 3.0], scale: vec![0.7, 0.3] };
        let c = Checkpoint::new(&net, ScheduleSpec::default(), Some(norm), prov).unwrap();
        (net, c)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (net, c) = sample();
        let text = c.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        let rebuilt = back.net().unwrap();
        assert_eq!(rebuilt, net);
        for (a, b) in net.mlp.params().iter().zip(rebuilt.mlp.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.provenance, c.provenance);
        assert_eq!(back.normalization, c.normalization);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let (_, c) = sample();
        let text = c.to_json().unwrap().replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn corrupted_parameter_is_detected() {
        let (_, c) = sample();
        let text = c.to_json().unwrap();
        let at = text.find("\"values\"").unwrap();
        let digit = at + text[at..].find(|ch: char| ch.is_ascii_digit()).unwrap();
        let mut bytes = text.into_bytes();
        bytes[digit] = if bytes[digit] == b'9' { b'8' } else { bytes[digit] + 1 };
        let back = Checkpoint::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert!(matches!(back.net(), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_unknown_fields_and_non_finite() {
        let (mut net, c) = sample();
        let text = c.to_json().unwrap().replacen('{', "{\"extra\": 0,", 1);
        assert!(Checkpoint::from_json(&text).is_err());
        net.mlp.layers[0].bias.data_mut()[0] = f64::NAN;
        assert!(Checkpoint::new(&net, ScheduleSpec::default(), None, c.provenance.clone()).is_err());
    }
}
