//! Diffusion noise schedules.
//!
//! A schedule is a table `alpha[0..=T]` of cumulative signal variances,
//! strictly decreasing from `alpha[0]` (clean data) towards zero. The signal
//! rate at step `t` is `sqrt(alpha[t])` and the noise rate
//! `sqrt(1 - alpha[t])`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest per-step beta allowed for the cosine schedule; keeps the last
/// entry of the table away from exactly zero.
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleKind {
    Linear { beta_min: f64, beta_max: f64 },
    Quadratic { beta_min: f64, beta_max: f64 },
    Cosine { s: f64 },
    ContinuousCosine { max_signal: f64, min_signal: f64 },
}

impl ScheduleKind {
    pub fn linear() -> Self {
        ScheduleKind::Linear { beta_min: 1e-4, beta_max: 0.02 }
    }

    pub fn quadratic() -> Self {
        ScheduleKind::Quadratic { beta_min: 1e-4, beta_max: 0.02 }
    }

    pub fn cosine() -> Self {
        ScheduleKind::Cosine { s: 0.008 }
    }

    pub fn continuous_cosine() -> Self {
        ScheduleKind::ContinuousCosine { max_signal: 0.95, min_signal: 0.02 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Linear { .. } => "linear",
            ScheduleKind::Quadratic { .. } => "quadratic",
            ScheduleKind::Cosine { .. } => "cosine",
            ScheduleKind::ContinuousCosine { .. } => "continuous-cosine",
        }
    }

    /// All four kinds with their default constants.
    pub fn all_defaults() -> [ScheduleKind; 4] {
        [Self::linear(), Self::quadratic(), Self::cosine(), Self::continuous_cosine()]
    }
}

/// Serializable description of a schedule: kind plus step count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { kind: ScheduleKind::continuous_cosine(), steps: 1000 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.kind, self.steps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        validate_params(&kind)?;
        let t_max = steps as f64;
        let mut alpha = Vec::with_capacity(steps + 1);
        alpha.push(1.0);
        match kind {
            ScheduleKind::Linear { beta_min, beta_max } => {
                for t in 1..=steps {
                    let frac = (t - 1) as f64 / (steps - 1) as f64;
                    let beta = beta_min + frac * (beta_max - beta_min);
                    alpha.push(alpha[t - 1] * (1.0 - beta));
                }
            }
            ScheduleKind::Quadratic { beta_min, beta_max } => {
                let (lo, hi) = (beta_min.sqrt(), beta_max.sqrt());
                for t in 1..=steps {
                    let frac = (t - 1) as f64 / (steps - 1) as f64;
                    let root = lo + frac * (hi - lo);
                    alpha.push(alpha[t - 1] * (1.0 - root * root));
                }
            }
            ScheduleKind::Cosine { s } => {
                let f = |t: f64| ((t / t_max + s) / (1.0 + s) * FRAC_PI_2).cos().powi(2);
                let f0 = f(0.0);
                for t in 1..=steps {
                    let ratio = (f(t as f64) / f0) / (f((t - 1) as f64) / f0);
                    let beta = (1.0 - ratio).min(COSINE_MAX_BETA);
                    alpha.push(alpha[t - 1] * (1.0 - beta));
                }
            }
            ScheduleKind::ContinuousCosine { min_signal, .. } => {
                for t in 1..steps {
                    alpha.push(continuous_cosine_alpha(&kind, t as f64 / t_max));
                }
                alpha.push(min_signal * min_signal);
            }
        }

        for t in 1..=steps {
            if !(alpha[t] > 0.0) {
                return Err(Error::Schedule { t, reason: format!("alpha = {} is not positive", alpha[t]) });
            }
            if !(alpha[t] < alpha[t - 1]) {
                return Err(Error::Schedule {
                    t,
                    reason: format!("alpha = {} does not decrease from {}", alpha[t], alpha[t - 1]),
                });
            }
        }
        Ok(NoiseSchedule { kind, alpha })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec { kind: self.kind, steps: self.steps() }
    }

    /// T, the index of the last table entry.
    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.alpha
            .get(t)
            .copied()
            .ok_or_else(|| Error::invalid(format!("step {t} outside 0..={}", self.steps())))
    }

    /// `(sqrt(alpha_t), sqrt(1 - alpha_t))`.
    pub fn rates_at(&self, t: usize) -> Result<(f64, f64)> {
        let a = self.alpha(t)?;
        Ok((a.sqrt(), (1.0 - a).sqrt()))
    }

    /// Alpha at a continuous position `u` in `[0, 1]` (u = t / T).
    ///
    /// The continuous cosine schedule is evaluated in closed form, without
    /// the clamp at `t = 0`. The others interpolate the table geometrically.
    pub fn alpha_continuous(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if let ScheduleKind::ContinuousCosine { .. } = self.kind {
            return continuous_cosine_alpha(&self.kind, u);
        }
        let pos = u * self.steps() as f64;
        let i = (pos.floor() as usize).min(self.steps() - 1);
        let frac = pos - i as f64;
        let (lo, hi) = (self.alpha[i].ln(), self.alpha[i + 1].ln());
        ((1.0 - frac) * lo + frac * hi).exp()
    }

    /// `K + 1` uniformly strided step indices from 0 to T inclusive.
    pub fn subsequence(&self, k: usize) -> Result<Vec<usize>> {
        subsequence(self.steps(), k)
    }

    /// Standard deviation of the DDPM posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_std(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("posterior step {t} outside 1..={}", self.steps())));
        }
        let (a, prev) = (self.alpha[t], self.alpha[t - 1]);
        let beta = 1.0 - a / prev;
        Ok(((1.0 - prev) / (1.0 - a) * beta).max(0.0).sqrt())
    }
}

fn continuous_cosine_alpha(kind: &ScheduleKind, u: f64) -> f64 {
    let ScheduleKind::ContinuousCosine { max_signal, min_signal } = *kind else {
        unreachable!("continuous cosine only")
    };
    let (start, end) = (max_signal.acos(), min_signal.acos());
    let angle = start + u * (end - start);
    angle.cos().powi(2)
}

fn validate_params(kind: &ScheduleKind) -> Result<()> {
    let ok = match *kind {
        ScheduleKind::Linear { beta_min, beta_max } | ScheduleKind::Quadratic { beta_min, beta_max } => {
            0.0 < beta_min && beta_min < beta_max && beta_max < 1.0
        }
        ScheduleKind::Cosine { s } => s.is_finite() && s >= 0.0,
        ScheduleKind::ContinuousCosine { max_signal, min_signal } => {
            0.0 < min_signal && min_signal < max_signal && max_signal <= 1.0
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} schedule parameters out of range: {kind:?}", kind.name())))
    }
}

/// Uniform-stride selection of `k + 1` indices out of `0..=steps`.
pub fn subsequence(steps: usize, k: usize) -> Result<Vec<usize>> {
    if k < 2 || k > steps {
        return Err(Error::invalid(format!("step count K={k} outside 2..={steps}")));
    }
    Ok((0..=k).map(|i| i * steps / k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuous_cosine_endpoints() {
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 1000).unwrap();
        assert!((s.alphas()[1000] - 4e-4).abs() < 1e-18);
        assert_eq!(s.rates_at(0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn cosine_midpoint_between_endpoints() {
        let s = NoiseSchedule::new(ScheduleKind::cosine(), 1000).unwrap();
        let mid = s.alphas()[500];
        assert!(mid < s.alphas()[0] && mid > s.alphas()[1000]);
        // Without the beta clip the midpoint is cos^2 at (0.5 + s) / (1 + s) of a quarter turn.
        let f = |t: f64| ((t + 0.008) / 1.008 * FRAC_PI_2).cos().powi(2);
        assert!((mid - f(0.5) / f(0.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_matches_direct_product() {
        let s = NoiseSchedule::new(ScheduleKind::linear(), 1000).unwrap();
        // Independent recomputation with betas from a linspace.
        let betas: Vec<f64> = (0..1000).map(|i| 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0).collect();
        for t in [1usize, 10, 500, 1000] {
            let direct: f64 = betas[..t].iter().map(|b| 1.0 - b).product();
            assert!((s.alphas()[t] - direct).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn rates_are_square_roots() {
        let s = NoiseSchedule { kind: ScheduleKind::cosine(), alpha: vec![1.0, 0.25, 0.1] };
        let (sig, noise) = s.rates_at(1).unwrap();
        assert_eq!(sig, 0.5);
        assert!((noise - 0.75f64.sqrt()).abs() < 1e-15);
        assert!(s.rates_at(3).is_err());
    }

    #[test]
    fn subsequence_examples() {
        assert_eq!(subsequence(10, 2).unwrap(), vec![0, 5, 10]);
        assert_eq!(subsequence(7, 7).unwrap(), (0..=7).collect::<Vec<_>>());
        let idx = subsequence(1000, 25).unwrap();
        assert_eq!(idx.len(), 26);
        assert_eq!((idx[0], idx[25]), (0, 1000));
        let gaps: Vec<usize> = idx.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().max().unwrap() - gaps.iter().min().unwrap() <= 1);
        assert!(subsequence(10, 1).is_err());
        assert!(subsequence(10, 11).is_err());
    }

    #[test]
    fn extreme_params_rejected_with_step() {
        let err = NoiseSchedule::new(ScheduleKind::Linear { beta_min: 0.5, beta_max: 0.999_999 }, 5000).unwrap_err();
        match err {
            Error::Schedule { t, .. } => assert!(t > 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(NoiseSchedule::new(ScheduleKind::Linear { beta_min: 0.1, beta_max: 0.01 }, 10).is_err());
        assert!(NoiseSchedule::new(ScheduleKind::linear(), 1).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ScheduleSpec::default();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("continuous-cosine"), "{json}");
        let back: ScheduleSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
