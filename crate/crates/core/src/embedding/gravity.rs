//! The gravitational view of reverse diffusion: every latent point lands on
//! the data manifold as if attracted by the datapoints.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dist2;
use super::seeds::{CloudSource, SeedCloud};
use crate::datasets::PointSet;
use crate::denoiser::DenoiserNet;
use crate::diffusion::generate_batch;
use crate::error::{Error, Result};
use crate::io;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Which distance multiplies the Gaussian in the weighted attraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    #[default]
    L2,
    L1,
}

impl Distance {
    fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::L2 => dist2(a, b).sqrt(),
            Distance::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// Weighted attraction of `x` on `z`: the isotropic Gaussian density
/// `N(z | x, sigma^2 I)` times the distance between them.
pub fn grav_weight(z: &[f64], x: &[f64], sigma: f64, distance: Distance) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if z.len() != x.len() {
        return Err(Error::shape("grav_weight", format!("{} vs {} coordinates", z.len(), x.len())));
    }
    let d = z.len() as f64;
    let density = (2.0 * PI * sigma * sigma).powf(-d / 2.0) * (-dist2(z, x) / (2.0 * sigma * sigma)).exp();
    Ok(density * distance.between(z, x))
}

/// Radial profiles of the weighted attraction and of Newtonian gravity for
/// a constant-density body of radius `sigma`, each scaled to unit integral.
#[derive(Clone, Debug, PartialEq)]
pub struct GravProfile {
    pub r: Vec<f64>,
    pub weighted: Vec<f64>,
    pub gravity: Vec<f64>,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

pub fn grav_profile_export(sigma: f64, r: &[f64]) -> Result<GravProfile> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if r.len() < 2 || r[0] <= 0.0 || r.windows(2).any(|w| w[1] <= w[0]) || !r.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("radius grid must be positive, finite and strictly ascending"));
    }
    let weighted: Vec<f64> = r.iter().map(|&v| grav_weight(&[v], &[0.0], sigma, Distance::L2)).collect::<Result<_>>()?;
    // Field strength of a uniform ball: linear inside, inverse square outside.
    let gravity: Vec<f64> = r.iter().map(|&v| if v < sigma { v / sigma.powi(3) } else { 1.0 / (v * v) }).collect();
    let normalize = |y: Vec<f64>| -> Vec<f64> {
        let area = trapezoid(r, &y);
        y.into_iter().map(|v| v / area).collect()
    };
    Ok(GravProfile { r: r.to_vec(), weighted: normalize(weighted), gravity: normalize(gravity) })
}

impl GravProfile {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let header = ["r", "weighted", "gravity"].map(String::from);
        let rows = (0..self.r.len()).map(|i| vec![self.r[i], self.weighted[i], self.gravity[i]]);
        io::write_csv(out, &header, rows)
    }
}

/// Where every grid seed lands, and which datapoint (if any) it reached.
#[derive(Clone, Debug)]
pub struct GravMap {
    pub grid: PointSet,
    pub outputs: Tensor,
    /// Index of the nearest datapoint when it lies within `tau`.
    pub assignment: Vec<Option<usize>>,
    pub tau: f64,
    pub k: usize,
}

/// Index and squared distance of the nearest row of `data`; ties go to the
/// lowest index.
fn nearest(data: &PointSet, p: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..data.len() {
        let d = dist2(data.point(j), p);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((j, d));
        }
    }
    best
}

pub fn grav_map(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    data: &PointSet,
    grid: &PointSet,
    k: usize,
    tau: f64,
    workers: usize,
) -> Result<GravMap> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("tau must be non-negative, got {tau}")));
    }
    if data.dim() != grid.dim() {
        return Err(Error::shape("grav_map", format!("{}-d data with a {}-d grid", data.dim(), grid.dim())));
    }
    let (outputs, _) = generate_batch(net, schedule, &grid.points, k, workers)?;
    let assignment = (0..grid.len())
        .map(|i| nearest(data, outputs.row(i)).filter(|&(_, d)| d.sqrt() <= tau).map(|(j, _)| j))
        .collect();
    Ok(GravMap { grid: grid.clone(), outputs, assignment, tau, k })
}

impl GravMap {
    pub fn assigned(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    /// Columns: grid coordinates, output coordinates, assigned index (-1 when none).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.grid.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("seed{j}")).collect();
        header.extend((0..d).map(|j| format!("out{j}")));
        header.push("assigned".into());
        let rows = (0..self.grid.len()).map(|i| {
            let mut rec: Vec<String> = self.grid.point(i).iter().chain(self.outputs.row(i)).map(|&v| io::fmt_f64(v)).collect();
            rec.push(self.assignment[i].map_or("-1".to_string(), |j| j.to_string()));
            rec
        });
        io::write_records(out, &header, rows)
    }
}

/// Grid seeds whose output lies within `tol` of `x`.
pub fn emb_cloud_from_grid(map: &GravMap, x: &[f64], tol: f64) -> Result<SeedCloud> {
    let d = map.grid.dim();
    if x.len() != d {
        return Err(Error::shape("emb_cloud_from_grid", format!("{}-d target for a {d}-d map", x.len())));
    }
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for i in 0..map.grid.len() {
        let e = dist2(map.outputs.row(i), x);
        if e.sqrt() <= tol {
            rows.push(i);
            errors.push(e);
        }
    }
    let seeds = if rows.is_empty() { Tensor::zeros(vec![0, d]) } else { map.grid.points.select_rows(&rows) };
    Ok(SeedCloud {
        target: x.to_vec(),
        seeds,
        initial_errors: errors.clone(),
        recon_errors: errors,
        failed: vec![false; rows.len()],
        source: CloudSource::Grid { tol },
        steps: 0,
        lr: 0.0,
        k: map.k,
    })
}
