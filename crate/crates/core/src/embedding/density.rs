//! Where the generator puts its mass when seeds are standard normal.

use std::f64::consts::PI;
use std::io::Write;

use super::dist2;
use crate::datasets::{gen_grid, PointSet};
use crate::denoiser::DenoiserNet;
use crate::diffusion::generate_batch;
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, streams};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// A Gaussian kernel density estimate of generated samples, tabulated on a
/// regular grid and normalized there to unit mass.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub grid: PointSet,
    pub values: Vec<f64>,
    pub cell_area: f64,
    pub samples: Tensor,
    pub bandwidth: f64,
    /// Factor turning the raw kernel average into the normalized density.
    norm: f64,
}

fn kernel_average(samples: &Tensor, bandwidth: f64, p: &[f64]) -> f64 {
    let d = p.len() as f64;
    let coef = (2.0 * PI * bandwidth * bandwidth).powf(-d / 2.0);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let total: f64 = (0..samples.rows()).map(|j| (-dist2(samples.row(j), p) * inv).exp()).sum();
    coef * total / samples.rows() as f64
}

impl DensityGrid {
    /// Kernel density of `samples` tabulated on a grid.
    pub fn from_samples(samples: Tensor, bounds: &[(f64, f64)], resolution: usize, bandwidth: f64) -> Result<Self> {
        if samples.rows() == 0 || !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("need samples and a positive bandwidth, got {} and {bandwidth}", samples.rows())));
        }
        if bounds.len() != samples.cols() || resolution < 2 {
            return Err(Error::invalid(format!("need {} axis bounds and at least 2 points per axis", samples.cols())));
        }
        let grid = gen_grid(bounds, resolution)?;
        let cell_area: f64 = bounds.iter().map(|(lo, hi)| (hi - lo) / (resolution - 1) as f64).product();
        let raw: Vec<f64> = (0..grid.len()).map(|i| kernel_average(&samples, bandwidth, grid.point(i))).collect();
        let mass = raw.iter().sum::<f64>() * cell_area;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NonFinite(format!("density mass on the grid is {mass}")));
        }
        let norm = 1.0 / mass;
        let values = raw.into_iter().map(|v| v * norm).collect();
        Ok(DensityGrid { grid, values, cell_area, samples, bandwidth, norm })
    }

    /// Density at arbitrary points, on the same normalization as the grid.
    pub fn density_at(&self, points: &Tensor) -> Vec<f64> {
        (0..points.rows()).map(|i| self.norm * kernel_average(&self.samples, self.bandwidth, points.row(i))).collect()
    }

    /// Riemann sum over the grid cells; one by construction.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.grid.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("density".into());
        let rows = (0..self.grid.len()).map(|i| {
            let mut r = self.grid.point(i).to_vec();
            r.push(self.values[i]);
            r
        });
        io::write_csv(out, &header, rows)
    }
}

/// Generates from `m` standard normal seeds and estimates the output
/// density on a `resolution`-per-axis grid spanning `bounds`.
#[allow(clippy::too_many_arguments)]
pub fn pushforward_density(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    bounds: &[(f64, f64)],
    resolution: usize,
    m: usize,
    bandwidth: f64,
    k: usize,
    seed: u64,
    workers: usize,
) -> Result<DensityGrid> {
    if m == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if bounds.len() != net.dim || resolution < 2 {
        return Err(Error::invalid(format!("need {} axis bounds and at least 2 points per axis", net.dim)));
    }
    let seeds = Tensor::from_parts(vec![m, net.dim], rng::normal_vec(&mut rng::stream(seed, streams::SEEDS), m * net.dim));
    let (samples, _) = generate_batch(net, schedule, &seeds, k, workers)?;
    DensityGrid::from_samples(samples, bounds, resolution, bandwidth)
}
