//! Principal axes of a seed cloud.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::denoiser::DenoiserNet;
use crate::diffusion::generate_batch;
use crate::error::{Error, Result};
use crate::io;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// `d x d`, one unit component per row, by descending eigenvalue.
    pub components: Tensor,
    /// Non-negative, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaResult {
    pub fn component(&self, i: usize) -> &[f64] {
        self.components.row(i)
    }

    /// Columns: component index, eigenvalue, component coordinates.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.mean.len();
        let mut header = vec!["component".to_string(), "eigenvalue".to_string()];
        header.extend((0..d).map(|j| format!("v{j}")));
        let rows = (0..d).map(|i| {
            let mut rec = vec![i.to_string(), io::fmt_f64(self.eigenvalues[i])];
            rec.extend(self.component(i).iter().map(|&v| io::fmt_f64(v)));
            rec
        });
        io::write_records(out, &header, rows)
    }
}

/// Eigendecomposition of the sample covariance (divisor `m - 1`). Each
/// component is signed so that its largest-magnitude entry is positive.
pub fn pca_cloud(seeds: &Tensor) -> Result<PcaResult> {
    let (m, d) = seeds.dims2("pca_cloud")?;
    if m < 2 || d == 0 {
        return Err(Error::invalid(format!("PCA needs at least 2 seeds, got {m}")));
    }
    if !seeds.is_finite() {
        return Err(Error::NonFinite("seed cloud".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..m).map(|i| seeds.at(i, j)).sum::<f64>() / m as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..m {
        let row = seeds.row(i);
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (m - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(d * d);
    for &c in &order {
        let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        components.extend(v.iter().map(|x| sign * x));
    }
    let eigenvalues = order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
    Ok(PcaResult { mean, components: Tensor::from_parts(vec![d, d], components), eigenvalues })
}

/// Outputs for the seeds `mean + f * sqrt(lambda_i) * v_i`, one per factor.
pub fn traverse_component(net: &DenoiserNet, schedule: &NoiseSchedule, pca: &PcaResult, index: usize, factors: &[f64], k: usize) -> Result<Tensor> {
    let d = pca.mean.len();
    if index >= d {
        return Err(Error::invalid(format!("component {index} out of range for {d} components")));
    }
    let scale = pca.eigenvalues[index].sqrt();
    let v = pca.component(index);
    let seeds: Vec<f64> = factors.iter().flat_map(|&f| (0..d).map(move |j| pca.mean[j] + f * scale * v[j])).collect();
    let (out, _) = generate_batch(net, schedule, &Tensor::from_parts(vec![factors.len(), d], seeds), k, 1)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::schedule::ScheduleKind;

    #[test]
    fn two_point_cloud() {
        let p = pca_cloud(&Tensor::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(p.eigenvalues, vec![2.0, 0.0]);
        assert_eq!(p.components, Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
        assert!(pca_cloud(&Tensor::from_rows(&[[1.0, 0.0]]).unwrap()).is_err());
    }

    fn cloud() -> Tensor {
        let rows: Vec<[f64; 3]> = (0..40)
            .map(|i| {
                let t = i as f64;
                [3.0 * (0.37 * t).sin() + 1.0, (1.3 * t).cos() - 2.0, 0.2 * (2.1 * t).sin() + 0.1 * (0.7 * t).cos()]
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn components_orthonormal_and_reconstruct_covariance() {
        let x = cloud();
        let p = pca_cloud(&x).unwrap();
        let d = 3;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|j| p.components.at(a, j) * p.components.at(b, j)).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
            let v = p.component(a);
            let lead = v.iter().copied().max_by(|u, w| u.abs().total_cmp(&w.abs())).unwrap();
            assert!(lead > 0.0);
        }
        assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]) && p.eigenvalues[d - 1] >= 0.0);
        let m = x.rows() as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for a in 0..d {
            for b in 0..d {
                let c: f64 = (0..x.rows()).map(|i| (x.at(i, a) - p.mean[a]) * (x.at(i, b) - p.mean[b])).sum::<f64>() / (m - 1.0);
                let r: f64 = (0..d).map(|k| p.eigenvalues[k] * p.components.at(k, a) * p.components.at(k, b)).sum();
                num += (c - r).powi(2);
                den += c * c;
            }
        }
        assert!((num / den).sqrt() < 1e-8);
    }

    #[test]
    fn rotation_equivariance() {
        let base = Tensor::from_rows(&[[2.0, 0.1], [-2.0, -0.1], [1.0, 0.4], [-1.0, -0.5], [0.3, 0.2]]).unwrap();
        let (c, s) = (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2);
        let rotated: Vec<[f64; 2]> = (0..base.rows()).map(|i| {
            let (x, y) = (base.at(i, 0), base.at(i, 1));
            [c * x - s * y, s * x + c * y]
        }).collect();
        let p = pca_cloud(&base).unwrap();
        let q = pca_cloud(&Tensor::from_rows(&rotated).unwrap()).unwrap();
        for k in 0..2 {
            assert!((p.eigenvalues[k] - q.eigenvalues[k]).abs() < 1e-10);
            let v = p.component(k);
            let rv = [c * v[0] - s * v[1], s * v[0] + c * v[1]];
            let dot = rv[0] * q.component(k)[0] + rv[1] * q.component(k)[1];
            assert!((dot.abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn traversal_examples() {
        let net = DenoiserNet::init(2, &DenoiserConfig { widths: vec![8], ..Default::default() }, 1).unwrap();
        let s = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 50).unwrap();
        let p = pca_cloud(&Tensor::from_rows(&[[1.0, 0.5], [-1.0, 0.0], [0.2, -0.4]]).unwrap()).unwrap();
        let out = traverse_component(&net, &s, &p, 1, &[0.0, 1.5], 5).unwrap();
        let (mean_out, _) = generate_batch(&net, &s, &Tensor::from_rows(std::slice::from_ref(&p.mean)).unwrap(), 5, 1).unwrap();
        assert_eq!(out.row(0), mean_out.row(0));
        assert!(traverse_component(&net, &s, &p, 2, &[0.0], 5).is_err());
    }
}
