//! Properties of trained denoisers. Each model is trained once per test
//! binary and shared between tests; data is normalized to unit variance as
//! in the experiment pipeline.

use std::sync::OnceLock;

use ddimlab::datasets::normalize;
use ddimlab::diffusion::{diffuse_alphas, estimate_x0};
use ddimlab::embedding::{emb_cloud_from_grid, grav_map, median, pca_cloud, traverse_component, GravMap};
use ddimlab::rng::{self, streams};
use ddimlab::{generate_batch, train, Affine, DatasetSpec, DenoiserConfig, DenoiserNet, NoiseSchedule, PointSet, ScheduleKind, Tensor, TrainConfig};

const SEED: u64 = 11;
const K: usize = 25;

struct Trained {
    net: DenoiserNet,
    schedule: NoiseSchedule,
    data: PointSet,
    affine: Affine,
}

fn fit(spec: DatasetSpec, epochs: usize) -> Trained {
    let (data, affine) = normalize(&spec.generate(SEED).unwrap()).unwrap();
    let schedule = NoiseSchedule::new(ScheduleKind::continuous_cosine(), 1000).unwrap();
    let init = DenoiserNet::init(2, &DenoiserConfig::default(), SEED).unwrap();
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let (net, _) = train(&init, &data.points, &schedule, &cfg, SEED).unwrap();
    Trained { net, schedule, data, affine }
}

fn moons() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| fit(DatasetSpec::two_moons(), 400))
}

/// Fine seed grid; at 61x61 the noise tail and the grid spacing leave about
/// 15% of datapoints without a grid output within tolerance.
fn moons_map() -> &'static GravMap {
    static G: OnceLock<GravMap> = OnceLock::new();
    G.get_or_init(|| {
        let m = moons();
        let grid = ddimlab::datasets::gen_grid(&[(-3.0, 3.0), (-3.0, 3.0)], 201).unwrap();
        grav_map(&m.net, &m.schedule, &m.data, &grid, K, 0.05, 1).unwrap()
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn probes(n: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(&mut rng::stream(SEED, streams::PROBES), n, count).into_vec()
}

#[test]
fn blob_reverse_map_lands_near_centers() {
    let spec = DatasetSpec::Blobs { n: 2048, centers: vec![vec![-2.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.5]], std: 0.3 };
    let m = fit(spec, 150);
    let grid = ddimlab::datasets::gen_grid(&[(-3.0, 3.0), (-3.0, 3.0)], 61).unwrap();
    let (out, _) = generate_batch(&m.net, &m.schedule, &grid.points, K, 1).unwrap();
    let out = m.affine.invert(&out);
    let centers = [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]];
    let near = (0..out.rows()).filter(|&i| centers.iter().any(|c| dist(out.row(i), c) < 3.0 * 0.3)).count();
    let frac = near as f64 / out.rows() as f64;
    assert!(frac > 0.95, "only {frac:.3} of outputs within three std of a center");
}

#[test]
fn circle_arrows_are_radial() {
    let m = fit(DatasetSpec::Circles { n: 2048, radii: vec![1.0], noise: 0.02 }, 150);
    let grid = ddimlab::datasets::gen_grid(&[(-3.0, 3.0), (-3.0, 3.0)], 61).unwrap();
    let map = grav_map(&m.net, &m.schedule, &m.data, &grid, K, 0.05, 1).unwrap();
    let (mut assigned, mut radial) = (0, 0);
    for i in 0..grid.len() {
        if map.assignment[i].is_none() {
            continue;
        }
        let end = map.outputs.row(i);
        let arrow: Vec<f64> = end.iter().zip(grid.point(i)).map(|(e, s)| e - s).collect();
        let cos = (arrow[0] * end[0] + arrow[1] * end[1]) / (dist(&arrow, &[0.0, 0.0]) * dist(end, &[0.0, 0.0]));
        assigned += 1;
        radial += usize::from(cos.abs() > std::f64::consts::FRAC_1_SQRT_2);
    }
    assert!(assigned > 100, "only {assigned} arrows assigned");
    let frac = radial as f64 / assigned as f64;
    assert!(frac > 0.9, "radial fraction {frac:.3}");
}

#[test]
fn denoiser_beats_rescaling_baseline() {
    let m = moons();
    let idx = probes(m.data.len(), 256);
    let x0 = m.data.points.select_rows(&idx);
    let eps = Tensor::new(vec![256, 2], rng::normal_vec(&mut rng::stream(SEED, streams::DDPM_NOISE), 512)).unwrap();
    let alpha = 0.5;
    let x_t = diffuse_alphas(&x0, &[alpha; 256], &eps).unwrap();
    let x0_hat = estimate_x0(&m.net, &x_t, alpha).unwrap();
    let (mut ours, mut base) = (0.0, 0.0);
    for i in 0..256 {
        let rescaled: Vec<f64> = x_t.row(i).iter().map(|v| v / alpha.sqrt()).collect();
        ours += dist(x0_hat.row(i), x0.row(i));
        base += dist(&rescaled, x0.row(i));
    }
    assert!(ours < base, "denoiser error {ours:.3} vs baseline {base:.3}");
}

#[test]
fn grid_clouds_cover_most_probes() {
    let m = moons();
    let map = moons_map();
    let nonempty = probes(m.data.len(), 32)
        .into_iter()
        .filter(|&i| !emb_cloud_from_grid(map, m.data.point(i), 0.05).unwrap().is_empty())
        .count();
    assert!(nonempty >= 29, "{nonempty} of 32 clouds nonempty");
}

#[test]
fn clouds_are_elongated_and_minor_axis_moves_output() {
    let m = moons();
    let map = moons_map();
    let (mut elongation, mut top, mut bottom) = (Vec::new(), 0.0, 0.0);
    for i in probes(m.data.len(), 16) {
        let cloud = emb_cloud_from_grid(map, m.data.point(i), 0.05).unwrap();
        if cloud.len() < 3 {
            continue;
        }
        let pca = pca_cloud(&cloud.seeds).unwrap();
        elongation.push(pca.eigenvalues[0] / pca.eigenvalues[1].max(1e-300));
        for (comp, acc) in [(0, &mut top), (1, &mut bottom)] {
            let out = traverse_component(&m.net, &m.schedule, &pca, comp, &[-1.0, 1.0], K).unwrap();
            *acc += dist(out.row(0), out.row(1));
        }
    }
    assert!(elongation.len() >= 12, "only {} usable clouds", elongation.len());
    let med = median(&elongation);
    assert!(med > 3.0, "median elongation {med:.2}");
    assert!(bottom > top, "minor-axis displacement {bottom:.3} vs top {top:.3}");
}
