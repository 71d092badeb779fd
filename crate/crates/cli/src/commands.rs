//! One function per subcommand. Each reads the config (and a checkpoint
//! where needed), runs the matching library operation, writes its artifacts
//! into the output directory and returns a summary.
//!
//! Commands split into a loader and a `*_with` body taking an already
//! loaded [`Model`], which the acceptance runner reuses.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ddimlab::checkpoint::{Checkpoint, Provenance};
use ddimlab::datasets::{gen_grid, normalize};
use ddimlab::embedding::{
    convex_combos, emb_cloud_from_grid, embed_gd_targets, grav_map, grav_profile_export, median, paired_outputs, pca_cloud,
    progressive_mean, pushforward_density, refine_seed_gd, traverse_component, train_embed_net, EmbedNet, SeedCloud,
};
use ddimlab::rng::{self, streams};
use ddimlab::svg::{BLUE, GREEN, ORANGE, RED};
use ddimlab::{generate_batch, io, train, Affine, DenoiserNet, NoiseSchedule, PointSet, Tensor};
use rand::seq::index;
use serde::Serialize;

use crate::config::{CloudKind, GridParams, RunConfig};
use crate::plot::{Figure, Layer};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Everything a command needs besides its own parameters.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub workers: usize,
    pub timestamp: bool,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>, workers: usize, timestamp: bool) -> Result<Self> {
        let out = out.into();
        fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
        Ok(Ctx { cfg, out, workers: workers.max(1), timestamp })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))
    }

    fn csv(&self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let p = self.path(name);
        let file = fs::File::create(&p).with_context(|| format!("cannot write {}", p.display()))?;
        io::write_records(BufWriter::new(file), header, rows)?;
        Ok(())
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    fn persist_config(&self) -> Result<()> {
        self.write("config.json", self.cfg.to_json())
    }

    fn figure(&self, sets: &[&Tensor]) -> Figure {
        Figure::covering(sets, self.timestamp)
    }
}

/// A trained denoiser with the (normalized) data it was trained on.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub data: PointSet,
    pub normalization: Affine,
}

/// The config's dataset, normalized by `affine` when given, otherwise to
/// zero mean and unit variance.
pub fn dataset(cfg: &RunConfig, affine: Option<&Affine>) -> Result<(PointSet, Affine)> {
    dataset_with_seed(cfg, cfg.run_seed, affine)
}

fn dataset_with_seed(cfg: &RunConfig, seed: u64, affine: Option<&Affine>) -> Result<(PointSet, Affine)> {
    let raw = cfg.dataset.generate(seed)?;
    Ok(match affine {
        Some(a) => (PointSet::new(a.apply(&raw.points), raw.label.clone(), raw.seed)?, a.clone()),
        None => normalize(&raw)?,
    })
}

/// Loads the checkpoint and checks it against the config.
pub fn load_model(ctx: &Ctx) -> Result<Model> {
    let path = ctx.cfg.checkpoint_path(&ctx.out);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    let net = ckpt.net().with_context(|| format!("checkpoint {} is corrupt", path.display()))?;
    if ckpt.schedule != ctx.cfg.schedule {
        bail!(
            "checkpoint {} was trained with schedule {:?} but the config asks for {:?}",
            path.display(),
            ckpt.schedule,
            ctx.cfg.schedule
        );
    }
    let (data, normalization) = dataset(&ctx.cfg, ckpt.normalization.as_ref())?;
    ensure!(data.dim() == net.dim, "checkpoint is {}-d but the dataset is {}-d", net.dim, data.dim());
    Ok(Model { net, schedule: ckpt.noise_schedule()?, data, normalization })
}

/// `count` distinct dataset rows, drawn from the probe stream.
pub fn probe_indices(n: usize, count: usize, run_seed: u64) -> Result<Vec<usize>> {
    ensure!(count <= n, "asked for {count} probe points from {n} datapoints");
    Ok(index::sample(&mut rng::stream(run_seed, streams::PROBES), n, count).into_vec())
}

fn f(v: f64) -> String {
    io::fmt_f64(v)
}

fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over `points` of the distance to the closest row of `data`.
pub fn mean_nearest_distance(points: &Tensor, data: &Tensor) -> f64 {
    let per_point: Vec<f64> = (0..points.rows())
        .map(|i| (0..data.rows()).map(|j| dist(points.row(i), data.row(j))).fold(f64::INFINITY, f64::min))
        .collect();
    mean(&per_point)
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub parameters: usize,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

pub fn cmd_train(ctx: &Ctx) -> Result<(TrainSummary, Model)> {
    let cfg = &ctx.cfg;
    ctx.persist_config()?;
    let (data, normalization) = dataset(cfg, None)?;
    let schedule = cfg.schedule.build()?;
    let init = DenoiserNet::init(data.dim(), &cfg.net, cfg.run_seed)?;
    let start = std::time::Instant::now();
    let (net, report) = train(&init, &data.points, &schedule, &cfg.train, cfg.run_seed).context("training failed")?;
    let seconds = start.elapsed().as_secs_f64();

    let provenance = Provenance { dataset: data.label.clone(), epochs: report.epochs, run_seed: cfg.run_seed, final_loss: report.final_loss };
    let ckpt = Checkpoint::new(&net, cfg.schedule, Some(normalization.clone()), provenance)?;
    let path = ctx.path(CHECKPOINT_FILE);
    ckpt.save(&path).with_context(|| format!("cannot write {}", path.display()))?;
    ctx.csv(
        "loss.csv",
        &["epoch".into(), "loss".into()],
        report.epoch_losses.iter().enumerate().map(|(e, &l)| vec![(e + 1).to_string(), f(l)]),
    )?;
    let summary = TrainSummary { epochs: report.epochs, final_loss: report.final_loss, parameters: net.mlp.num_params(), checkpoint: path, seconds };
    println!("final loss {}", report.final_loss);
    Ok((summary, Model { net, schedule, data, normalization }))
}

// ------------------------------------------------------------- generate

#[derive(Clone, Debug, Serialize)]
pub struct GenerateSummary {
    pub n: usize,
    pub k: usize,
    /// NaN when nothing was generated.
    pub mean_nearest_distance: f64,
    pub seconds: f64,
}

pub fn cmd_generate(ctx: &Ctx) -> Result<GenerateSummary> {
    let model = load_model(ctx)?;
    generate_with(ctx, &model)
}

/// Standard normal seeds from the seed stream.
pub fn normal_seeds(n: usize, d: usize, run_seed: u64) -> Tensor {
    Tensor::new(vec![n, d], rng::normal_vec(&mut rng::stream(run_seed, streams::SEEDS), n * d)).expect("length matches shape")
}

pub fn generate_with(ctx: &Ctx, model: &Model) -> Result<GenerateSummary> {
    ctx.persist_config()?;
    let p = &ctx.cfg.generate;
    let d = model.net.dim;
    let seeds = normal_seeds(p.n, d, ctx.cfg.run_seed);
    let start = std::time::Instant::now();
    let outputs = if p.n == 0 { Tensor::zeros(vec![0, d]) } else { generate_batch(&model.net, &model.schedule, &seeds, p.k, ctx.workers)?.0 };
    let seconds = start.elapsed().as_secs_f64();
    let mut header = coord_header("seed", d);
    header.extend(coord_header("x", d));
    ctx.csv("generated.csv", &header, (0..p.n).map(|i| seeds.row(i).iter().chain(outputs.row(i)).map(|&v| f(v)).collect()))?;

    let mut fig = ctx.figure(&[&model.data.points, &outputs]);
    fig.scatter(&Layer { points: &model.data.points, color: BLUE, radius: 1.2, opacity: 0.35 });
    fig.scatter(&Layer { points: &outputs, color: RED, radius: 1.8, opacity: 0.8 });
    ctx.write("generated.svg", fig.render())?;

    let mean_nearest_distance = if p.n == 0 { f64::NAN } else { mean_nearest_distance(&outputs, &model.data.points) };
    let summary = GenerateSummary { n: p.n, k: p.k, mean_nearest_distance, seconds };
    ctx.json("generate_summary.json", &summary)?;
    Ok(summary)
}

// -------------------------------------------------------------- gravmap

#[derive(Clone, Debug, Serialize)]
pub struct GravmapSummary {
    pub grid_points: usize,
    pub assigned: usize,
    pub tau: f64,
    /// Assigned arrows closer to the radial than to the tangential
    /// direction at their endpoint (radial about the origin).
    pub radial_fraction: f64,
    pub probes: usize,
    pub nonempty_clouds: usize,
}

pub fn cmd_gravmap(ctx: &Ctx) -> Result<GravmapSummary> {
    let model = load_model(ctx)?;
    gravmap_with(ctx, &model)
}

fn grid(p: &GridParams) -> Result<PointSet> {
    Ok(gen_grid(&p.bounds, p.resolution)?)
}

/// |cos| between `v` and the unit vector from the origin towards `at`.
fn radial_cos(v: &[f64], at: &[f64]) -> f64 {
    let (nv, na) = (v.iter().map(|x| x * x).sum::<f64>().sqrt(), at.iter().map(|x| x * x).sum::<f64>().sqrt());
    if nv == 0.0 || na == 0.0 {
        return 0.0;
    }
    (v.iter().zip(at).map(|(a, b)| a * b).sum::<f64>() / (nv * na)).abs()
}

pub fn gravmap_with(ctx: &Ctx, model: &Model) -> Result<GravmapSummary> {
    ctx.persist_config()?;
    let p = &ctx.cfg.gravmap;
    let seeds = grid(&p.grid)?;
    let map = grav_map(&model.net, &model.schedule, &model.data, &seeds, p.k, p.tau, ctx.workers)?;
    map.write_csv(BufWriter::new(fs::File::create(ctx.path("gravmap.csv"))?))?;

    let assigned: Vec<usize> = (0..seeds.len()).filter(|&i| map.assignment[i].is_some()).collect();
    let radial = assigned
        .iter()
        .filter(|&&i| {
            let arrow: Vec<f64> = map.outputs.row(i).iter().zip(seeds.point(i)).map(|(o, s)| o - s).collect();
            radial_cos(&arrow, map.outputs.row(i)) > std::f64::consts::FRAC_1_SQRT_2
        })
        .count();

    let probes = probe_indices(model.data.len(), p.probes, ctx.cfg.run_seed)?;
    let d = model.net.dim;
    let mut rows = Vec::new();
    let mut nonempty = 0;
    for (pi, &idx) in probes.iter().enumerate() {
        let cloud = emb_cloud_from_grid(&map, model.data.point(idx), p.tol)?;
        nonempty += usize::from(!cloud.is_empty());
        for i in 0..cloud.len() {
            let mut r = vec![pi.to_string(), idx.to_string()];
            r.extend(cloud.seeds.row(i).iter().map(|&v| f(v)));
            r.push(f(cloud.recon_errors[i]));
            rows.push(r);
        }
    }
    let mut header = vec!["probe".to_string(), "datapoint".to_string()];
    header.extend(coord_header("seed", d));
    header.push("error".into());
    ctx.csv("grid_clouds.csv", &header, rows)?;

    let r: Vec<f64> = (1..=p.profile_points).map(|i| p.profile_r_max * i as f64 / p.profile_points as f64).collect();
    let profile = grav_profile_export(p.profile_sigma, &r)?;
    profile.write_csv(BufWriter::new(fs::File::create(ctx.path("gravity_profile.csv"))?))?;

    let mut fig = ctx.figure(&[&seeds.points, &map.outputs]);
    fig.scatter(&Layer { points: &model.data.points, color: BLUE, radius: 1.0, opacity: 0.25 });
    fig.segments(&seeds.points, &map.outputs, assigned.iter().copied(), GREEN, 0.5);
    fig.scatter(&Layer { points: &seeds.points, color: GREEN, radius: 1.5, opacity: 0.8 });
    fig.scatter(&Layer { points: &map.outputs, color: RED, radius: 1.5, opacity: 0.8 });
    ctx.write("gravmap.svg", fig.render())?;

    let summary = GravmapSummary {
        grid_points: seeds.len(),
        assigned: assigned.len(),
        tau: p.tau,
        radial_fraction: if assigned.is_empty() { f64::NAN } else { radial as f64 / assigned.len() as f64 },
        probes: probes.len(),
        nonempty_clouds: nonempty,
    };
    ctx.json("gravmap_summary.json", &summary)?;
    println!("{} of {} grid seeds assigned", summary.assigned, summary.grid_points);
    Ok(summary)
}

// ------------------------------------------------------------- embed-gd

#[derive(Clone, Debug, Serialize)]
pub struct TargetStats {
    pub datapoint: usize,
    pub median_error: f64,
    pub median_combo_error: f64,
    /// Median combination error over median member error.
    pub combo_ratio: f64,
    /// Error of the mean of the first k seeds, k = 1, 2, ...
    pub progressive: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EmbedGdSummary {
    pub targets: usize,
    pub seeds_per_target: usize,
    /// Median over every seed of every cloud.
    pub median_error: f64,
    pub failed_seeds: usize,
    /// Fraction of targets whose combination ratio is below 3.
    pub convex_fraction: f64,
    /// Progressive-mean curve averaged over targets.
    pub mean_progressive: Vec<f64>,
    pub per_target: Vec<TargetStats>,
    pub seconds: f64,
}

pub fn cmd_embed_gd(ctx: &Ctx) -> Result<EmbedGdSummary> {
    let model = load_model(ctx)?;
    embed_gd_with(ctx, &model).map(|(s, _)| s)
}

pub fn embed_gd_with(ctx: &Ctx, model: &Model) -> Result<(EmbedGdSummary, Vec<SeedCloud>)> {
    ctx.persist_config()?;
    let p = &ctx.cfg.embed_gd;
    let seed = ctx.cfg.run_seed;
    let probes = probe_indices(model.data.len(), p.targets, seed)?;
    let targets = model.data.points.select_rows(&probes);
    let start = std::time::Instant::now();
    let clouds = embed_gd_targets(&model.net, &model.schedule, &targets, &p.gd, seed, ctx.workers)?;
    let seconds = start.elapsed().as_secs_f64();

    let d = model.net.dim;
    let mut per_target = Vec::with_capacity(clouds.len());
    let (mut combo_rows, mut prog_rows) = (Vec::new(), Vec::new());
    for (i, cloud) in clouds.iter().enumerate() {
        let (median_combo_error, combo_ratio) = if p.combos > 0 && cloud.len() >= 2 {
            let combos = convex_combos(&model.net, &model.schedule, cloud, p.combos, p.signed, seed.wrapping_add(i as u64))?;
            combo_rows.extend(combos.errors.iter().enumerate().map(|(c, &e)| vec![i.to_string(), c.to_string(), f(e)]));
            let mc = median(&combos.errors);
            (mc, mc / cloud.median_error())
        } else {
            (f64::NAN, f64::NAN)
        };
        let ks: Vec<usize> = (1..=p.progressive.min(cloud.len())).collect();
        let progressive = if ks.is_empty() { Vec::new() } else { progressive_mean(&model.net, &model.schedule, cloud, &ks)? };
        prog_rows.extend(ks.iter().zip(&progressive).map(|(k, &e)| vec![i.to_string(), k.to_string(), f(e)]));
        per_target.push(TargetStats { datapoint: probes[i], median_error: cloud.median_error(), median_combo_error, combo_ratio, progressive });
    }

    let mut header = vec!["target".to_string()];
    header.extend(coord_header("seed", d));
    header.extend(["initial_error", "error", "failed"].map(String::from));
    let rows = clouds.iter().enumerate().flat_map(|(t, c)| {
        (0..c.len()).map(move |i| {
            let mut r = vec![t.to_string()];
            r.extend(c.seeds.row(i).iter().map(|&v| f(v)));
            r.extend([f(c.initial_errors[i]), f(c.recon_errors[i]), u8::from(c.failed[i]).to_string()]);
            r
        })
    });
    ctx.csv("clouds.csv", &header, rows)?;
    ctx.csv("combos.csv", &["target".into(), "combo".into(), "error".into()], combo_rows)?;
    ctx.csv("progressive.csv", &["target".into(), "k".into(), "error".into()], prog_rows)?;

    let all_seeds: Vec<f64> = clouds.iter().flat_map(|c| c.seeds.data().iter().copied()).collect();
    let all_seeds = Tensor::new(vec![all_seeds.len() / d.max(1), d], all_seeds)?;
    let mut fig = ctx.figure(&[&model.data.points, &all_seeds]);
    fig.scatter(&Layer { points: &model.data.points, color: BLUE, radius: 1.0, opacity: 0.25 });
    fig.scatter(&Layer { points: &all_seeds, color: GREEN, radius: 1.5, opacity: 0.6 });
    fig.scatter(&Layer { points: &targets, color: RED, radius: 3.0, opacity: 1.0 });
    ctx.write("embed_gd.svg", fig.render())?;

    let all_errors: Vec<f64> = clouds.iter().flat_map(|c| c.recon_errors.iter().copied()).collect();
    let ratios: Vec<f64> = per_target.iter().map(|t| t.combo_ratio).collect();
    let len = per_target.iter().map(|t| t.progressive.len()).min().unwrap_or(0);
    let mean_progressive = (0..len).map(|k| mean(&per_target.iter().map(|t| t.progressive[k]).collect::<Vec<_>>())).collect();
    let summary = EmbedGdSummary {
        targets: clouds.len(),
        seeds_per_target: p.gd.seeds,
        median_error: median(&all_errors),
        failed_seeds: clouds.iter().map(|c| c.failed.iter().filter(|&&x| x).count()).sum(),
        convex_fraction: ratios.iter().filter(|&&r| r < 3.0).count() as f64 / ratios.len().max(1) as f64,
        mean_progressive,
        per_target,
        seconds,
    };
    ctx.json("embed_gd_summary.json", &summary)?;
    println!("median reconstruction error {}", summary.median_error);
    Ok((summary, clouds))
}

// ------------------------------------------------------------ embed-net

#[derive(Clone, Debug, Serialize)]
pub struct EmbedNetSummary {
    pub final_train_loss: f64,
    pub eval_points: usize,
    pub mean_error: f64,
    pub mean_error_refined: f64,
    pub refine_steps: usize,
    pub seconds: f64,
}

pub fn cmd_embed_net(ctx: &Ctx) -> Result<EmbedNetSummary> {
    let model = load_model(ctx)?;
    embed_net_with(ctx, &model)
}

pub fn embed_net_with(ctx: &Ctx, model: &Model) -> Result<EmbedNetSummary> {
    ctx.persist_config()?;
    let p = &ctx.cfg.embed_net;
    let seed = ctx.cfg.run_seed;
    let d = model.net.dim;
    let start = std::time::Instant::now();
    let enet = EmbedNet::init(d, &p.widths, p.activation, seed)?;
    let (enet, report) = train_embed_net(&enet, &model.net, &model.schedule, &model.data.points, &p.train, seed)?;
    ctx.csv(
        "inverter_loss.csv",
        &["epoch".into(), "loss".into()],
        report.epoch_losses.iter().enumerate().map(|(e, &l)| vec![(e + 1).to_string(), f(l)]),
    )?;

    // Held out: a fresh draw of the dataset in the training coordinates.
    let (fresh, _) = dataset_with_seed(&ctx.cfg, seed.wrapping_add(1), Some(&model.normalization))?;
    let idx = probe_indices(fresh.len(), p.eval_points, seed)?;
    let x = fresh.points.select_rows(&idx);
    let z = enet.seeds(&x)?;
    let refined = refine_seed_gd(&model.net, &model.schedule, &z, &x, p.refine_steps, p.refine_lr, p.train.k)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut header = coord_header("x", d);
    header.extend(coord_header("seed", d));
    header.extend(coord_header("refined", d));
    header.extend(["error", "refined_error"].map(String::from));
    let rows = (0..x.rows()).map(|i| {
        let mut r: Vec<String> = x.row(i).iter().chain(z.row(i)).chain(refined.seeds.row(i)).map(|&v| f(v)).collect();
        r.extend([f(refined.before[i]), f(refined.after[i])]);
        r
    });
    ctx.csv("inverter.csv", &header, rows)?;

    let (out, _) = generate_batch(&model.net, &model.schedule, &z, p.train.k, ctx.workers)?;
    let mut fig = ctx.figure(&[&model.data.points, &out]);
    fig.scatter(&Layer { points: &model.data.points, color: BLUE, radius: 1.0, opacity: 0.25 });
    fig.segments(&x, &out, 0..x.rows(), ORANGE, 0.7);
    fig.scatter(&Layer { points: &out, color: RED, radius: 1.8, opacity: 0.8 });
    ctx.write("embed_net.svg", fig.render())?;

    let summary = EmbedNetSummary {
        final_train_loss: report.final_loss,
        eval_points: x.rows(),
        mean_error: mean(&refined.before),
        mean_error_refined: mean(&refined.after),
        refine_steps: p.refine_steps,
        seconds,
    };
    ctx.json("embed_net_summary.json", &summary)?;
    println!("inverter error {} -> {} after refinement", summary.mean_error, summary.mean_error_refined);
    Ok(summary)
}

// ------------------------------------------------------------------ pca

#[derive(Clone, Debug, Serialize)]
pub struct CloudPca {
    pub datapoint: Option<usize>,
    pub seeds: usize,
    pub eigenvalues: Vec<f64>,
    /// |cos| between the top component and the radial direction of the
    /// probe point.
    pub radial_cos: f64,
    /// Mean output displacement along the top and bottom components.
    pub top_displacement: f64,
    pub bottom_displacement: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PcaSummary {
    pub clouds: usize,
    /// Clouds with more seeds than dimensions.
    pub analysed: usize,
    /// Fraction of all clouds whose top axis has |cos| > 0.8 to the radial
    /// direction; clouds too small to analyse count as misses.
    pub radial_fraction: f64,
    pub median_elongation: f64,
    pub per_cloud: Vec<CloudPca>,
}

pub fn cmd_pca(ctx: &Ctx) -> Result<PcaSummary> {
    if let Some(path) = &ctx.cfg.pca.cloud {
        return pca_from_csv(ctx, path);
    }
    let model = load_model(ctx)?;
    pca_with(ctx, &model)
}

fn pca_rows(index: usize, p: &ddimlab::embedding::PcaResult, extra: f64) -> Vec<Vec<String>> {
    (0..p.eigenvalues.len())
        .map(|c| {
            let mut r = vec![index.to_string(), c.to_string(), f(p.eigenvalues[c])];
            r.extend(p.component(c).iter().map(|&v| f(v)));
            r.push(f(extra));
            r
        })
        .collect()
}

fn pca_header(d: usize) -> Vec<String> {
    let mut h = vec!["cloud".to_string(), "component".to_string(), "eigenvalue".to_string()];
    h.extend(coord_header("v", d));
    h.push("radial_cos".into());
    h
}

fn pca_from_csv(ctx: &Ctx, path: &Path) -> Result<PcaSummary> {
    ctx.persist_config()?;
    let file = fs::File::open(path).with_context(|| format!("cannot read seed cloud {}", path.display()))?;
    let (header, rows) = io::read_csv(std::io::BufReader::new(file))?;
    let d = header.len();
    let seeds = Tensor::new(vec![rows.len(), d], rows.concat())?;
    let p = pca_cloud(&seeds)?;
    ctx.csv("pca.csv", &pca_header(d), pca_rows(0, &p, f64::NAN))?;
    let summary = PcaSummary {
        clouds: 1,
        analysed: 1,
        radial_fraction: f64::NAN,
        median_elongation: p.eigenvalues[0] / p.eigenvalues[d - 1],
        per_cloud: vec![CloudPca {
            datapoint: None,
            seeds: seeds.rows(),
            eigenvalues: p.eigenvalues.clone(),
            radial_cos: f64::NAN,
            top_displacement: f64::NAN,
            bottom_displacement: f64::NAN,
        }],
    };
    ctx.json("pca_summary.json", &summary)?;
    println!("eigenvalues {:?}", p.eigenvalues);
    Ok(summary)
}

pub fn pca_with(ctx: &Ctx, model: &Model) -> Result<PcaSummary> {
    ctx.persist_config()?;
    let p = &ctx.cfg.pca;
    let seed = ctx.cfg.run_seed;
    let d = model.net.dim;
    let probes = probe_indices(model.data.len(), p.probes, seed)?;
    let clouds: Vec<SeedCloud> = match p.source {
        CloudKind::Grid => {
            let seeds = grid(&p.grid)?;
            let map = grav_map(&model.net, &model.schedule, &model.data, &seeds, p.k, p.tol, ctx.workers)?;
            probes.iter().map(|&i| emb_cloud_from_grid(&map, model.data.point(i), p.tol)).collect::<ddimlab::Result<_>>()?
        }
        CloudKind::Gradient => {
            let targets = model.data.points.select_rows(&probes);
            embed_gd_targets(&model.net, &model.schedule, &targets, &ctx.cfg.embed_gd.gd, seed, ctx.workers)?
        }
    };

    let (mut rows, mut trav_rows, mut per_cloud) = (Vec::new(), Vec::new(), Vec::new());
    let mut fig_seeds = Vec::new();
    for (ci, (cloud, &idx)) in clouds.iter().zip(&probes).enumerate() {
        fig_seeds.extend_from_slice(cloud.seeds.data());
        if cloud.len() <= d {
            per_cloud.push(CloudPca {
                datapoint: Some(idx),
                seeds: cloud.len(),
                eigenvalues: Vec::new(),
                radial_cos: f64::NAN,
                top_displacement: f64::NAN,
                bottom_displacement: f64::NAN,
            });
            continue;
        }
        let pca = pca_cloud(&cloud.seeds)?;
        let radial = radial_cos(pca.component(0), &cloud.target);
        rows.extend(pca_rows(ci, &pca, radial));
        let mut displacement = [0.0; 2];
        for (slot, comp) in [0, d - 1].into_iter().enumerate() {
            let mut factors = vec![0.0];
            factors.extend(p.factors.iter().copied().filter(|&v| v != 0.0));
            let out = traverse_component(&model.net, &model.schedule, &pca, comp, &factors, p.k)?;
            let moves: Vec<f64> = (1..factors.len()).map(|i| dist(out.row(i), out.row(0))).collect();
            displacement[slot] = if moves.is_empty() { 0.0 } else { mean(&moves) };
            for (i, &fac) in factors.iter().enumerate() {
                let mut r = vec![ci.to_string(), comp.to_string(), f(fac)];
                r.extend(out.row(i).iter().map(|&v| f(v)));
                trav_rows.push(r);
            }
        }
        per_cloud.push(CloudPca {
            datapoint: Some(idx),
            seeds: cloud.len(),
            eigenvalues: pca.eigenvalues.clone(),
            radial_cos: radial,
            top_displacement: displacement[0],
            bottom_displacement: displacement[1],
        });
    }
    ctx.csv("pca.csv", &pca_header(d), rows)?;
    let mut th = vec!["cloud".to_string(), "component".to_string(), "factor".to_string()];
    th.extend(coord_header("x", d));
    ctx.csv("traversal.csv", &th, trav_rows)?;

    let fig_seeds = Tensor::new(vec![fig_seeds.len() / d, d], fig_seeds)?;
    let targets = model.data.points.select_rows(&probes);
    let mut fig = ctx.figure(&[&model.data.points, &fig_seeds]);
    fig.scatter(&Layer { points: &model.data.points, color: BLUE, radius: 1.0, opacity: 0.25 });
    fig.scatter(&Layer { points: &fig_seeds, color: GREEN, radius: 1.2, opacity: 0.5 });
    fig.scatter(&Layer { points: &targets, color: RED, radius: 3.0, opacity: 1.0 });
    ctx.write("pca.svg", fig.render())?;

    let hits = per_cloud.iter().filter(|c| c.radial_cos > 0.8).count();
    let elongations: Vec<f64> = per_cloud.iter().filter(|c| !c.eigenvalues.is_empty()).map(|c| c.eigenvalues[0] / c.eigenvalues[d - 1]).collect();
    let summary = PcaSummary {
        clouds: per_cloud.len(),
        analysed: elongations.len(),
        radial_fraction: hits as f64 / per_cloud.len().max(1) as f64,
        median_elongation: median(&elongations),
        per_cloud,
    };
    ctx.json("pca_summary.json", &summary)?;
    println!("{} of {} clouds analysed; radial fraction {}", summary.analysed, summary.clouds, summary.radial_fraction);
    Ok(summary)
}

// -------------------------------------------------------------- density

#[derive(Clone, Debug, Serialize)]
pub struct DensitySummary {
    pub integral: f64,
    pub on_manifold: f64,
    pub ring: f64,
    pub ratio: f64,
}

pub fn cmd_density(ctx: &Ctx) -> Result<DensitySummary> {
    let model = load_model(ctx)?;
    density_with(ctx, &model)
}

pub fn density_with(ctx: &Ctx, model: &Model) -> Result<DensitySummary> {
    ctx.persist_config()?;
    let p = &ctx.cfg.density;
    let g = pushforward_density(&model.net, &model.schedule, &p.grid.bounds, p.grid.resolution, p.samples, p.bandwidth, p.k, ctx.cfg.run_seed, ctx.workers)?;
    g.write_csv(BufWriter::new(fs::File::create(ctx.path("density.csv"))?))?;
    let ring_rows: Vec<Vec<f64>> = (0..p.ring_points)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / p.ring_points as f64;
            let mut r = vec![0.0; model.net.dim];
            r[0] = p.ring_radius * a.cos();
            if r.len() > 1 {
                r[1] = p.ring_radius * a.sin();
            }
            r
        })
        .collect();
    let ring = Tensor::new(vec![p.ring_points, model.net.dim], ring_rows.concat())?;
    let on_manifold = mean(&g.density_at(&model.data.points));
    let ring_mean = mean(&g.density_at(&ring));

    let b = &p.grid.bounds;
    let step = |j: usize| (b[j].1 - b[j].0) / (p.grid.resolution - 1) as f64;
    let mut fig = Figure::with_ranges(b[0], b.get(1).copied().unwrap_or(b[0]), ctx.timestamp);
    fig.heatmap(&g.grid.points, &g.values, (step(0), step(b.len().min(2) - 1)));
    fig.scatter(&Layer { points: &model.data.points, color: BLUE, radius: 0.6, opacity: 0.15 });
    ctx.write("density.svg", fig.render())?;

    let summary = DensitySummary { integral: g.integral(), on_manifold, ring: ring_mean, ratio: on_manifold / ring_mean };
    ctx.json("density_summary.json", &summary)?;
    println!("on-manifold / ring density ratio {}", summary.ratio);
    Ok(summary)
}

// ----------------------------------------------------------- uniqueness

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessSummary {
    pub report: ddimlab::embedding::UniquenessReport,
    pub seconds: f64,
}

pub fn cmd_uniqueness(ctx: &Ctx) -> Result<UniquenessSummary> {
    let (data, _) = dataset(&ctx.cfg, None)?;
    uniqueness_with(ctx, &data, None)
}

/// Trains both arms (or only arm B when a trained arm A is supplied along
/// with its final loss) and compares them on shared seeds.
pub fn uniqueness_with(ctx: &Ctx, data: &PointSet, trained_a: Option<(&DenoiserNet, f64)>) -> Result<UniquenessSummary> {
    ctx.persist_config()?;
    let cfg = &ctx.cfg;
    let p = &cfg.uniqueness;
    ensure!(p.arm_a != p.arm_b, "the two arms must differ in architecture or seed");
    let schedule = cfg.schedule.build()?;
    let start = std::time::Instant::now();
    let fit = |arm: &ddimlab::embedding::UniquenessArm| -> Result<(DenoiserNet, f64)> {
        let init = DenoiserNet::init(data.dim(), &arm.net, arm.seed)?;
        let (net, report) = train(&init, &data.points, &schedule, &cfg.train, arm.seed)?;
        Ok((net, report.final_loss))
    };
    let (a, la) = match trained_a {
        Some((net, loss)) => (net.clone(), loss),
        None => fit(&p.arm_a)?,
    };
    let (b, lb) = fit(&p.arm_b)?;
    let pairs = paired_outputs(&a, &b, &schedule, p.n, p.k, cfg.run_seed, ctx.workers)?;
    let mut report = pairs.report();
    report.final_losses = Some((la, lb));
    let seconds = start.elapsed().as_secs_f64();

    let d = data.dim();
    let mut header = coord_header("seed", d);
    header.extend(coord_header("a", d));
    header.extend(coord_header("b", d));
    let rows = (0..p.n).map(|i| pairs.seeds.row(i).iter().chain(pairs.a.row(i)).chain(pairs.b.row(i)).map(|&v| f(v)).collect());
    ctx.csv("uniqueness.csv", &header, rows)?;
    let mut fig = ctx.figure(&[&pairs.a, &pairs.b]);
    fig.scatter(&Layer { points: &data.points, color: BLUE, radius: 1.0, opacity: 0.2 });
    fig.segments(&pairs.a, &pairs.b, 0..p.n, ORANGE, 0.8);
    fig.scatter(&Layer { points: &pairs.a, color: RED, radius: 1.8, opacity: 0.8 });
    fig.scatter(&Layer { points: &pairs.b, color: GREEN, radius: 1.8, opacity: 0.8 });
    ctx.write("uniqueness.svg", fig.render())?;

    let summary = UniquenessSummary { report, seconds };
    ctx.json("uniqueness_report.json", &summary)?;
    println!("D_pair / D_rand = {}", summary.report.ratio);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_are_distinct_and_reproducible() {
        let a = probe_indices(100, 32, 5).unwrap();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 32);
        assert_eq!(a, probe_indices(100, 32, 5).unwrap());
        assert!(probe_indices(10, 11, 5).is_err());
    }

    #[test]
    fn radial_cos_examples() {
        assert!((radial_cos(&[2.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!(radial_cos(&[0.0, 1.0], &[1.0, 0.0]).abs() < 1e-15);
        assert!((radial_cos(&[-1.0, -1.0], &[1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(radial_cos(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn nearest_distance_examples() {
        let data = Tensor::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let pts = Tensor::from_rows(&[[0.0, 1.0], [3.0, 4.0]]).unwrap();
        assert_eq!(mean_nearest_distance(&pts, &data), 0.5);
    }
}
