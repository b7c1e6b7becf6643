//! Command-line driver for dataset synthesis, training, rendering and evaluation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bsnerf_core::checkpoint::{load_checkpoint, Checkpoint};
use bsnerf_core::eval::{evaluate, EvalReport};
use bsnerf_core::field::FieldArch;
use bsnerf_core::geometry::CameraParams;
use bsnerf_core::losses::LossWeights;
use bsnerf_core::optim::{train, CheckpointPolicy, PoseInit, TrainConfig};
use bsnerf_core::renderer::{render_image, QuadratureSpec, Reduction, EVAL_SAMPLES};
use bsnerf_core::scenedata::{
    default_rig, export_png, load_dataset, make_dataset, save_image, Image, Preset, SubviewStack, SynthOptions,
    SyntheticScene,
};
use bsnerf_core::spectral::{default_filter_bank, default_sensor, WavelengthGrid};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const CHECKPOINT_FILE: &str = "checkpoint.bsnf";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "bsnerf", version, about = "Broadband spectral radiance fields from multiplexed subviews")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Output directory (default depends on the command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for data noise, initialization and ray sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker thread cap; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Sum parallel gradients in a fixed order so runs are bitwise reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic scene into a subview dataset.
    Synth(SynthArgs),
    /// Fit a field (and optionally cameras) to a dataset.
    Train(TrainArgs),
    /// Render the view × filter grid and unfiltered RGB views from a checkpoint.
    Render(RenderArgs),
    /// Report per-view PSNR, pose errors and color-statistics distance.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// 9 views of 64×48.
    Desk,
    /// 9 views of 245×154.
    PaperGeometry,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::PaperGeometry => Preset::PaperGeometry,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
    /// Gaussian noise std as a fraction of the brightest clean intensity.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Oracle quadrature step.
    #[arg(long, default_value_t = bsnerf_core::scenedata::ORACLE_STEP)]
    pub oracle_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    /// Width-64 network, 128 rays × 32 samples, 2,000 epochs.
    Desk,
    /// Width-128 network, 1024 rays × 64 samples, 10,000 epochs.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Identity,
    GroundTruth,
    Perturbed,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    pub profile: ProfileArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rays: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Hidden width of the network.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Drop the color-statistics term (β = 0).
    #[arg(long)]
    pub no_color_loss: bool,
    /// Keep poses and focal length fixed.
    #[arg(long)]
    pub freeze_poses: bool,
    /// Keep the focal length fixed while poses move.
    #[arg(long)]
    pub freeze_focal: bool,
    /// Starting poses (default: ground truth when frozen, identity otherwise).
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Rotation bound of the perturbed init, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub perturb_rot: f64,
    /// Translation bound of the perturbed init, scene units.
    #[arg(long, default_value_t = 0.02)]
    pub perturb_trans: f64,
    /// View whose pose stays fixed.
    #[arg(long, default_value_t = 0)]
    pub gauge: usize,
    /// Write the checkpoint every N epochs as well as at the end.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    /// Render only this view (requires --filter).
    #[arg(long, requires = "filter")]
    pub view: Option<usize>,
    /// Render only this filter (requires --view).
    #[arg(long, requires = "view")]
    pub filter: Option<usize>,
    #[arg(long, default_value_t = EVAL_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    /// Second checkpoint, typically the run without the color loss.
    pub other: Option<PathBuf>,
    #[arg(long, default_value_t = EVAL_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub gauge: usize,
}

/// A failed command: usage problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<bsnerf_core::Error> for Failure {
    fn from(e: bsnerf_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if cli.global.threads > 0 {
        // Fails only if the pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cli.global, a),
        Command::Train(a) => cmd_train(&cli.global, a),
        Command::Render(a) => cmd_render(&cli.global, a),
        Command::Eval(a) => cmd_eval(&cli.global, a),
    }
}

fn out_dir(g: &GlobalArgs, default: &str) -> anyhow::Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn cmd_synth(g: &GlobalArgs, a: &SynthArgs) -> Result<(), Failure> {
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(Failure::Usage(format!("--noise must be non-negative, got {}", a.noise)));
    }
    let out = out_dir(g, "dataset")?;
    let grid = WavelengthGrid::default();
    let (w, h) = Preset::from(a.preset).size();
    let scene = SyntheticScene::default_scene(&grid)?;
    let cam = default_rig(w, h)?;
    let opts = SynthOptions {
        noise_std: a.noise,
        seed: g.seed,
        oracle_step: a.oracle_step,
        ..SynthOptions::default()
    };
    let data = make_dataset(
        &scene,
        &cam,
        &default_filter_bank(grid)?,
        &default_sensor(grid)?,
        &opts,
        Some(&out),
    )?;
    println!(
        "wrote {} subviews of {}x{} to {} (peak intensity {:.4})",
        data.views(),
        w,
        h,
        out.display(),
        data.peak()
    );
    Ok(())
}

/// Builds the training configuration from the command line.
pub fn train_config(g: &GlobalArgs, a: &TrainArgs, out: &Path) -> Result<TrainConfig, Failure> {
    let mut cfg = match a.profile {
        ProfileArg::Desk => TrainConfig::desk(),
        ProfileArg::Full => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(r) = a.rays {
        cfg.rays_per_batch = r;
    }
    if let Some(s) = a.samples {
        cfg.samples = s;
    }
    if let Some(w) = a.width {
        cfg.arch = FieldArch { width: w, ..cfg.arch };
    }
    cfg.weights = LossWeights::new(a.alpha, a.beta).map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.color_loss = !a.no_color_loss;
    cfg.optimize_poses = !a.freeze_poses;
    cfg.optimize_focal = !(a.freeze_poses || a.freeze_focal);
    cfg.pose_init = a.init.map(|i| match i {
        InitArg::Identity => PoseInit::Identity,
        InitArg::GroundTruth => PoseInit::GroundTruth,
        InitArg::Perturbed => PoseInit::Perturbed {
            max_rot_deg: a.perturb_rot,
            max_trans: a.perturb_trans,
            seed: g.seed,
        },
    });
    cfg.gauge_view = a.gauge;
    cfg.seed = g.seed;
    cfg.reduction = if g.deterministic { Reduction::Ordered } else { Reduction::Unordered };
    cfg.checkpoint = Some(CheckpointPolicy {
        path: out.join(CHECKPOINT_FILE),
        every: a.checkpoint_every.unwrap_or(usize::MAX),
    });
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_train(g: &GlobalArgs, a: &TrainArgs) -> Result<(), Failure> {
    if a.checkpoint_every == Some(0) {
        return Err(Failure::Usage("--checkpoint-every must be positive".into()));
    }
    let data = load_dataset(&a.dataset)?;
    if a.gauge >= data.views() {
        return Err(Failure::Usage(format!("--gauge {} but the dataset has {} views", a.gauge, data.views())));
    }
    let out = out_dir(g, "run")?;
    let cfg = train_config(g, a, &out)?;
    log::info!(
        "training {} epochs on {} views ({} rays x {} samples, width {})",
        cfg.epochs,
        data.views(),
        cfg.rays_per_batch,
        cfg.samples,
        cfg.arch.width
    );
    let result = train(&data, &cfg);
    let output = result.context("training failed")?;
    let metrics = out.join(METRICS_FILE);
    output.log.write_csv(&metrics)?;
    match output.log.last() {
        Some(r) => println!(
            "{} epochs, final loss {:.6e}, train PSNR {:.2} dB; wrote {} and {}",
            r.epoch + 1,
            r.loss,
            r.psnr_train,
            out.join(CHECKPOINT_FILE).display(),
            metrics.display()
        ),
        None => println!("0 epochs; wrote {} and {}", out.join(CHECKPOINT_FILE).display(), metrics.display()),
    }
    Ok(())
}

/// Checkpoint cameras, or the dataset's ground truth when the checkpoint has none.
fn cameras_for(ckpt: &Checkpoint, data: &SubviewStack, path: &Path) -> anyhow::Result<CameraParams> {
    if ckpt.params.arch().bins != data.filters.grid().bins() {
        bail!(
            "{}: field emits {} bins but the dataset uses {}",
            path.display(),
            ckpt.params.arch().bins,
            data.filters.grid().bins()
        );
    }
    let cam = match (&ckpt.cameras, &data.ground_truth) {
        (Some(c), _) => c.clone(),
        (None, Some(gt)) => gt.clone(),
        (None, None) => bail!("{} has no cameras and the dataset has no ground truth", path.display()),
    };
    if cam.views() != data.views() || (cam.width, cam.height) != (data.width(), data.height()) {
        bail!(
            "{}: cameras are {} views of {}x{}, dataset is {} views of {}x{}",
            path.display(),
            cam.views(),
            cam.width,
            cam.height,
            data.views(),
            data.width(),
            data.height()
        );
    }
    Ok(cam)
}

fn write_image(dir: &Path, stem: &str, img: &Image, peak: f32) -> anyhow::Result<()> {
    save_image(dir.join(format!("{stem}.imgf32")), img)?;
    export_png(dir.join(format!("{stem}.png")), img, peak)?;
    Ok(())
}

pub fn cmd_render(g: &GlobalArgs, a: &RenderArgs) -> Result<(), Failure> {
    let data = load_dataset(&a.dataset)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cam = cameras_for(&ckpt, &data, &a.checkpoint)?;
    let d = data.views();
    if let (Some(v), Some(f)) = (a.view, a.filter) {
        if v >= d || f >= d {
            return Err(Failure::Usage(format!("--view {v} --filter {f} out of range for {d} views")));
        }
    }
    let out = out_dir(g, "renders")?;
    let quad = QuadratureSpec::from_bounds(a.samples, false, &data.bounds)?;
    let response = data.response()?;
    let peak = data.peak() as f32;
    let pairs: Vec<(usize, usize)> = match (a.view, a.filter) {
        (Some(v), Some(f)) => vec![(v, f)],
        _ => (0..d).flat_map(|v| (0..d).map(move |f| (v, f))).collect(),
    };
    for &(v, f) in &pairs {
        let filter = response.select_view(f)?;
        let img = render_image(&ckpt.params, &cam, v, &quad, &response, Some(&filter), g.seed)?;
        write_image(&out, &format!("view{v}_filter{f}"), &img, peak)?;
    }
    let mut count = pairs.len();
    if a.view.is_none() {
        let unfiltered = data.unfiltered_response()?;
        let rgb = (0..d)
            .map(|v| render_image(&ckpt.params, &cam, v, &quad, &response, Some(&unfiltered), g.seed))
            .collect::<bsnerf_core::Result<Vec<_>>>()?;
        let rgb_peak = rgb.iter().map(Image::max_value).fold(0.0f32, f32::max);
        for (v, img) in rgb.iter().enumerate() {
            write_image(&out, &format!("view{v}_rgb"), img, rgb_peak)?;
        }
        count += rgb.len();
    }
    println!("wrote {count} images to {}", out.display());
    Ok(())
}

fn print_report(name: &str, r: &EvalReport) {
    println!("{name}");
    println!("  view   psnr(dB)  rot_err(deg)  trans_err");
    let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
    for (d, p) in r.psnr.iter().enumerate() {
        let rot = r.pose.as_ref().map(|e| e.rotation_deg[d]);
        let tr = r.pose.as_ref().map(|e| e.translation[d]);
        println!("  {d:>4}  {p:>9.3}  {:>12}  {:>9}", opt(rot, 4), opt(tr, 5));
    }
    println!(
        "  mean  {:>9.3}  {:>12}  {:>9}",
        r.mean_psnr(),
        opt(r.pose.as_ref().map(|e| e.mean_rotation_deg), 4),
        opt(r.pose.as_ref().map(|e| e.mean_translation), 5)
    );
    println!("  color-statistics distance {:.6e}", r.color_distance);
}

pub fn cmd_eval(g: &GlobalArgs, a: &EvalArgs) -> Result<(), Failure> {
    let data = load_dataset(&a.dataset)?;
    if a.gauge >= data.views() {
        return Err(Failure::Usage(format!("--gauge {} but the dataset has {} views", a.gauge, data.views())));
    }
    let out = out_dir(g, "eval")?;
    let mut reports = Vec::new();
    for path in std::iter::once(&a.checkpoint).chain(a.other.as_ref()) {
        let ckpt = load_checkpoint(path)?;
        let cam = cameras_for(&ckpt, &data, path)?;
        let report = evaluate(&ckpt.params, &cam, &data, a.samples, a.gauge)?;
        print_report(&path.display().to_string(), &report);
        reports.push((path.clone(), report));
    }
    std::fs::write(out.join("eval.csv"), reports[0].1.to_csv()).context("writing eval.csv")?;
    if let Some((other, r)) = reports.get(1) {
        std::fs::write(out.join("eval_other.csv"), r.to_csv()).context("writing eval_other.csv")?;
        let mut table = String::from("checkpoint,mean_psnr,color_distance\n");
        for (p, r) in &reports {
            table.push_str(&format!("{},{},{}\n", p.display(), r.mean_psnr(), r.color_distance));
        }
        std::fs::write(out.join("color_distance.csv"), table).context("writing color_distance.csv")?;
        let (a_dist, b_dist) = (reports[0].1.color_distance, r.color_distance);
        println!(
            "color-statistics distance: {:.6e} ({}) vs {:.6e} ({})",
            a_dist,
            a.checkpoint.display(),
            b_dist,
            other.display()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
