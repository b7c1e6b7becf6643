//! Subview stacks: one filtered RGB image per view plus everything needed
//! to train on it.
//!
//! On disk a dataset is a directory with `meta.json`, `filters.csv`,
//! `sensor.csv` and one `view_<d>.imgf32` raster per view. View `d` is seen
//! through filter `d`.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisAngle, CameraParams, Pose, SceneBounds};
use crate::losses::{channel_stats, ChannelStats};
use crate::scenedata::raster::{load_image, save_image, Image};
use crate::scenedata::scene::{oracle_render, SyntheticScene};
use crate::spectral::{build_response, load_curves, save_curves, unfiltered_response, CurveKind, CurveSet, ResponseMatrix};

pub const META_FILE: &str = "meta.json";
pub const FILTERS_FILE: &str = "filters.csv";
pub const SENSOR_FILE: &str = "sensor.csv";
const FORMAT_NAME: &str = "bsnerf-subviews";
const FORMAT_VERSION: u32 = 1;

/// Camera-to-origin distance of the default rig.
pub const RIG_DISTANCE: f64 = 2.5;
/// Spacing of the default 3×3 camera grid.
pub const RIG_BASELINE: f64 = 0.25;
pub const DEFAULT_BOUNDS: SceneBounds = SceneBounds {
    t_near: 1.8,
    t_far: 3.3,
};

/// Image geometry presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 64×48 subviews.
    Desk,
    /// 245×154 subviews, the cropped subview size of the physical prototype.
    PaperGeometry,
}

impl Preset {
    pub fn size(self) -> (usize, usize) {
        match self {
            Preset::Desk => (64, 48),
            Preset::PaperGeometry => (245, 154),
        }
    }
}

/// Focal length giving the default rig the same field of view at any width.
pub fn default_focal(width: usize) -> f64 {
    width as f64 * 100.0 / 64.0
}

/// A 3×3 grid of cameras at distance [`RIG_DISTANCE`], all aimed at the
/// origin, in row-major order from the top-left.
pub fn default_rig(width: usize, height: usize) -> Result<CameraParams> {
    let mut poses = Vec::with_capacity(9);
    for row in 0..3 {
        for col in 0..3 {
            let eye = Vector3::new(
                (col as f64 - 1.0) * RIG_BASELINE,
                (1.0 - row as f64) * RIG_BASELINE,
                RIG_DISTANCE,
            );
            poses.push(Pose::look_at(eye, Vector3::zeros(), Vector3::y())?);
        }
    }
    CameraParams::new(poses, default_focal(width), width, height)
}

/// Identity rotations with camera centres on a small ring, used when a
/// dataset carries no pose information.
pub fn ring_prior(views: usize, width: usize, height: usize) -> Result<CameraParams> {
    let poses = (0..views)
        .map(|d| {
            let a = std::f64::consts::TAU * d as f64 / views as f64;
            let r = if d == 0 { 0.0 } else { RIG_BASELINE };
            Pose::new(AxisAngle::identity(), Vector3::new(r * a.cos(), r * a.sin(), RIG_DISTANCE))
        })
        .collect::<Result<Vec<_>>>()?;
    CameraParams::new(poses, default_focal(width), width, height)
}

/// Measured (or synthesized) subviews with their spectral setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SubviewStack {
    pub images: Vec<Image>,
    pub stats: Vec<ChannelStats>,
    pub filters: CurveSet,
    pub sensor: CurveSet,
    pub bounds: SceneBounds,
    pub ground_truth: Option<CameraParams>,
}

impl SubviewStack {
    pub fn new(
        images: Vec<Image>,
        filters: CurveSet,
        sensor: CurveSet,
        bounds: SceneBounds,
        ground_truth: Option<CameraParams>,
    ) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset has no views".into()))?;
        let (w, h, k) = (first.width(), first.height(), first.channels());
        if images.len() != filters.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} filters",
                images.len(),
                filters.len()
            )));
        }
        if k != sensor.len() {
            return Err(Error::ShapeMismatch(format!("{k} image channels but {} sensor curves", sensor.len())));
        }
        for img in &images {
            if (img.width(), img.height(), img.channels()) != (w, h, k) {
                return Err(Error::ShapeMismatch("subviews differ in size".into()));
            }
            if img.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument("intensities must be finite and non-negative".into()));
            }
        }
        if let Some(gt) = &ground_truth {
            if gt.views() != images.len() || gt.width != w || gt.height != h {
                return Err(Error::ShapeMismatch("ground-truth cameras do not match the images".into()));
            }
        }
        let stats = images
            .iter()
            .map(|img| channel_stats(&img.to_f64(), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            images,
            stats,
            filters,
            sensor,
            bounds,
            ground_truth,
        })
    }

    pub fn views(&self) -> usize {
        self.images.len()
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn response(&self) -> Result<ResponseMatrix> {
        build_response(&self.filters, &self.sensor)
    }

    pub fn unfiltered_response(&self) -> Result<ResponseMatrix> {
        unfiltered_response(&self.sensor)
    }

    /// Largest measured intensity, the peak used for PSNR.
    pub fn peak(&self) -> f64 {
        self.images.iter().map(|i| i.max_value() as f64).fold(0.0, f64::max)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_curves(dir.join(FILTERS_FILE), &self.filters)?;
        save_curves(dir.join(SENSOR_FILE), &self.sensor)?;
        let mut names = Vec::with_capacity(self.views());
        for (d, img) in self.images.iter().enumerate() {
            let name = format!("view_{d}.imgf32");
            save_image(dir.join(&name), img)?;
            names.push(name);
        }
        let meta = DatasetMeta::describe(self, names);
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        let path = dir.join(META_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StatsMeta {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseMeta {
    /// Axis-angle vector, radians.
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroundTruthMeta {
    pub focal: f64,
    pub poses: Vec<PoseMeta>,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub views: usize,
    pub channels: usize,
    pub bins: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub width: usize,
    pub height: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub filters_file: String,
    pub sensor_file: String,
    pub images: Vec<String>,
    pub stats: Vec<StatsMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthMeta>,
}

impl DatasetMeta {
    fn describe(stack: &SubviewStack, images: Vec<String>) -> Self {
        let grid = stack.filters.grid();
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            views: stack.views(),
            channels: stack.channels(),
            bins: grid.bins(),
            lambda_min: grid.lambda_min(),
            lambda_max: grid.lambda_max(),
            width: stack.width(),
            height: stack.height(),
            t_near: stack.bounds.t_near,
            t_far: stack.bounds.t_far,
            filters_file: FILTERS_FILE.into(),
            sensor_file: SENSOR_FILE.into(),
            images,
            stats: stack
                .stats
                .iter()
                .map(|s| StatsMeta {
                    mean: s.mean.clone(),
                    std: s.std.clone(),
                })
                .collect(),
            ground_truth: stack.ground_truth.as_ref().map(|gt| GroundTruthMeta {
                focal: gt.focal,
                poses: gt
                    .poses
                    .iter()
                    .map(|p| PoseMeta {
                        rotation: p.rotation.vector().into(),
                        translation: p.translation.into(),
                    })
                    .collect(),
            }),
        }
    }
}

/// Loads a dataset directory, checking it against its metadata.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SubviewStack> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.format != FORMAT_NAME || meta.version != FORMAT_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("unsupported dataset format {} v{}", meta.format, meta.version),
        ));
    }
    let filters = load_curves(dir.join(&meta.filters_file), CurveKind::Transmission)?;
    let sensor = load_curves(dir.join(&meta.sensor_file), CurveKind::Sensitivity)?;
    let grid = filters.grid();
    if grid.bins() != meta.bins
        || (grid.lambda_min() - meta.lambda_min).abs() > 1e-9
        || (grid.lambda_max() - meta.lambda_max).abs() > 1e-9
    {
        return Err(Error::format(&meta_path, "filter grid disagrees with metadata"));
    }
    if meta.images.len() != meta.views || filters.len() != meta.views || sensor.len() != meta.channels {
        return Err(Error::format(&meta_path, "view/channel counts disagree with curve files"));
    }
    let mut images = Vec::with_capacity(meta.views);
    for name in &meta.images {
        let path: PathBuf = dir.join(name);
        let img = load_image(&path)?;
        if (img.width(), img.height(), img.channels()) != (meta.width, meta.height, meta.channels) {
            return Err(Error::format(
                &path,
                format!(
                    "raster is {}x{}x{}, metadata says {}x{}x{}",
                    img.height(),
                    img.width(),
                    img.channels(),
                    meta.height,
                    meta.width,
                    meta.channels
                ),
            ));
        }
        images.push(img);
    }
    let ground_truth = match &meta.ground_truth {
        None => None,
        Some(gt) => {
            let poses = gt
                .poses
                .iter()
                .map(|p| Pose::new(AxisAngle::new(p.rotation.into())?, p.translation.into()))
                .collect::<Result<Vec<_>>>()?;
            Some(CameraParams::new(poses, gt.focal, meta.width, meta.height)?)
        }
    };
    let bounds = SceneBounds::new(meta.t_near, meta.t_far)?;
    let stack = SubviewStack::new(images, filters, sensor, bounds, ground_truth)?;
    for (d, (stored, fresh)) in meta.stats.iter().zip(&stack.stats).enumerate() {
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0));
        if !close(&stored.mean, &fresh.mean) || !close(&stored.std, &fresh.std) {
            return Err(Error::format(&meta_path, format!("stored statistics of view {d} do not match its image")));
        }
    }
    Ok(stack)
}

/// Options of [`make_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    /// Standard deviation of additive Gaussian noise, as a fraction of the
    /// brightest clean intensity. Noisy values are clipped at zero.
    pub noise_std: f64,
    pub seed: u64,
    pub oracle_step: f64,
    pub bounds: SceneBounds,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            noise_std: 0.0,
            seed: 0,
            oracle_step: crate::scenedata::scene::ORACLE_STEP,
            bounds: DEFAULT_BOUNDS,
        }
    }
}

/// Renders every view of `cam` through its filter with the oracle and
/// optionally writes the dataset to `out`.
pub fn make_dataset(
    scene: &SyntheticScene,
    cam: &CameraParams,
    filters: &CurveSet,
    sensor: &CurveSet,
    options: &SynthOptions,
    out: Option<&Path>,
) -> Result<SubviewStack> {
    if cam.views() != filters.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cameras for {} filters",
            cam.views(),
            filters.len()
        )));
    }
    let response = build_response(filters, sensor)?;
    if response.bins() != crate::field::RadianceField::bins(scene) {
        return Err(Error::GridMismatch("scene spectra and curves use different bin counts".into()));
    }
    let mut images = (0..cam.views())
        .map(|d| oracle_render(scene, cam, d, &options.bounds, &response, options.oracle_step))
        .collect::<Result<Vec<_>>>()?;
    if options.noise_std > 0.0 {
        let peak = images.iter().map(|i| i.max_value()).fold(0.0f32, f32::max) as f64;
        let normal = Normal::new(0.0, options.noise_std * peak)
            .map_err(|e| Error::InvalidArgument(format!("noise level: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        for img in &mut images {
            for v in img.data_mut() {
                *v = ((*v as f64) + normal.sample(&mut rng)).max(0.0) as f32;
            }
        }
    }
    let stack = SubviewStack::new(images, filters.clone(), sensor.clone(), options.bounds, Some(cam.clone()))?;
    if let Some(dir) = out {
        stack.save(dir)?;
    }
    Ok(stack)
}
