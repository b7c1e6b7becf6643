use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::eval::pose_errors;
use crate::field::{FieldArch, FieldParams};
use crate::geometry::{generate_ray, generate_ray_backward, AxisAngle, CameraParams, Pose, Ray};
use crate::losses::{color_loss, fidelity_loss, psnr, total_loss, LossWeights};
use crate::optim::adam::{adam_step, AdamState};
use crate::optim::schedule::Schedule;
use crate::renderer::{backward_trace, trace_batch, QuadratureSpec, Reduction, TRAIN_SAMPLES};
use crate::scenedata::dataset::{default_focal, ring_prior, SubviewStack};
use crate::spectral::ResponseMatrix;

/// Starting poses for training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseInit {
    /// Identity rotations; translations from the dataset's ground truth when
    /// present, otherwise a small ring around the first view.
    Identity,
    /// The dataset's ground-truth poses.
    GroundTruth,
    /// Ground truth with every non-gauge view rotated by a random angle up to
    /// `max_rot_deg` about a random axis and shifted by up to `max_trans`.
    Perturbed { max_rot_deg: f64, max_trans: f64, seed: u64 },
}

/// Periodic checkpoint writing.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPolicy {
    pub path: PathBuf,
    /// Epoch interval; the final state is always written.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub rays_per_batch: usize,
    pub samples: usize,
    pub stratified: bool,
    pub arch: FieldArch,
    pub weights: LossWeights,
    /// When false the color term is still reported but carries no weight.
    pub color_loss: bool,
    pub field_schedule: Schedule,
    pub pose_schedule: Schedule,
    pub focal_schedule: Schedule,
    pub seed: u64,
    pub optimize_poses: bool,
    pub optimize_focal: bool,
    /// `None` picks ground truth when cameras are frozen and identity otherwise.
    pub pose_init: Option<PoseInit>,
    /// View whose pose never moves.
    pub gauge_view: usize,
    pub reduction: Reduction,
    /// Rays per field evaluation inside a batch.
    pub chunk_rays: usize,
    pub checkpoint: Option<CheckpointPolicy>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            rays_per_batch: 1024,
            samples: TRAIN_SAMPLES,
            stratified: true,
            arch: FieldArch::default(),
            weights: LossWeights::default(),
            color_loss: true,
            field_schedule: Schedule::field(),
            pose_schedule: Schedule::camera(),
            focal_schedule: Schedule::camera(),
            seed: 0,
            optimize_poses: true,
            optimize_focal: true,
            pose_init: None,
            gauge_view: 0,
            reduction: Reduction::Ordered,
            chunk_rays: 128,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    /// Reduced network and batch sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            epochs: 2_000,
            rays_per_batch: DESK_RAYS,
            samples: DESK_SAMPLES,
            arch: FieldArch {
                width: DESK_WIDTH,
                ..FieldArch::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 || self.chunk_rays == 0 {
            return Err(Error::InvalidArgument("ray batch and chunk sizes must be positive".into()));
        }
        if self.samples < 2 {
            return Err(Error::InvalidArgument("need at least 2 samples per ray".into()));
        }
        if let Some(c) = &self.checkpoint {
            if c.every == 0 {
                return Err(Error::InvalidArgument("checkpoint interval must be positive".into()));
            }
        }
        self.arch.validate()
    }
}

pub const DESK_WIDTH: usize = 64;
pub const DESK_RAYS: usize = 128;
pub const DESK_SAMPLES: usize = 32;

/// One row of the metrics log; losses are means over the epoch's steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss: f64,
    pub loss_fid: f64,
    pub loss_color: f64,
    pub lr_field: f64,
    pub lr_pose: f64,
    pub psnr_train: f64,
    pub rot_err_deg: Option<f64>,
    pub trans_err: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,loss,loss_fid,loss_color,lr_field,lr_pose,psnr_train,rot_err_deg,trans_err";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.loss,
                r.loss_fid,
                r.loss_color,
                r.lr_field,
                r.lr_pose,
                r.psnr_train,
                opt(r.rot_err_deg),
                opt(r.trans_err)
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: FieldParams,
    pub cameras: CameraParams,
    pub log: MetricsLog,
}

impl TrainOutput {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            cameras: Some(self.cameras.clone()),
        }
    }
}

/// Initial cameras for `data` under `init`.
pub fn initial_cameras(data: &SubviewStack, init: PoseInit, gauge: usize) -> Result<CameraParams> {
    let (w, h, views) = (data.width(), data.height(), data.views());
    let gt = data.ground_truth.as_ref();
    let focal = gt.map_or(default_focal(w), |g| g.focal);
    match init {
        PoseInit::GroundTruth => gt
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("ground-truth pose init needs a dataset with ground truth".into())),
        PoseInit::Identity => {
            let translations: Vec<Vector3<f64>> = match gt {
                Some(g) => g.poses.iter().map(|p| p.translation).collect(),
                None => ring_prior(views, w, h)?.poses.iter().map(|p| p.translation).collect(),
            };
            let poses = translations
                .into_iter()
                .map(|t| Pose::new(AxisAngle::identity(), t))
                .collect::<Result<Vec<_>>>()?;
            CameraParams::new(poses, focal, w, h)
        }
        PoseInit::Perturbed {
            max_rot_deg,
            max_trans,
            seed,
        } => {
            let mut cam = gt
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("perturbed pose init needs a dataset with ground truth".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (d, pose) in cam.poses.iter_mut().enumerate() {
                let axis = random_unit(&mut rng);
                let angle = rng.random::<f64>() * max_rot_deg.to_radians();
                let offset = random_unit(&mut rng) * (rng.random::<f64>() * max_trans);
                if d == gauge {
                    continue;
                }
                let delta = AxisAngle::from_axis_angle(axis, angle)?.matrix();
                let r = delta * pose.rotation.matrix();
                *pose = Pose::new(crate::geometry::matrix_to_axis_angle(&r)?, pose.translation + offset)?;
            }
            Ok(cam)
        }
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Joint optimizer of field parameters, poses and focal length.
pub struct Trainer<'a> {
    data: &'a SubviewStack,
    cfg: TrainConfig,
    response: ResponseMatrix,
    unfiltered: ResponseMatrix,
    quad: QuadratureSpec,
    params: FieldParams,
    cameras: CameraParams,
    /// `[φ_0, t_0, φ_1, t_1, …]`.
    pose_vec: Vec<f64>,
    log_focal: [f64; 1],
    field_opt: AdamState,
    pose_opt: AdamState,
    focal_opt: AdamState,
    rng: ChaCha8Rng,
    measured: Vec<Vec<f64>>,
    peak: f64,
    epoch: usize,
    log: MetricsLog,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a SubviewStack, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.gauge_view >= data.views() {
            return Err(Error::InvalidArgument(format!(
                "gauge view {} out of range for {} views",
                cfg.gauge_view,
                data.views()
            )));
        }
        let response = data.response()?;
        if response.bins() != cfg.arch.bins {
            return Err(Error::GridMismatch(format!(
                "field has {} bins, dataset curves {}",
                cfg.arch.bins,
                response.bins()
            )));
        }
        let unfiltered = data.unfiltered_response()?;
        let init = cfg.pose_init.unwrap_or(if cfg.optimize_poses {
            PoseInit::Identity
        } else if data.ground_truth.is_some() {
            PoseInit::GroundTruth
        } else {
            PoseInit::Identity
        });
        let cameras = initial_cameras(data, init, cfg.gauge_view)?;
        let pose_vec = cameras
            .poses
            .iter()
            .flat_map(|p| p.rotation.vector().iter().chain(p.translation.iter()).copied().collect::<Vec<_>>())
            .collect::<Vec<_>>();
        let params = FieldParams::init(cfg.arch, cfg.seed)?;
        let quad = QuadratureSpec::from_bounds(cfg.samples, cfg.stratified, &data.bounds)?;
        let field_opt = AdamState::new("field", params.len(), cfg.field_schedule.initial_lr)?;
        let pose_opt = AdamState::new("pose", pose_vec.len(), cfg.pose_schedule.initial_lr)?;
        let focal_opt = AdamState::new("focal", 1, cfg.focal_schedule.initial_lr)?;
        let measured = data.images.iter().map(|i| i.to_f64()).collect();
        Ok(Self {
            data,
            response,
            unfiltered,
            quad,
            params,
            log_focal: [cameras.focal.ln()],
            cameras,
            pose_vec,
            field_opt,
            pose_opt,
            focal_opt,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            measured,
            peak: data.peak(),
            epoch: 0,
            log: MetricsLog::default(),
            cfg,
        })
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    pub fn cameras(&self) -> &CameraParams {
        &self.cameras
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over all views, one ray batch each, in index order.
    pub fn run_epoch(&mut self) -> Result<&MetricsRow> {
        let e = self.epoch;
        let lr_field = self.cfg.field_schedule.lr_at(e);
        let lr_pose = self.cfg.pose_schedule.lr_at(e);
        self.field_opt.set_lr(lr_field)?;
        self.pose_opt.set_lr(lr_pose)?;
        self.focal_opt.set_lr(self.cfg.focal_schedule.lr_at(e))?;
        let views = self.data.views();
        let (mut loss, mut fid, mut col) = (0.0, 0.0, 0.0);
        for d in 0..views {
            let (l, f, c) = self.guarded(d, |t| t.step(d))?;
            loss += l;
            fid += f;
            col += c;
        }
        let n = views as f64;
        let (rot, trans) = match &self.data.ground_truth {
            Some(gt) => {
                let err = pose_errors(&self.cameras, gt, self.cfg.gauge_view)?;
                (Some(err.mean_rotation_deg), Some(err.mean_translation))
            }
            None => (None, None),
        };
        let mse = fid / n / self.data.channels() as f64;
        self.log.rows.push(MetricsRow {
            epoch: e,
            loss: loss / n,
            loss_fid: fid / n,
            loss_color: col / n,
            lr_field,
            lr_pose,
            psnr_train: psnr(mse, self.peak),
            rot_err_deg: rot,
            trans_err: trans,
        });
        self.epoch += 1;
        if let Some(policy) = &self.cfg.checkpoint {
            if self.epoch % policy.every == 0 {
                save_checkpoint(&policy.path, &self.checkpoint())?;
            }
        }
        Ok(self.log.rows.last().expect("row just pushed"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            cameras: Some(self.cameras.clone()),
        }
    }

    fn step(&mut self, view: usize) -> Result<(f64, f64, f64)> {
        let (w, h) = (self.data.width(), self.data.height());
        let k = self.data.channels();
        let bins = self.response.bins();
        let m = self.cfg.rays_per_batch;
        let samples = self.cfg.samples;

        let mut pixels = Vec::with_capacity(m);
        let mut rays: Vec<Ray> = Vec::with_capacity(m);
        let mut depths = Vec::with_capacity(m * samples);
        for _ in 0..m {
            let p = self.rng.random_range(0..w * h);
            let (u, v) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
            rays.push(generate_ray(&self.cameras, view, u, v, &self.data.bounds)?);
            self.quad.sample_depths_into(&mut self.rng, &mut depths);
            pixels.push(p);
        }
        let trace = trace_batch(&self.params, &rays, &depths, samples, self.quad.t_far, self.cfg.chunk_rays)?;

        let mut filtered = vec![0.0; m * k];
        let mut unfiltered = vec![0.0; m * k];
        let mut target = vec![0.0; m * k];
        for (r, &p) in pixels.iter().enumerate() {
            let s = trace.ray_spectrum(r);
            self.response.project(view, s, &mut filtered[r * k..(r + 1) * k]);
            self.unfiltered.project(0, s, &mut unfiltered[r * k..(r + 1) * k]);
            target[r * k..(r + 1) * k].copy_from_slice(&self.measured[view][p * k..(p + 1) * k]);
        }
        let fid = fidelity_loss(&filtered, &target, k)?;
        let col = color_loss(&unfiltered, k, &self.data.stats)?;
        let alpha = self.cfg.weights.alpha;
        let beta = if self.cfg.color_loss { self.cfg.weights.beta } else { 0.0 };
        let weights = LossWeights { alpha, beta };
        let loss = total_loss(fid.value, col.value, &weights);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: self.epoch,
                view,
                message: format!("loss_fid = {}, loss_color = {}", fid.value, col.value),
            });
        }

        let mut grad_spectra = vec![0.0; m * bins];
        let mut tmp = vec![0.0; bins];
        for r in 0..m {
            let g = &mut grad_spectra[r * bins..(r + 1) * bins];
            self.response.project_adjoint(view, &fid.grad[r * k..(r + 1) * k], &mut tmp);
            g.iter_mut().zip(&tmp).for_each(|(a, b)| *a = alpha * b);
            if beta != 0.0 {
                self.unfiltered.project_adjoint(0, &col.grad[r * k..(r + 1) * k], &mut tmp);
                g.iter_mut().zip(&tmp).for_each(|(a, b)| *a += beta * b);
            }
        }

        let move_pose = self.cfg.optimize_poses && view != self.cfg.gauge_view;
        let camera_grads = move_pose || self.cfg.optimize_focal;
        let grads = backward_trace(&self.params, &trace, &grad_spectra, camera_grads, self.cfg.reduction)?;
        self.guarded(view, |t| adam_step(&mut t.field_opt, t.params.as_mut_slice(), &grads.theta))?;

        if camera_grads {
            let mut pose_grad = vec![0.0; self.pose_vec.len()];
            let mut focal_grad = 0.0;
            for (r, &p) in pixels.iter().enumerate() {
                let (u, v) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
                let (go, gd) = &grads.rays[r];
                let cg = generate_ray_backward(&self.cameras, view, u, v, go, gd)?;
                if move_pose {
                    for i in 0..3 {
                        pose_grad[6 * view + i] += cg.rotation[i];
                        pose_grad[6 * view + 3 + i] += cg.translation[i];
                    }
                }
                focal_grad += cg.focal;
            }
            if self.cfg.optimize_poses {
                self.guarded(view, |t| adam_step(&mut t.pose_opt, &mut t.pose_vec, &pose_grad))?;
            }
            if self.cfg.optimize_focal {
                // The optimizer works on log f.
                let g = [focal_grad * self.cameras.focal];
                self.guarded(view, |t| adam_step(&mut t.focal_opt, &mut t.log_focal, &g))?;
            }
            self.sync_cameras()?;
        }
        Ok((loss, fid.value, col.value))
    }

    /// Reports non-finite parameters, gradients or field outputs as divergence.
    fn guarded<T>(&mut self, view: usize, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let epoch = self.epoch;
        f(self).map_err(|e| match e {
            Error::NonFinite(what) => Error::Divergence {
                epoch,
                view,
                message: format!("non-finite {what}"),
            },
            Error::Render { sample, message } => Error::Divergence {
                epoch,
                view,
                message: format!("sample {sample}: {message}"),
            },
            other => other,
        })
    }

    fn sync_cameras(&mut self) -> Result<()> {
        for (d, pose) in self.cameras.poses.iter_mut().enumerate() {
            let v = &self.pose_vec[6 * d..6 * d + 6];
            *pose = Pose::new(AxisAngle::new(Vector3::new(v[0], v[1], v[2]))?, Vector3::new(v[3], v[4], v[5]))?;
        }
        let f = self.log_focal[0].exp();
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Divergence {
                epoch: self.epoch,
                view: 0,
                message: format!("focal length became {f}"),
            });
        }
        self.cameras.focal = f;
        Ok(())
    }

    pub fn finish(self) -> Result<TrainOutput> {
        let out = TrainOutput {
            params: self.params,
            cameras: self.cameras,
            log: self.log,
        };
        if let Some(policy) = &self.cfg.checkpoint {
            save_checkpoint(&policy.path, &out.checkpoint())?;
        }
        Ok(out)
    }
}

/// Minimizes `α L_fid + β L_col` over field parameters and, when enabled,
/// poses and focal length. Each epoch steps once per view.
pub fn train(data: &SubviewStack, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(data, cfg.clone())?;
    let report_every = (cfg.epochs / 20).max(1);
    for _ in 0..cfg.epochs {
        let row = trainer.run_epoch()?;
        if (row.epoch + 1) % report_every == 0 {
            log::info!(
                "epoch {:>6}  loss {:.6e}  psnr {:.2} dB{}",
                row.epoch + 1,
                row.loss,
                row.psnr_train,
                row.rot_err_deg.map(|r| format!("  rot {r:.3} deg")).unwrap_or_default()
            );
        }
    }
    trainer.finish()
}
