//! Reconstruction metrics: per-view PSNR, pose errors after gauge
//! alignment, and color-statistics distance.

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::geometry::{rotation_distance_deg, CameraParams, Pose};
use crate::losses::{channel_stats, color_loss_from_stats, psnr, ChannelStats};
use crate::renderer::{render_image, QuadratureSpec};
use crate::scenedata::dataset::SubviewStack;
use crate::scenedata::raster::Image;

/// Rigidly moves `estimate` so that its `gauge` view coincides with the
/// ground truth's: `A = T_gt[g] · T_est[g]⁻¹` applied to every pose.
pub fn align_to_gauge(estimate: &CameraParams, truth: &CameraParams, gauge: usize) -> Result<Vec<Pose>> {
    if estimate.views() != truth.views() {
        return Err(Error::ShapeMismatch("estimate and ground truth differ in view count".into()));
    }
    let est_g = estimate.pose(gauge)?;
    let gt_g = truth.pose(gauge)?;
    let r_a = gt_g.rotation.matrix() * est_g.rotation.matrix().transpose();
    let t_a = gt_g.translation - r_a * est_g.translation;
    estimate
        .poses
        .iter()
        .map(|p| {
            let r = r_a * p.rotation.matrix();
            Pose::new(crate::geometry::matrix_to_axis_angle(&r)?, r_a * p.translation + t_a)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseErrors {
    pub rotation_deg: Vec<f64>,
    pub translation: Vec<f64>,
    /// Means over all views except the gauge view (which is zero by construction).
    pub mean_rotation_deg: f64,
    pub mean_translation: f64,
}

pub fn pose_errors(estimate: &CameraParams, truth: &CameraParams, gauge: usize) -> Result<PoseErrors> {
    let aligned = align_to_gauge(estimate, truth, gauge)?;
    let rotation_deg: Vec<f64> = aligned
        .iter()
        .zip(&truth.poses)
        .map(|(a, t)| rotation_distance_deg(&a.rotation.matrix(), &t.rotation.matrix()))
        .collect();
    let translation: Vec<f64> = aligned
        .iter()
        .zip(&truth.poses)
        .map(|(a, t)| (a.translation - t.translation).norm())
        .collect();
    let others = (rotation_deg.len() - 1).max(1) as f64;
    let sum_except = |v: &[f64]| v.iter().enumerate().filter(|(i, _)| *i != gauge).map(|(_, x)| x).sum::<f64>();
    Ok(PoseErrors {
        mean_rotation_deg: sum_except(&rotation_deg) / others,
        mean_translation: sum_except(&translation) / others,
        rotation_deg,
        translation,
    })
}

/// Mean squared error over all samples of two equally sized images.
pub fn image_mse(a: &Image, b: &Image) -> Result<f64> {
    if (a.width(), a.height(), a.channels()) != (b.width(), b.height(), b.channels()) {
        return Err(Error::ShapeMismatch("images differ in size".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Renders every view through its own filter.
pub fn render_views<F: RadianceField + ?Sized>(
    field: &F,
    cam: &CameraParams,
    data: &SubviewStack,
    quad: &QuadratureSpec,
) -> Result<Vec<Image>> {
    let response = data.response()?;
    (0..data.views())
        .map(|d| render_image(field, cam, d, quad, &response, None, 0))
        .collect()
}

/// Renders every view through the unfiltered sensor.
pub fn render_unfiltered<F: RadianceField + ?Sized>(
    field: &F,
    cam: &CameraParams,
    data: &SubviewStack,
    quad: &QuadratureSpec,
) -> Result<Vec<Image>> {
    let response = data.response()?;
    let unfiltered = data.unfiltered_response()?;
    (0..data.views())
        .map(|d| render_image(field, cam, d, quad, &response, Some(&unfiltered), 0))
        .collect()
}

/// PSNR of each filtered render against the measured subview, with the
/// dataset's brightest measured intensity as peak.
pub fn view_psnr(renders: &[Image], data: &SubviewStack) -> Result<Vec<f64>> {
    let peak = data.peak();
    renders
        .iter()
        .zip(&data.images)
        .map(|(r, m)| Ok(psnr(image_mse(r, m)?, peak)))
        .collect()
}

/// Color-statistics loss of each unfiltered render against all measured
/// views, averaged over renders.
pub fn color_distance(unfiltered: &[Image], measured: &[ChannelStats]) -> Result<f64> {
    if unfiltered.is_empty() {
        return Err(Error::InvalidArgument("no renders".into()));
    }
    let mut total = 0.0;
    for img in unfiltered {
        let stats = channel_stats(&img.to_f64(), img.channels())?;
        total += color_loss_from_stats(&stats, measured)?;
    }
    Ok(total / unfiltered.len() as f64)
}

/// Largest relative deviation `|μ_a − μ_b| / μ_b` of per-channel means
/// between two images.
pub fn channel_mean_deviation(a: &Image, b: &Image) -> Result<f64> {
    let k = a.channels();
    if k != b.channels() {
        return Err(Error::ShapeMismatch("channel counts differ".into()));
    }
    let sa = channel_stats(&a.to_f64(), k)?;
    let sb = channel_stats(&b.to_f64(), k)?;
    Ok(sa
        .mean
        .iter()
        .zip(&sb.mean)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}

/// Per-view metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub psnr: Vec<f64>,
    pub pose: Option<PoseErrors>,
    pub color_distance: f64,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }

    /// `view,psnr,rot_err_deg,trans_err,color_distance` with a final `mean` row.
    /// Pose columns are empty without ground truth.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,psnr,rot_err_deg,trans_err,color_distance\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (d, p) in self.psnr.iter().enumerate() {
            let rot = self.pose.as_ref().map(|e| e.rotation_deg[d]);
            let tr = self.pose.as_ref().map(|e| e.translation[d]);
            out.push_str(&format!("{d},{p},{},{},\n", opt(rot), opt(tr)));
        }
        out.push_str(&format!(
            "mean,{},{},{},{}\n",
            self.mean_psnr(),
            opt(self.pose.as_ref().map(|e| e.mean_rotation_deg)),
            opt(self.pose.as_ref().map(|e| e.mean_translation)),
            self.color_distance
        ));
        out
    }
}

/// Full evaluation of a field with estimated cameras against a dataset.
pub fn evaluate<F: RadianceField + ?Sized>(
    field: &F,
    cam: &CameraParams,
    data: &SubviewStack,
    samples: usize,
    gauge: usize,
) -> Result<EvalReport> {
    let quad = QuadratureSpec::from_bounds(samples, false, &data.bounds)?;
    let renders = render_views(field, cam, data, &quad)?;
    let unfiltered = render_unfiltered(field, cam, data, &quad)?;
    let pose = match &data.ground_truth {
        Some(gt) => Some(pose_errors(cam, gt, gauge)?),
        None => None,
    };
    Ok(EvalReport {
        psnr: view_psnr(&renders, data)?,
        pose,
        color_distance: color_distance(&unfiltered, &data.stats)?,
    })
}
