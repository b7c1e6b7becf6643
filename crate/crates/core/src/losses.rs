//! Fidelity and color-statistics losses.
//!
//! Pixel blocks are row-major `pixels × channels` slices of `f64`.

use crate::error::{Error, Result};

/// Inside the square root of the generated standard deviation when
/// differentiating, so constant batches keep finite gradients.
pub const STD_EPSILON: f64 = 1e-8;

/// Per-channel population mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

fn check_block(pixels: &[f64], channels: usize) -> Result<usize> {
    if channels == 0 || pixels.len() % channels != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not form pixels of {channels} channels",
            pixels.len()
        )));
    }
    let m = pixels.len() / channels;
    if m == 0 {
        return Err(Error::InvalidArgument("channel statistics of an empty image".into()));
    }
    Ok(m)
}

/// Welford accumulation of per-channel mean and population std.
pub fn channel_stats(pixels: &[f64], channels: usize) -> Result<ChannelStats> {
    check_block(pixels, channels)?;
    let mut mean = vec![0.0; channels];
    let mut m2 = vec![0.0; channels];
    for (i, px) in pixels.chunks_exact(channels).enumerate() {
        let count = (i + 1) as f64;
        for k in 0..channels {
            let delta = px[k] - mean[k];
            mean[k] += delta / count;
            m2[k] += delta * (px[k] - mean[k]);
        }
    }
    let m = (pixels.len() / channels) as f64;
    let std = m2.iter().map(|v| (v / m).max(0.0).sqrt()).collect();
    Ok(ChannelStats { mean, std })
}

/// A loss value with its gradient with respect to the input pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_measured(measured: &[ChannelStats], channels: usize) -> Result<()> {
    if measured.is_empty() {
        return Err(Error::InvalidArgument("color loss needs at least one measured view".into()));
    }
    if measured.iter().any(|s| s.mean.len() != channels || s.std.len() != channels) {
        return Err(Error::ShapeMismatch(format!(
            "measured statistics must have {channels} channels"
        )));
    }
    Ok(())
}

/// `(1/D) Σ_d Σ_k (μ̂_k − μ_k^d)² + (σ̂_k − σ_k^d)²` from precomputed statistics.
pub fn color_loss_from_stats(generated: &ChannelStats, measured: &[ChannelStats]) -> Result<f64> {
    let k = generated.channels();
    check_measured(measured, k)?;
    let sum: f64 = measured
        .iter()
        .map(|m| {
            (0..k)
                .map(|c| {
                    let dm = generated.mean[c] - m.mean[c];
                    let ds = generated.std[c] - m.std[c];
                    dm * dm + ds * ds
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum / measured.len() as f64)
}

/// Color-statistics loss of a generated pixel block against the measured
/// per-view statistics, with the gradient flowing through the batch mean
/// and standard deviation into every generated pixel.
pub fn color_loss(generated: &[f64], channels: usize, measured: &[ChannelStats]) -> Result<LossGrad> {
    let m = check_block(generated, channels)?;
    check_measured(measured, channels)?;
    let stats = channel_stats(generated, channels)?;
    let value = color_loss_from_stats(&stats, measured)?;
    let d = measured.len() as f64;
    let mut grad = vec![0.0; generated.len()];
    for c in 0..channels {
        let g_mean: f64 = measured.iter().map(|s| stats.mean[c] - s.mean[c]).sum::<f64>() * 2.0 / d;
        let g_std: f64 = measured.iter().map(|s| stats.std[c] - s.std[c]).sum::<f64>() * 2.0 / d;
        let smooth_std = (stats.std[c] * stats.std[c] + STD_EPSILON).sqrt();
        for (i, px) in generated.chunks_exact(channels).enumerate() {
            let d_std = (px[c] - stats.mean[c]) / (m as f64 * smooth_std);
            grad[i * channels + c] = g_mean / m as f64 + g_std * d_std;
        }
    }
    Ok(LossGrad { value, grad })
}

/// Mean over rays of the per-ray squared error summed over channels.
pub fn fidelity_loss(predicted: &[f64], measured: &[f64], channels: usize) -> Result<LossGrad> {
    if predicted.len() != measured.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted vs {} measured values",
            predicted.len(),
            measured.len()
        )));
    }
    let m = check_block(predicted, channels)? as f64;
    let mut value = 0.0;
    let grad = predicted
        .iter()
        .zip(measured)
        .map(|(p, q)| {
            let r = p - q;
            value += r * r;
            2.0 * r / m
        })
        .collect();
    Ok(LossGrad { value: value / m, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Fidelity weight.
    pub alpha: f64,
    /// Color-statistics weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("loss weights must be non-negative, got {alpha}, {beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

pub fn total_loss(fidelity: f64, color: f64, weights: &LossWeights) -> f64 {
    weights.alpha * fidelity + weights.beta * color
}

/// Peak signal-to-noise ratio in dB for a mean squared error and peak value.
pub fn psnr(mse: f64, peak: f64) -> f64 {
    10.0 * (peak * peak / mse).log10()
}
