//! Discrete emission-absorption rendering with spectral projection.
//!
//! Along a ray with samples `t_1 < … < t_N` and widths `δ_i = t_{i+1} − t_i`
//! (`δ_N = t_far − t_N`):
//!
//! ```text
//! T_i = exp(−Σ_{j<i} σ_j δ_j)      w_i = T_i (1 − exp(−σ_i δ_i))
//! spectrum_b = Σ_i w_i s_b(x_i)     intensity_k = Σ_b M[d, k, b] spectrum_b
//! ```
//!
//! Radiance behind `t_far` is zero; the residual transmittance `T_{N+1}`
//! is reported so that `Σ w_i + T_{N+1} = 1`. Projection through the
//! response happens after accumulation because the response does not
//! depend on depth.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{backward_batch as field_backward_batch, forward_batch, FieldCache, FieldParams, RadianceField};
use crate::geometry::{generate_ray, CameraParams, Ray, SceneBounds};
use crate::scenedata::raster::Image;
use crate::spectral::ResponseMatrix;

pub const TRAIN_SAMPLES: usize = 64;
pub const EVAL_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub samples: usize,
    pub stratified: bool,
    pub t_near: f64,
    pub t_far: f64,
}

impl QuadratureSpec {
    pub fn new(samples: usize, stratified: bool, t_near: f64, t_far: f64) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {samples}")));
        }
        SceneBounds::new(t_near, t_far)?;
        Ok(Self {
            samples,
            stratified,
            t_near,
            t_far,
        })
    }

    pub fn from_bounds(samples: usize, stratified: bool, bounds: &SceneBounds) -> Result<Self> {
        Self::new(samples, stratified, bounds.t_near, bounds.t_far)
    }

    pub fn bounds(&self) -> SceneBounds {
        SceneBounds {
            t_near: self.t_near,
            t_far: self.t_far,
        }
    }

    /// Sample depths: the left edge of each of `N` equal sub-intervals, or
    /// one uniform draw inside each when stratified.
    pub fn sample_depths<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.samples);
        self.sample_depths_into(rng, &mut out);
        out
    }

    pub fn sample_depths_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        let step = (self.t_far - self.t_near) / self.samples as f64;
        for i in 0..self.samples {
            let jitter = if self.stratified { rng.random::<f64>() } else { 0.0 };
            out.push(self.t_near + (i as f64 + jitter) * step);
        }
    }
}

/// Per-sample compositing state of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Compositing {
    pub weights: Vec<f64>,
    /// `T_1 … T_{N+1}`.
    pub transmittance: Vec<f64>,
    pub spectrum: Vec<f64>,
}

fn deltas(depths: &[f64], t_far: f64) -> impl Iterator<Item = f64> + '_ {
    let n = depths.len();
    (0..n).map(move |i| if i + 1 < n { depths[i + 1] - depths[i] } else { t_far - depths[i] })
}

/// Alpha-composites per-sample densities and spectra (`samples × bins`).
pub fn composite(sigmas: &[f64], spectra: &[f64], depths: &[f64], t_far: f64) -> Result<Compositing> {
    let n = depths.len();
    if sigmas.len() != n || n == 0 || spectra.len() % n != 0 {
        return Err(Error::ShapeMismatch("sample arrays disagree in length".into()));
    }
    let bins = spectra.len() / n;
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n + 1);
    let mut spectrum = vec![0.0; bins];
    let mut optical_depth = 0.0;
    transmittance.push(1.0);
    for (i, delta) in deltas(depths, t_far).enumerate() {
        let sigma = sigmas[i];
        let s = &spectra[i * bins..(i + 1) * bins];
        if !sigma.is_finite() || sigma < 0.0 || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Render {
                sample: i,
                message: format!("field returned sigma {sigma} / non-finite spectrum"),
            });
        }
        let t_i = transmittance[i];
        let tau = sigma * delta;
        let w = -t_i * (-tau).exp_m1();
        optical_depth += tau;
        weights.push(w);
        transmittance.push((-optical_depth).exp());
        for (acc, v) in spectrum.iter_mut().zip(s) {
            *acc += w * v;
        }
    }
    Ok(Compositing {
        weights,
        transmittance,
        spectrum,
    })
}

/// Gradients of [`composite`] with respect to densities and spectra, given
/// `∂L/∂spectrum`.
#[allow(clippy::too_many_arguments)]
pub fn composite_backward(
    spectra: &[f64],
    depths: &[f64],
    t_far: f64,
    comp: &Compositing,
    grad_spectrum: &[f64],
    grad_sigmas: &mut [f64],
    grad_spectra: &mut [f64],
) {
    let n = depths.len();
    let bins = grad_spectrum.len();
    // c_i = ∂L/∂w_i
    let c: Vec<f64> = (0..n)
        .map(|i| {
            spectra[i * bins..(i + 1) * bins]
                .iter()
                .zip(grad_spectrum)
                .map(|(s, g)| s * g)
                .sum()
        })
        .collect();
    // ∂L/∂τ_i = c_i T_{i+1} − Σ_{k>i} c_k w_k
    let mut tail = 0.0;
    let dts: Vec<f64> = deltas(depths, t_far).collect();
    for i in (0..n).rev() {
        let d_tau = c[i] * comp.transmittance[i + 1] - tail;
        tail += c[i] * comp.weights[i];
        grad_sigmas[i] = d_tau * dts[i];
        let w = comp.weights[i];
        for (gs, g) in grad_spectra[i * bins..(i + 1) * bins].iter_mut().zip(grad_spectrum) {
            *gs = w * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub spectrum: Vec<f64>,
    pub intensity: Vec<f64>,
    pub weights: Vec<f64>,
    pub residual_transmittance: f64,
}

impl RenderOutput {
    fn from_compositing(comp: Compositing, view: usize, response: &ResponseMatrix) -> Self {
        let mut intensity = vec![0.0; response.channels()];
        response.project(view, &comp.spectrum, &mut intensity);
        Self {
            residual_transmittance: *comp.transmittance.last().unwrap_or(&1.0),
            spectrum: comp.spectrum,
            intensity,
            weights: comp.weights,
        }
    }
}

fn check_render_inputs(field_bins: usize, view: usize, response: &ResponseMatrix) -> Result<()> {
    response.check_view(view)?;
    if field_bins != response.bins() {
        return Err(Error::ShapeMismatch(format!(
            "field emits {field_bins} bins, response expects {}",
            response.bins()
        )));
    }
    Ok(())
}

/// Renders one ray over `quad`'s depth range and projects it through view
/// `view` of `response`.
pub fn render_ray<F: RadianceField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray,
    quad: &QuadratureSpec,
    view: usize,
    response: &ResponseMatrix,
    rng: &mut R,
) -> Result<RenderOutput> {
    check_render_inputs(field.bins(), view, response)?;
    let depths = quad.sample_depths(rng);
    let comp = march(field, ray, &depths, quad.t_far)?;
    Ok(RenderOutput::from_compositing(comp, view, response))
}

fn march<F: RadianceField + ?Sized>(field: &F, ray: &Ray, depths: &[f64], t_far: f64) -> Result<Compositing> {
    let points: Vec<Vector3<f64>> = depths.iter().map(|&t| ray.at(t)).collect();
    let dirs = vec![ray.direction; depths.len()];
    let mut sigma = vec![0.0; depths.len()];
    let mut spectra = vec![0.0; depths.len() * field.bins()];
    field.evaluate(&points, &dirs, &mut sigma, &mut spectra)?;
    composite(&sigma, &spectra, depths, t_far)
}

/// Everything needed to backpropagate one MLP-rendered ray.
#[derive(Debug, Clone)]
pub struct RayCache {
    view: usize,
    ray: Ray,
    depths: Vec<f64>,
    t_far: f64,
    field: FieldCache,
    comp: Compositing,
}

impl RayCache {
    pub fn ray(&self) -> &Ray {
        &self.ray
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }
}

/// [`render_ray`] for the MLP, keeping activations for [`render_ray_backward`].
pub fn render_ray_traced<R: Rng + ?Sized>(
    params: &FieldParams,
    ray: &Ray,
    quad: &QuadratureSpec,
    view: usize,
    response: &ResponseMatrix,
    rng: &mut R,
) -> Result<(RenderOutput, RayCache)> {
    check_render_inputs(params.arch().bins, view, response)?;
    let depths = quad.sample_depths(rng);
    let points: Vec<Vector3<f64>> = depths.iter().map(|&t| ray.at(t)).collect();
    let dirs = vec![ray.direction; depths.len()];
    let field = forward_batch(params, &points, &dirs)?;
    let comp = composite(field.sigma(), field.spectrum(), &depths, quad.t_far)?;
    let out = RenderOutput::from_compositing(comp.clone(), view, response);
    Ok((
        out,
        RayCache {
            view,
            ray: *ray,
            depths,
            t_far: quad.t_far,
            field,
            comp,
        },
    ))
}

/// Gradients of one rendered ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrads {
    pub theta: Vec<f64>,
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

/// Backpropagates `∂L/∂intensity` (one entry per channel) through projection,
/// compositing and the field.
pub fn render_ray_backward(
    params: &FieldParams,
    cache: &RayCache,
    response: &ResponseMatrix,
    grad_intensity: &[f64],
) -> Result<RayGrads> {
    if grad_intensity.len() != response.channels() || cache.comp.spectrum.len() != response.bins() {
        return Err(Error::ShapeMismatch("upstream does not match the cached render".into()));
    }
    let mut grad_spectrum = vec![0.0; response.bins()];
    response.project_adjoint(cache.view, grad_intensity, &mut grad_spectrum);
    let mut theta = vec![0.0; params.len()];
    let (origin, direction) = backprop_ray(
        params,
        &cache.field,
        &cache.comp,
        &cache.depths,
        cache.t_far,
        &grad_spectrum,
        &mut theta,
    )?;
    Ok(RayGrads {
        theta,
        origin,
        direction,
    })
}

#[allow(clippy::too_many_arguments)]
fn backprop_ray(
    params: &FieldParams,
    field: &FieldCache,
    comp: &Compositing,
    depths: &[f64],
    t_far: f64,
    grad_spectrum: &[f64],
    theta_grad: &mut [f64],
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let n = depths.len();
    let bins = grad_spectrum.len();
    let mut g_sigma = vec![0.0; n];
    let mut g_spec = vec![0.0; n * bins];
    composite_backward(field.spectrum(), depths, t_far, comp, grad_spectrum, &mut g_sigma, &mut g_spec);
    let inputs = field_backward_batch(params, field, &g_spec, &g_sigma, theta_grad, true)?
        .expect("input gradients requested");
    Ok(chain_points(&inputs.points, &inputs.dirs, depths))
}

/// `x_i = o + t_i d`: origin and direction gradients from per-sample ones.
fn chain_points(points: &[Vector3<f64>], dirs: &[Vector3<f64>], depths: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
    let mut origin = Vector3::zeros();
    let mut direction = Vector3::zeros();
    for ((gp, gd), t) in points.iter().zip(dirs).zip(depths) {
        origin += gp;
        direction += gp * *t + gd;
    }
    (origin, direction)
}

/// How per-chunk parameter gradients are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Chunks are summed in index order; bitwise reproducible.
    #[default]
    Ordered,
    /// Tree reduction whose shape follows the thread pool's work stealing.
    Unordered,
}

struct ChunkTrace {
    first_ray: usize,
    rays: usize,
    field: FieldCache,
    comps: Vec<Compositing>,
}

/// Forward state of a batch of MLP-rendered rays sharing one sample count.
pub struct BatchTrace {
    rays: Vec<Ray>,
    depths: Vec<f64>,
    samples: usize,
    t_far: f64,
    bins: usize,
    chunks: Vec<ChunkTrace>,
    spectra: Vec<f64>,
}

impl BatchTrace {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Ray-integrated spectra, row-major `rays × bins`.
    pub fn spectra(&self) -> &[f64] {
        &self.spectra
    }

    pub fn ray_spectrum(&self, ray: usize) -> &[f64] {
        &self.spectra[ray * self.bins..(ray + 1) * self.bins]
    }

    pub fn weights(&self, ray: usize) -> &[f64] {
        let chunk = &self.chunks[ray / self.chunk_size()];
        &chunk.comps[ray - chunk.first_ray].weights
    }

    pub fn residual_transmittance(&self, ray: usize) -> f64 {
        let chunk = &self.chunks[ray / self.chunk_size()];
        *chunk.comps[ray - chunk.first_ray].transmittance.last().unwrap()
    }

    fn chunk_size(&self) -> usize {
        self.chunks.first().map(|c| c.rays).unwrap_or(1).max(1)
    }
}

/// Renders `rays` with precomputed depths (`rays × samples`), processing
/// `chunk_rays` rays per field evaluation.
pub fn trace_batch(
    params: &FieldParams,
    rays: &[Ray],
    depths: &[f64],
    samples: usize,
    t_far: f64,
    chunk_rays: usize,
) -> Result<BatchTrace> {
    if depths.len() != rays.len() * samples || samples == 0 {
        return Err(Error::ShapeMismatch("depth table does not match ray count".into()));
    }
    let chunk_rays = chunk_rays.max(1);
    let bins = params.arch().bins;
    let chunks: Vec<ChunkTrace> = rays
        .par_chunks(chunk_rays)
        .enumerate()
        .map(|(c, chunk)| -> Result<ChunkTrace> {
            let first_ray = c * chunk_rays;
            let mut points = Vec::with_capacity(chunk.len() * samples);
            let mut dirs = Vec::with_capacity(chunk.len() * samples);
            for (r, ray) in chunk.iter().enumerate() {
                for &t in &depths[(first_ray + r) * samples..(first_ray + r + 1) * samples] {
                    points.push(ray.at(t));
                    dirs.push(ray.direction);
                }
            }
            let field = forward_batch(params, &points, &dirs)?;
            let comps = (0..chunk.len())
                .map(|r| {
                    let span = r * samples..(r + 1) * samples;
                    composite(
                        &field.sigma()[span.clone()],
                        &field.spectrum()[span.start * bins..span.end * bins],
                        &depths[(first_ray + r) * samples..(first_ray + r + 1) * samples],
                        t_far,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ChunkTrace {
                first_ray,
                rays: chunk.len(),
                field,
                comps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spectra = Vec::with_capacity(rays.len() * bins);
    for chunk in &chunks {
        for comp in &chunk.comps {
            spectra.extend_from_slice(&comp.spectrum);
        }
    }
    Ok(BatchTrace {
        rays: rays.to_vec(),
        depths: depths.to_vec(),
        samples,
        t_far,
        bins,
        chunks,
        spectra,
    })
}

/// Gradients of a traced batch: parameter gradient plus per-ray
/// `(∂L/∂origin, ∂L/∂direction)`.
pub struct BatchGrads {
    pub theta: Vec<f64>,
    pub rays: Vec<(Vector3<f64>, Vector3<f64>)>,
}

/// Backpropagates `∂L/∂spectrum` for every ray (`rays × bins`).
pub fn backward_trace(
    params: &FieldParams,
    trace: &BatchTrace,
    grad_spectra: &[f64],
    ray_grads: bool,
    reduction: Reduction,
) -> Result<BatchGrads> {
    let bins = trace.bins;
    if grad_spectra.len() != trace.rays.len() * bins {
        return Err(Error::ShapeMismatch("spectrum cotangent does not match batch".into()));
    }
    let samples = trace.samples;
    let per_chunk = |chunk: &ChunkTrace| -> Result<(Vec<f64>, Vec<(Vector3<f64>, Vector3<f64>)>)> {
        let n = chunk.rays * samples;
        let mut g_sigma = vec![0.0; n];
        let mut g_spec = vec![0.0; n * bins];
        for r in 0..chunk.rays {
            let ray = chunk.first_ray + r;
            let depths = &trace.depths[ray * samples..(ray + 1) * samples];
            composite_backward(
                &chunk.field.spectrum()[r * samples * bins..(r + 1) * samples * bins],
                depths,
                trace.t_far,
                &chunk.comps[r],
                &grad_spectra[ray * bins..(ray + 1) * bins],
                &mut g_sigma[r * samples..(r + 1) * samples],
                &mut g_spec[r * samples * bins..(r + 1) * samples * bins],
            );
        }
        let mut theta = vec![0.0; params.len()];
        let inputs = field_backward_batch(params, &chunk.field, &g_spec, &g_sigma, &mut theta, ray_grads)?;
        let mut rays = Vec::new();
        if let Some(inputs) = inputs {
            for r in 0..chunk.rays {
                let ray = chunk.first_ray + r;
                let span = r * samples..(r + 1) * samples;
                rays.push(chain_points(
                    &inputs.points[span.clone()],
                    &inputs.dirs[span],
                    &trace.depths[ray * samples..(ray + 1) * samples],
                ));
            }
        }
        Ok((theta, rays))
    };

    let (theta, rays) = match reduction {
        Reduction::Ordered => {
            let parts = trace
                .chunks
                .par_iter()
                .map(per_chunk)
                .collect::<Result<Vec<_>>>()?;
            let mut theta = vec![0.0; params.len()];
            let mut rays = Vec::with_capacity(trace.rays.len());
            for (t, r) in parts {
                for (acc, v) in theta.iter_mut().zip(&t) {
                    *acc += v;
                }
                rays.extend(r);
            }
            (theta, rays)
        }
        Reduction::Unordered => {
            let parts = trace
                .chunks
                .par_iter()
                .map(|c| per_chunk(c).map(|(t, r)| (t, vec![(c.first_ray, r)])))
                .try_reduce(
                    || (vec![0.0; params.len()], Vec::new()),
                    |(mut ta, mut ra), (tb, rb)| {
                        for (a, b) in ta.iter_mut().zip(&tb) {
                            *a += b;
                        }
                        ra.extend(rb);
                        Ok((ta, ra))
                    },
                )?;
            let (theta, mut ray_parts) = parts;
            ray_parts.sort_by_key(|(first, _)| *first);
            (theta, ray_parts.into_iter().flat_map(|(_, r)| r).collect())
        }
    };
    Ok(BatchGrads { theta, rays })
}

/// Per-pixel ray-integrated spectra of one view, row-major `height × width × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub width: usize,
    pub height: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl SpectralImage {
    /// Projects every pixel through view `view` of `response`.
    pub fn project(&self, response: &ResponseMatrix, view: usize) -> Result<Image> {
        response.check_view(view)?;
        if response.bins() != self.bins {
            return Err(Error::ShapeMismatch("response bin count differs from image".into()));
        }
        let k = response.channels();
        let mut out = vec![0.0f32; self.width * self.height * k];
        let mut px = vec![0.0; k];
        for p in 0..self.width * self.height {
            response.project(view, &self.data[p * self.bins..(p + 1) * self.bins], &mut px);
            for c in 0..k {
                out[p * k + c] = px[c] as f32;
            }
        }
        Image::new(self.width, self.height, k, out)
    }
}

/// Renders the per-pixel spectra of `view`. Rows are rendered in parallel;
/// stratified jitter is drawn from a per-row generator derived from `seed`.
pub fn render_spectral_image<F: RadianceField + ?Sized>(
    field: &F,
    cam: &CameraParams,
    view: usize,
    quad: &QuadratureSpec,
    seed: u64,
) -> Result<SpectralImage> {
    cam.pose(view)?;
    let bins = field.bins();
    let bounds = quad.bounds();
    let rows = (0..cam.height)
        .into_par_iter()
        .map(|y| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((view as u64) << 32) ^ y as u64);
            let mut row = Vec::with_capacity(cam.width * bins);
            let mut points = Vec::with_capacity(cam.width * quad.samples);
            let mut dirs = Vec::with_capacity(cam.width * quad.samples);
            let mut depth_rows = Vec::with_capacity(cam.width);
            for x in 0..cam.width {
                let ray = generate_ray(cam, view, x as f64 + 0.5, y as f64 + 0.5, &bounds)?;
                let depths = quad.sample_depths(&mut rng);
                for &t in &depths {
                    points.push(ray.at(t));
                    dirs.push(ray.direction);
                }
                depth_rows.push(depths);
            }
            let mut sigma = vec![0.0; points.len()];
            let mut spectra = vec![0.0; points.len() * bins];
            field.evaluate(&points, &dirs, &mut sigma, &mut spectra)?;
            let s = quad.samples;
            for (x, depths) in depth_rows.iter().enumerate() {
                let comp = composite(
                    &sigma[x * s..(x + 1) * s],
                    &spectra[x * s * bins..(x + 1) * s * bins],
                    depths,
                    quad.t_far,
                )?;
                row.extend_from_slice(&comp.spectrum);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralImage {
        width: cam.width,
        height: cam.height,
        bins,
        data: rows.concat(),
    })
}

/// Renders view `view` through its filtered response, or through view 0 of
/// `response_override` (typically the unfiltered sensor) when given.
pub fn render_image<F: RadianceField + ?Sized>(
    field: &F,
    cam: &CameraParams,
    view: usize,
    quad: &QuadratureSpec,
    response: &ResponseMatrix,
    response_override: Option<&ResponseMatrix>,
    seed: u64,
) -> Result<Image> {
    let (m, mv) = match response_override {
        Some(o) => (o, 0),
        None => (response, view),
    };
    check_render_inputs(field.bins(), mv, m)?;
    render_spectral_image(field, cam, view, quad, seed)?.project(m, mv)
}
