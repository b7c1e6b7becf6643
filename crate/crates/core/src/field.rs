//! Spectral radiance field `(x, dir) → (s, σ)` as a coordinate MLP.
//!
//! Layout of the network, for `depth` hidden layers of `width` units:
//!
//! ```text
//! enc(x) ─► L0 ─► L1 ─► … ─► L(depth−1) ─► h ─┬─► density head ─► softplus ─► σ
//!            (enc(x) re-injected at `skip`)    └─► [h, enc(dir)] ─► view layer ─► spectral head ─► sigmoid ─► s
//! ```
//!
//! Hidden layers use ReLU. The density head sees only `h`, so σ does not
//! depend on the viewing direction. Gradients are computed by explicit
//! backpropagation through activations cached by [`forward_batch`].

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};

/// Architecture descriptor of the spectral MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldArch {
    pub depth: usize,
    pub width: usize,
    /// Hidden layer that receives the encoded position concatenated to its input.
    pub skip: Option<usize>,
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub bins: usize,
}

impl Default for FieldArch {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 128,
            skip: Some(2),
            pos_freqs: 10,
            dir_freqs: 4,
            bins: crate::spectral::DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    input: usize,
    output: usize,
    weight: usize,
    bias: usize,
}

impl Linear {
    fn weights<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.weight..self.weight + self.input * self.output]
    }

    fn bias<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.bias..self.bias + self.output]
    }
}

impl FieldArch {
    pub fn pos_dim(&self) -> usize {
        3 + 6 * self.pos_freqs
    }

    pub fn dir_dim(&self) -> usize {
        3 + 6 * self.dir_freqs
    }

    pub fn view_width(&self) -> usize {
        (self.width / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.bins == 0 {
            return Err(Error::InvalidArgument(format!("degenerate field architecture {self:?}")));
        }
        if let Some(s) = self.skip {
            if s == 0 || s >= self.depth {
                return Err(Error::InvalidArgument(format!(
                    "skip layer {s} must lie in 1..{}",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    fn hidden_input(&self, layer: usize) -> usize {
        match (layer, self.skip) {
            (0, _) => self.pos_dim(),
            (l, Some(s)) if l == s => self.width + self.pos_dim(),
            _ => self.width,
        }
    }

    /// Hidden layers, then density head, view layer and spectral head.
    fn layers(&self) -> Vec<Linear> {
        let mut shapes: Vec<(usize, usize)> = (0..self.depth)
            .map(|l| (self.hidden_input(l), self.width))
            .collect();
        shapes.push((self.width, 1));
        shapes.push((self.width + self.dir_dim(), self.view_width()));
        shapes.push((self.view_width(), self.bins));
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(input, output)| {
                let layer = Linear {
                    input,
                    output,
                    weight: offset,
                    bias: offset + input * output,
                };
                offset += input * output + output;
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.input * l.output + l.output).sum()
    }

    /// Per-layer `(input, output)` sizes in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers().iter().map(|l| (l.input, l.output)).collect()
    }
}

/// Network parameters Θ as one flat vector; each layer stores its
/// `input × output` row-major weights followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    arch: FieldArch,
    layers: Vec<Linear>,
    theta: Vec<f64>,
}

impl FieldParams {
    pub fn zeros(arch: FieldArch) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Self::from_vec(arch, vec![0.0; n])
    }

    /// He-style uniform fan-in initialization, zero biases.
    pub fn init(arch: FieldArch, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in params.layers.clone() {
            let bound = (6.0 / layer.input as f64).sqrt();
            for w in &mut params.theta[layer.weight..layer.weight + layer.input * layer.output] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn from_vec(arch: FieldArch, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for an architecture with {}",
                theta.len(),
                arch.param_count()
            )));
        }
        Ok(Self {
            arch,
            layers: arch.layers(),
            theta,
        })
    }

    pub fn arch(&self) -> &FieldArch {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn check_finite(&self) -> Result<()> {
        if self.theta.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("field parameters".into()))
        }
    }
}

/// Appends `v` followed by `sin(2^j π v), cos(2^j π v)` for `j < freqs`.
pub fn positional_encode(v: &Vector3<f64>, freqs: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 + 6 * freqs];
    encode_into(v, freqs, &mut out);
    out
}

fn encode_into(v: &Vector3<f64>, freqs: usize, out: &mut [f64]) {
    out[..3].copy_from_slice(v.as_slice());
    let mut scale = std::f64::consts::PI;
    for j in 0..freqs {
        let base = 3 + 6 * j;
        for c in 0..3 {
            let (s, co) = (scale * v[c]).sin_cos();
            out[base + c] = s;
            out[base + 3 + c] = co;
        }
        scale *= 2.0;
    }
}

fn encode_backward(v: &Vector3<f64>, freqs: usize, grad: &[f64]) -> Vector3<f64> {
    let mut g = Vector3::new(grad[0], grad[1], grad[2]);
    let mut scale = std::f64::consts::PI;
    for j in 0..freqs {
        let base = 3 + 6 * j;
        for c in 0..3 {
            let (s, co) = (scale * v[c]).sin_cos();
            g[c] += scale * (co * grad[base + c] - s * grad[base + 3 + c]);
        }
        scale *= 2.0;
    }
    g
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output of one field evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput {
    pub spectrum: Vec<f64>,
    pub sigma: f64,
}

/// Activations of a batched forward pass, consumed by [`backward_batch`].
#[derive(Debug, Clone)]
pub struct FieldCache {
    arch: FieldArch,
    n: usize,
    points: Vec<Vector3<f64>>,
    dirs: Vec<Vector3<f64>>,
    enc_x: Vec<f64>,
    enc_d: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    density_raw: Vec<f64>,
    view_hidden: Vec<f64>,
    spectrum: Vec<f64>,
    sigma: Vec<f64>,
}

impl FieldCache {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Densities, one per point.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Spectra, row-major `points × bins`.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn output(&self, i: usize) -> FieldOutput {
        let bins = self.spectrum.len() / self.n.max(1);
        FieldOutput {
            spectrum: self.spectrum[i * bins..(i + 1) * bins].to_vec(),
            sigma: self.sigma[i],
        }
    }
}

fn fill_bias(out: &mut [f64], bias: &[f64], rows: usize) {
    for r in 0..rows {
        out[r * bias.len()..(r + 1) * bias.len()].copy_from_slice(bias);
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Evaluates the field at `points` viewed along `dirs`, caching activations.
pub fn forward_batch(params: &FieldParams, points: &[Vector3<f64>], dirs: &[Vector3<f64>]) -> Result<FieldCache> {
    if points.len() != dirs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} directions",
            points.len(),
            dirs.len()
        )));
    }
    params.check_finite()?;
    let arch = &params.arch;
    let theta = &params.theta;
    let n = points.len();
    let (ex, ed, w, vw, bins) = (arch.pos_dim(), arch.dir_dim(), arch.width, arch.view_width(), arch.bins);

    let mut enc_x = vec![0.0; n * ex];
    let mut enc_d = vec![0.0; n * ed];
    for i in 0..n {
        encode_into(&points[i], arch.pos_freqs, &mut enc_x[i * ex..(i + 1) * ex]);
        encode_into(&dirs[i], arch.dir_freqs, &mut enc_d[i * ed..(i + 1) * ed]);
    }

    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(arch.depth);
    for l in 0..arch.depth {
        let layer = &params.layers[l];
        let wts = layer.weights(theta);
        let mut out = vec![0.0; n * w];
        fill_bias(&mut out, layer.bias(theta), n);
        if l == 0 {
            gemm(1.0, MatRef::new(&enc_x, n, ex), MatRef::new(wts, ex, w), 1.0, &mut out);
        } else {
            let prev = &hidden[l - 1];
            gemm(1.0, MatRef::new(prev, n, w), MatRef::new(&wts[..w * w], w, w), 1.0, &mut out);
            if arch.skip == Some(l) {
                gemm(1.0, MatRef::new(&enc_x, n, ex), MatRef::new(&wts[w * w..], ex, w), 1.0, &mut out);
            }
        }
        relu_in_place(&mut out);
        hidden.push(out);
    }
    let h = &hidden[arch.depth - 1];

    let density = &params.layers[arch.depth];
    let mut density_raw = vec![0.0; n];
    fill_bias(&mut density_raw, density.bias(theta), n);
    gemm(1.0, MatRef::new(h, n, w), MatRef::new(density.weights(theta), w, 1), 1.0, &mut density_raw);
    let sigma: Vec<f64> = density_raw.iter().map(|&r| softplus(r)).collect();

    let view = &params.layers[arch.depth + 1];
    let vwts = view.weights(theta);
    let mut view_hidden = vec![0.0; n * vw];
    fill_bias(&mut view_hidden, view.bias(theta), n);
    gemm(1.0, MatRef::new(h, n, w), MatRef::new(&vwts[..w * vw], w, vw), 1.0, &mut view_hidden);
    gemm(1.0, MatRef::new(&enc_d, n, ed), MatRef::new(&vwts[w * vw..], ed, vw), 1.0, &mut view_hidden);
    relu_in_place(&mut view_hidden);

    let spectral = &params.layers[arch.depth + 2];
    let mut spectrum = vec![0.0; n * bins];
    fill_bias(&mut spectrum, spectral.bias(theta), n);
    gemm(1.0, MatRef::new(&view_hidden, n, vw), MatRef::new(spectral.weights(theta), vw, bins), 1.0, &mut spectrum);
    for s in &mut spectrum {
        *s = sigmoid(*s);
    }

    Ok(FieldCache {
        arch: *arch,
        n,
        points: points.to_vec(),
        dirs: dirs.to_vec(),
        enc_x,
        enc_d,
        hidden,
        density_raw,
        view_hidden,
        spectrum,
        sigma,
    })
}

/// Input gradients of a batched backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub points: Vec<Vector3<f64>>,
    pub dirs: Vec<Vector3<f64>>,
}

fn column_sums_into(m: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

/// Backpropagates `∂L/∂s` (`points × bins`) and `∂L/∂σ` through a cached pass.
///
/// Parameter gradients are accumulated into `theta_grad`; input gradients
/// are returned when `input_grads` is set.
pub fn backward_batch(
    params: &FieldParams,
    cache: &FieldCache,
    grad_spectrum: &[f64],
    grad_sigma: &[f64],
    theta_grad: &mut [f64],
    input_grads: bool,
) -> Result<Option<InputGrads>> {
    let arch = &params.arch;
    let theta = &params.theta;
    let n = cache.n;
    let (ex, ed, w, vw, bins) = (arch.pos_dim(), arch.dir_dim(), arch.width, arch.view_width(), arch.bins);
    if grad_spectrum.len() != n * bins || grad_sigma.len() != n || theta_grad.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "backward expects {n}x{bins} spectrum and {n} density cotangents, {} parameter slots",
            params.len()
        )));
    }
    if cache.arch != *arch {
        return Err(Error::ShapeMismatch("cache was produced by a different architecture".into()));
    }
    let h = &cache.hidden[arch.depth - 1];

    // Spectral head.
    let mut d_spec_raw: Vec<f64> = grad_spectrum
        .iter()
        .zip(&cache.spectrum)
        .map(|(g, s)| g * s * (1.0 - s))
        .collect();
    let spectral = params.layers[arch.depth + 2];
    {
        let (gw, gb) = layer_grads(theta_grad, &spectral);
        gemm(1.0, MatRef::new(&cache.view_hidden, n, vw).t(), MatRef::new(&d_spec_raw, n, bins), 1.0, gw);
        column_sums_into(&d_spec_raw, n, bins, gb);
    }
    let mut d_view = vec![0.0; n * vw];
    gemm(1.0, MatRef::new(&d_spec_raw, n, bins), MatRef::new(spectral.weights(theta), vw, bins).t(), 0.0, &mut d_view);
    for (d, v) in d_view.iter_mut().zip(&cache.view_hidden) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    d_spec_raw.clear();

    // View layer.
    let view = params.layers[arch.depth + 1];
    let vwts = view.weights(theta);
    {
        let (gw, gb) = layer_grads(theta_grad, &view);
        let (gw_h, gw_d) = gw.split_at_mut(w * vw);
        gemm(1.0, MatRef::new(h, n, w).t(), MatRef::new(&d_view, n, vw), 1.0, gw_h);
        gemm(1.0, MatRef::new(&cache.enc_d, n, ed).t(), MatRef::new(&d_view, n, vw), 1.0, gw_d);
        column_sums_into(&d_view, n, vw, gb);
    }
    let mut d_h = vec![0.0; n * w];
    gemm(1.0, MatRef::new(&d_view, n, vw), MatRef::new(&vwts[..w * vw], w, vw).t(), 0.0, &mut d_h);
    let mut d_enc_d = Vec::new();
    if input_grads {
        d_enc_d = vec![0.0; n * ed];
        gemm(1.0, MatRef::new(&d_view, n, vw), MatRef::new(&vwts[w * vw..], ed, vw).t(), 0.0, &mut d_enc_d);
    }

    // Density head.
    let d_raw: Vec<f64> = grad_sigma
        .iter()
        .zip(&cache.density_raw)
        .map(|(g, r)| g * sigmoid(*r))
        .collect();
    let density = params.layers[arch.depth];
    {
        let (gw, gb) = layer_grads(theta_grad, &density);
        gemm(1.0, MatRef::new(h, n, w).t(), MatRef::new(&d_raw, n, 1), 1.0, gw);
        column_sums_into(&d_raw, n, 1, gb);
    }
    gemm(1.0, MatRef::new(&d_raw, n, 1), MatRef::new(density.weights(theta), w, 1).t(), 1.0, &mut d_h);

    // Hidden stack.
    let mut d_enc_x = if input_grads { vec![0.0; n * ex] } else { Vec::new() };
    for l in (0..arch.depth).rev() {
        let out = &cache.hidden[l];
        for (d, o) in d_h.iter_mut().zip(out) {
            if *o <= 0.0 {
                *d = 0.0;
            }
        }
        let layer = params.layers[l];
        let wts = layer.weights(theta);
        {
            let (gw, gb) = layer_grads(theta_grad, &layer);
            if l == 0 {
                gemm(1.0, MatRef::new(&cache.enc_x, n, ex).t(), MatRef::new(&d_h, n, w), 1.0, gw);
            } else {
                let (gw_h, gw_x) = gw.split_at_mut(w * w);
                gemm(1.0, MatRef::new(&cache.hidden[l - 1], n, w).t(), MatRef::new(&d_h, n, w), 1.0, gw_h);
                if arch.skip == Some(l) {
                    gemm(1.0, MatRef::new(&cache.enc_x, n, ex).t(), MatRef::new(&d_h, n, w), 1.0, gw_x);
                }
            }
            column_sums_into(&d_h, n, w, gb);
        }
        if l == 0 {
            if input_grads {
                gemm(1.0, MatRef::new(&d_h, n, w), MatRef::new(wts, ex, w).t(), 1.0, &mut d_enc_x);
            }
        } else {
            if input_grads && arch.skip == Some(l) {
                gemm(1.0, MatRef::new(&d_h, n, w), MatRef::new(&wts[w * w..], ex, w).t(), 1.0, &mut d_enc_x);
            }
            let mut d_prev = vec![0.0; n * w];
            gemm(1.0, MatRef::new(&d_h, n, w), MatRef::new(&wts[..w * w], w, w).t(), 0.0, &mut d_prev);
            d_h = d_prev;
        }
    }

    if !input_grads {
        return Ok(None);
    }
    let points = (0..n)
        .map(|i| encode_backward(&cache.points[i], arch.pos_freqs, &d_enc_x[i * ex..(i + 1) * ex]))
        .collect();
    let dirs = (0..n)
        .map(|i| encode_backward(&cache.dirs[i], arch.dir_freqs, &d_enc_d[i * ed..(i + 1) * ed]))
        .collect();
    Ok(Some(InputGrads { points, dirs }))
}

fn layer_grads<'a>(theta_grad: &'a mut [f64], layer: &Linear) -> (&'a mut [f64], &'a mut [f64]) {
    let block = &mut theta_grad[layer.weight..layer.bias + layer.output];
    block.split_at_mut(layer.input * layer.output)
}

/// Single-point forward pass.
pub fn field_forward(params: &FieldParams, x: &Vector3<f64>, dir: &Vector3<f64>) -> Result<(FieldOutput, FieldCache)> {
    if (dir.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("direction must be unit length".into()));
    }
    let cache = forward_batch(params, std::slice::from_ref(x), std::slice::from_ref(dir))?;
    Ok((cache.output(0), cache))
}

/// Gradients of a single-point evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads {
    pub theta: Vec<f64>,
    pub x: Vector3<f64>,
    pub dir: Vector3<f64>,
}

pub fn field_backward(params: &FieldParams, cache: &FieldCache, grad_spectrum: &[f64], grad_sigma: f64) -> Result<FieldGrads> {
    if cache.n != 1 {
        return Err(Error::ShapeMismatch("single-point backward needs a single-point cache".into()));
    }
    let mut theta = vec![0.0; params.len()];
    let inputs = backward_batch(params, cache, grad_spectrum, &[grad_sigma], &mut theta, true)?
        .expect("input gradients requested");
    Ok(FieldGrads {
        theta,
        x: inputs.points[0],
        dir: inputs.dirs[0],
    })
}

/// Anything the renderer can query for density and spectra.
pub trait RadianceField: Sync {
    fn bins(&self) -> usize;

    /// Fills `sigma` (one per point) and `spectra` (row-major `points × bins`).
    fn evaluate(
        &self,
        points: &[Vector3<f64>],
        dirs: &[Vector3<f64>],
        sigma: &mut [f64],
        spectra: &mut [f64],
    ) -> Result<()>;
}

impl RadianceField for FieldParams {
    fn bins(&self) -> usize {
        self.arch.bins
    }

    fn evaluate(
        &self,
        points: &[Vector3<f64>],
        dirs: &[Vector3<f64>],
        sigma: &mut [f64],
        spectra: &mut [f64],
    ) -> Result<()> {
        let cache = forward_batch(self, points, dirs)?;
        sigma.copy_from_slice(&cache.sigma);
        spectra.copy_from_slice(&cache.spectrum);
        Ok(())
    }
}
