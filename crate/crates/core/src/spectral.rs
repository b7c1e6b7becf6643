//! Wavelength discretization and the filter × sensor response weights.
//!
//! A pixel of view `d`, channel `k` integrates the scene spectrum against
//! `f_k^sensor(λ) · f_d^filter(λ)` over the visible band. The integral is
//! realized as a midpoint Riemann sum over uniform bins, so every response
//! weight already carries the bin width in nanometres.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA_MIN: f64 = 430.0;
pub const DEFAULT_LAMBDA_MAX: f64 = 670.0;
pub const DEFAULT_BINS: usize = 24;

/// Uniform bins over `[lambda_min, lambda_max]` nm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavelengthGrid {
    lambda_min: f64,
    lambda_max: f64,
    bins: usize,
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        Self {
            lambda_min: DEFAULT_LAMBDA_MIN,
            lambda_max: DEFAULT_LAMBDA_MAX,
            bins: DEFAULT_BINS,
        }
    }
}

impl WavelengthGrid {
    pub fn new(lambda_min: f64, lambda_max: f64, bins: usize) -> Result<Self> {
        if !(lambda_min.is_finite() && lambda_max.is_finite() && lambda_min < lambda_max) {
            return Err(Error::InvalidArgument(format!(
                "wavelength range [{lambda_min}, {lambda_max}] is empty"
            )));
        }
        if bins == 0 {
            return Err(Error::InvalidArgument("wavelength grid needs at least one bin".into()));
        }
        Ok(Self {
            lambda_min,
            lambda_max,
            bins,
        })
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Bin width Δλ in nm.
    pub fn delta(&self) -> f64 {
        (self.lambda_max - self.lambda_min) / self.bins as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lambda_min + (bin as f64 + 0.5) * self.delta()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|b| self.center(b)).collect()
    }

    fn same_as(&self, other: &WavelengthGrid) -> bool {
        let tol = 1e-9 * self.lambda_max.abs().max(1.0);
        self.bins == other.bins
            && (self.lambda_min - other.lambda_min).abs() <= tol
            && (self.lambda_max - other.lambda_max).abs() <= tol
    }
}

/// Whether a curve is a filter transmission (bounded by one) or a sensor
/// sensitivity (only non-negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Transmission,
    Sensitivity,
}

impl CurveKind {
    fn check(self, value: f64) -> std::result::Result<(), String> {
        if !value.is_finite() || value < 0.0 {
            return Err(format!("value {value} must be finite and non-negative"));
        }
        if self == CurveKind::Transmission && value > 1.0 {
            return Err(format!("transmission {value} exceeds 1"));
        }
        Ok(())
    }
}

/// A named curve tabulated at the bin centres of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    pub name: String,
    grid: WavelengthGrid,
    values: Vec<f64>,
}

impl SpectralCurve {
    pub fn new(name: impl Into<String>, grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.bins() {
            return Err(Error::ShapeMismatch(format!(
                "curve has {} values for {} bins",
                values.len(),
                grid.bins()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "curve values must be non-negative, found {v}"
            )));
        }
        Ok(Self {
            name: name.into(),
            grid,
            values,
        })
    }

    /// Samples `f` at every bin centre.
    pub fn from_fn(name: impl Into<String>, grid: WavelengthGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.centers().into_iter().map(f).collect();
        Self::new(name, grid, values)
    }

    pub fn constant(name: impl Into<String>, grid: WavelengthGrid, value: f64) -> Result<Self> {
        Self::new(name, grid, vec![value; grid.bins()])
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Piecewise-linear interpolation between bin centres, constant beyond
    /// the outermost centres.
    pub fn value_at(&self, lambda: f64) -> f64 {
        let n = self.values.len();
        if n == 1 {
            return self.values[0];
        }
        let x = (lambda - self.grid.center(0)) / self.grid.delta();
        if x <= 0.0 {
            return self.values[0];
        }
        if x >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let i = x.floor() as usize;
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    pub fn resample(&self, grid: WavelengthGrid) -> Self {
        let values = grid.centers().into_iter().map(|l| self.value_at(l)).collect();
        Self {
            name: self.name.clone(),
            grid,
            values,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// A set of curves on one shared grid, e.g. a filter bank or a sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub kind: CurveKind,
    grid: WavelengthGrid,
    curves: Vec<SpectralCurve>,
}

impl CurveSet {
    pub fn new(kind: CurveKind, curves: Vec<SpectralCurve>) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::InvalidArgument("curve set is empty".into()))?;
        let grid = first.grid;
        for c in &curves {
            if !c.grid.same_as(&grid) {
                return Err(Error::GridMismatch(format!(
                    "curve '{}' is not on the grid of '{}'",
                    c.name, first.name
                )));
            }
            for v in &c.values {
                kind.check(*v)
                    .map_err(|m| Error::InvalidArgument(format!("curve '{}': {m}", c.name)))?;
            }
        }
        Ok(Self { kind, grid, curves })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn curves(&self) -> &[SpectralCurve] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.curves.iter().map(|c| c.name.as_str()).collect()
    }

    /// Serializes to the `lambda_nm,<name>...` CSV layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda_nm");
        for c in &self.curves {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push('\n');
        for b in 0..self.grid.bins() {
            let _ = write!(out, "{}", self.grid.center(b));
            for c in &self.curves {
                let _ = write!(out, ",{}", c.values[b]);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, kind: CurveKind, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (header_line, header) = lines.next().ok_or_else(|| perr(1, "empty curve file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"lambda_nm") {
            return Err(perr(header_line, "header must start with 'lambda_nm'".into()));
        }
        let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        if names.is_empty() || names.iter().any(|n| n.is_empty()) {
            return Err(perr(header_line, "header needs at least one named curve".into()));
        }

        let mut lambdas = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (line, row) in lines {
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != names.len() + 1 {
                return Err(perr(
                    line,
                    format!("expected {} columns, found {}", names.len() + 1, fields.len()),
                ));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| perr(line, format!("cannot parse number '{s}'")))
            };
            let lambda = parse(fields[0])?;
            if let Some(&prev) = lambdas.last() {
                if !(lambda > prev) {
                    return Err(perr(line, format!("wavelength {lambda} is not increasing")));
                }
            }
            lambdas.push(lambda);
            for (col, field) in columns.iter_mut().zip(&fields[1..]) {
                let v = parse(field)?;
                kind.check(v).map_err(|m| perr(line, m))?;
                col.push(v);
            }
        }
        if lambdas.is_empty() {
            return Err(perr(header_line, "no data rows".into()));
        }
        let delta = if lambdas.len() > 1 { lambdas[1] - lambdas[0] } else { 1.0 };
        for (i, w) in lambdas.windows(2).enumerate() {
            if ((w[1] - w[0]) - delta).abs() > 1e-6 * delta.abs().max(1.0) {
                return Err(perr(
                    header_line + i + 2,
                    "wavelengths must be uniformly spaced bin centres".into(),
                ));
            }
        }
        let grid = WavelengthGrid::new(
            lambdas[0] - 0.5 * delta,
            lambdas[lambdas.len() - 1] + 0.5 * delta,
            lambdas.len(),
        )?;
        let curves = names
            .into_iter()
            .zip(columns)
            .map(|(name, values)| SpectralCurve::new(name, grid, values))
            .collect::<Result<Vec<_>>>()?;
        CurveSet::new(kind, curves)
    }
}

pub fn load_curves(path: impl AsRef<Path>, kind: CurveKind) -> Result<CurveSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CurveSet::parse_csv(&text, kind, path)
}

pub fn save_curves(path: impl AsRef<Path>, curves: &CurveSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, curves.to_csv()).map_err(|e| Error::io(path, e))
}

/// Per-(view, channel, bin) weights `sensor_k[b] · filter_d[b] · Δλ`, in nm.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    views: usize,
    channels: usize,
    bins: usize,
    weights: Vec<f64>,
}

impl ResponseMatrix {
    pub fn from_weights(views: usize, channels: usize, bins: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != views * channels * bins || views == 0 || channels == 0 || bins == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {views}x{channels}x{bins} response",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("response weights must be non-negative".into()));
        }
        Ok(Self {
            views,
            channels,
            bins,
            weights,
        })
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn weight(&self, view: usize, channel: usize, bin: usize) -> f64 {
        self.weights[(view * self.channels + channel) * self.bins + bin]
    }

    /// The `channels × bins` block of one view, row-major.
    pub fn view_block(&self, view: usize) -> &[f64] {
        let n = self.channels * self.bins;
        &self.weights[view * n..(view + 1) * n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Single-view response holding only `view`'s weights.
    pub fn select_view(&self, view: usize) -> Result<Self> {
        self.check_view(view)?;
        Self::from_weights(1, self.channels, self.bins, self.view_block(view).to_vec())
    }

    pub fn check_view(&self, view: usize) -> Result<()> {
        if view >= self.views {
            return Err(Error::InvalidArgument(format!(
                "view {view} out of range for {} response views",
                self.views
            )));
        }
        Ok(())
    }

    /// `intensity[k] = Σ_b M[view, k, b] · spectrum[b]`.
    pub fn project(&self, view: usize, spectrum: &[f64], out: &mut [f64]) {
        let block = self.view_block(view);
        for (k, o) in out.iter_mut().enumerate().take(self.channels) {
            let row = &block[k * self.bins..(k + 1) * self.bins];
            *o = row.iter().zip(spectrum).map(|(w, s)| w * s).sum();
        }
    }

    /// Adjoint of [`ResponseMatrix::project`]: accumulates `Mᵀ g` into `grad_spectrum`.
    pub fn project_adjoint(&self, view: usize, grad_intensity: &[f64], grad_spectrum: &mut [f64]) {
        let block = self.view_block(view);
        for (k, g) in grad_intensity.iter().enumerate().take(self.channels) {
            let row = &block[k * self.bins..(k + 1) * self.bins];
            for (gs, w) in grad_spectrum.iter_mut().zip(row) {
                *gs += w * g;
            }
        }
    }

    /// Elementwise sum of two responses of identical shape.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if (self.views, self.channels, self.bins) != (other.views, other.channels, other.bins) {
            return Err(Error::ShapeMismatch("responses differ in shape".into()));
        }
        let weights = self.weights.iter().zip(&other.weights).map(|(a, b)| a + b).collect();
        Self::from_weights(self.views, self.channels, self.bins, weights)
    }
}

/// Builds `M[d, k, b] = sensor_k[b] · filter_d[b] · Δλ`.
pub fn build_response(filters: &CurveSet, sensor: &CurveSet) -> Result<ResponseMatrix> {
    if !filters.grid().same_as(sensor.grid()) {
        return Err(Error::GridMismatch(format!(
            "filter grid {:?} differs from sensor grid {:?}",
            filters.grid(),
            sensor.grid()
        )));
    }
    let grid = filters.grid();
    let delta = grid.delta();
    let bins = grid.bins();
    let mut weights = Vec::with_capacity(filters.len() * sensor.len() * bins);
    for f in filters.curves() {
        for s in sensor.curves() {
            weights.extend(f.values.iter().zip(&s.values).map(|(fv, sv)| fv * sv * delta));
        }
    }
    ResponseMatrix::from_weights(filters.len(), sensor.len(), bins, weights)
}

/// Response of the bare sensor (filter ≡ 1), a single pseudo-view.
pub fn unfiltered_response(sensor: &CurveSet) -> Result<ResponseMatrix> {
    let grid = *sensor.grid();
    let open = CurveSet::new(
        CurveKind::Transmission,
        vec![SpectralCurve::constant("open", grid, 1.0)?],
    )?;
    build_response(&open, sensor)
}

pub fn integrate_spectrum(spectrum: &[f64], view: usize, channel: usize, response: &ResponseMatrix) -> Result<f64> {
    if spectrum.len() != response.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum has {} bins, response expects {}",
            spectrum.len(),
            response.bins()
        )));
    }
    response.check_view(view)?;
    if channel >= response.channels() {
        return Err(Error::InvalidArgument(format!("channel {channel} out of range")));
    }
    Ok((0..response.bins())
        .map(|b| response.weight(view, channel, b) * spectrum[b])
        .sum())
}

fn gaussian(lambda: f64, center: f64, std: f64) -> f64 {
    let z = (lambda - center) / std;
    (-0.5 * z * z).exp()
}

fn rising(lambda: f64, edge: f64, width: f64) -> f64 {
    1.0 / (1.0 + (-(lambda - edge) / width).exp())
}

/// Three Gaussian sensitivities centred at 460/540/610 nm, 35 nm std, peak 1.
pub fn default_sensor(grid: WavelengthGrid) -> Result<CurveSet> {
    let curves = [("b", 460.0), ("g", 540.0), ("r", 610.0)]
        .into_iter()
        .rev()
        .map(|(name, c)| SpectralCurve::from_fn(name, grid, |l| gaussian(l, c, 35.0)))
        .collect::<Result<Vec<_>>>()?;
    CurveSet::new(CurveKind::Sensitivity, curves)
}

/// Names of the nine broadband filters, in view order.
pub const FILTER_NAMES: [&str; 9] = [
    "Lavender",
    "Orange",
    "BlueGreen",
    "Red",
    "Green",
    "Blue",
    "Yellow",
    "Magenta",
    "Cyan",
];

/// Synthetic stand-ins for the nine colored gel filters: smooth broadband
/// curves built from at most two Gaussian/sigmoid lobes over a floor.
/// These are not measured transmissions.
pub fn default_filter_bank(grid: WavelengthGrid) -> Result<CurveSet> {
    type Shape = fn(f64) -> f64;
    let shapes: [Shape; 9] = [
        |l| 0.2 + 0.7 * gaussian(l, 445.0, 40.0) + 0.6 * rising(l, 640.0, 12.0),
        |l| 0.05 + 0.9 * rising(l, 585.0, 12.0),
        |l| 0.1 + 0.85 * gaussian(l, 495.0, 40.0),
        |l| 0.03 + 0.95 * rising(l, 615.0, 10.0),
        |l| 0.08 + 0.85 * gaussian(l, 535.0, 35.0),
        |l| 0.08 + 0.85 * gaussian(l, 465.0, 35.0),
        |l| 0.05 + 0.92 * rising(l, 520.0, 12.0),
        |l| 0.9 - 0.75 * gaussian(l, 545.0, 35.0),
        |l| 0.05 + 0.9 * (1.0 - rising(l, 575.0, 15.0)),
    ];
    let curves = FILTER_NAMES
        .iter()
        .zip(shapes)
        .map(|(name, f)| SpectralCurve::from_fn(*name, grid, |l| f(l).clamp(0.0, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    CurveSet::new(CurveKind::Transmission, curves)
}
