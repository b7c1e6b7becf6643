//! Analytic emissive scenes and the fine-step reference renderer.
//!
//! A scene is a mixture of isotropic Gaussian density blobs. Density is the
//! sum of the blob densities; the emitted spectrum at a point is the
//! density-weighted average of the blob spectra, so a single blob emits its
//! own spectrum wherever it is present.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::geometry::{generate_ray, CameraParams, SceneBounds};
use crate::renderer::SpectralImage;
use crate::scenedata::raster::Image;
use crate::spectral::{ResponseMatrix, WavelengthGrid};

/// Reference quadrature step of the oracle renderer, in ray-parameter units.
pub const ORACLE_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub density: f64,
    pub spectrum: Vec<f64>,
}

impl Blob {
    fn density_at(&self, x: &Vector3<f64>) -> f64 {
        let r2 = (x - self.center).norm_squared();
        self.density * (-0.5 * r2 / (self.radius * self.radius)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    blobs: Vec<Blob>,
    bins: usize,
    /// Edge length of the cube the scene lives in.
    extent: f64,
}

impl SyntheticScene {
    pub fn new(blobs: Vec<Blob>, bins: usize, extent: f64) -> Result<Self> {
        if bins == 0 || !(extent > 0.0) {
            return Err(Error::InvalidArgument("scene needs bins > 0 and positive extent".into()));
        }
        for (i, b) in blobs.iter().enumerate() {
            if !(b.radius > 0.0) || !(b.density >= 0.0) || !b.center.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidArgument(format!("blob {i} has invalid geometry")));
            }
            if b.spectrum.len() != bins || b.spectrum.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::InvalidArgument(format!(
                    "blob {i} spectrum must have {bins} values in [0, 1]"
                )));
            }
        }
        Ok(Self { blobs, bins, extent })
    }

    pub fn empty(bins: usize) -> Self {
        Self {
            blobs: Vec::new(),
            bins,
            extent: 1.0,
        }
    }

    /// Three blobs with smooth spectra peaking near 460, 550 and 630 nm
    /// inside the unit cube centred at the origin.
    pub fn default_scene(grid: &WavelengthGrid) -> Result<Self> {
        let bump = |peak: f64, width: f64| -> Vec<f64> {
            grid.centers()
                .iter()
                .map(|l| {
                    let z = (l - peak) / width;
                    0.08 + 0.87 * (-0.5 * z * z).exp()
                })
                .collect()
        };
        let blobs = vec![
            Blob {
                center: Vector3::new(-0.2, 0.12, 0.05),
                radius: 0.17,
                density: 14.0,
                spectrum: bump(460.0, 30.0),
            },
            Blob {
                center: Vector3::new(0.2, 0.1, -0.15),
                radius: 0.2,
                density: 10.0,
                spectrum: bump(550.0, 35.0),
            },
            Blob {
                center: Vector3::new(0.02, -0.18, 0.12),
                radius: 0.15,
                density: 16.0,
                spectrum: bump(630.0, 30.0),
            },
        ];
        Self::new(blobs, grid.bins(), 1.0)
    }

    pub fn blobs(&self) -> &[Blob] {
        &self.blobs
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn density(&self, x: &Vector3<f64>) -> f64 {
        self.blobs.iter().map(|b| b.density_at(x)).sum()
    }

    /// Density at `x` and the emitted spectrum written into `spectrum`.
    pub fn sample(&self, x: &Vector3<f64>, spectrum: &mut [f64]) -> f64 {
        spectrum.iter_mut().for_each(|s| *s = 0.0);
        let mut total = 0.0;
        for b in &self.blobs {
            let d = b.density_at(x);
            total += d;
            for (s, v) in spectrum.iter_mut().zip(&b.spectrum) {
                *s += d * v;
            }
        }
        if total > 0.0 {
            spectrum.iter_mut().for_each(|s| *s /= total);
        }
        total
    }
}

impl RadianceField for SyntheticScene {
    fn bins(&self) -> usize {
        self.bins
    }

    fn evaluate(
        &self,
        points: &[Vector3<f64>],
        _dirs: &[Vector3<f64>],
        sigma: &mut [f64],
        spectra: &mut [f64],
    ) -> Result<()> {
        let b = self.bins;
        for (i, p) in points.iter().enumerate() {
            sigma[i] = self.sample(p, &mut spectra[i * b..(i + 1) * b]);
        }
        Ok(())
    }
}

/// Fine-step spectra of one view: the emission-absorption integral
/// `∫ T(t) σ(t) s(t) dt` evaluated with the midpoint rule, where the
/// optical depth is accumulated with the same rule.
pub fn oracle_spectral_image(
    scene: &SyntheticScene,
    cam: &CameraParams,
    view: usize,
    bounds: &SceneBounds,
    step: f64,
) -> Result<SpectralImage> {
    cam.validate()?;
    cam.pose(view)?;
    if !(step > 0.0) || step > 1e-2 * scene.extent() {
        return Err(Error::InvalidArgument(format!(
            "oracle step {step} must be positive and at most 1% of the scene extent"
        )));
    }
    let bins = scene.bins;
    let length = bounds.t_far - bounds.t_near;
    let steps = (length / step).ceil() as usize;
    let h = length / steps as f64;
    let rows = (0..cam.height)
        .into_par_iter()
        .map(|y| -> Result<Vec<f64>> {
            let mut row = vec![0.0; cam.width * bins];
            let mut s = vec![0.0; bins];
            for x in 0..cam.width {
                let ray = generate_ray(cam, view, x as f64 + 0.5, y as f64 + 0.5, bounds)?;
                let out = &mut row[x * bins..(x + 1) * bins];
                let mut optical_depth = 0.0;
                for i in 0..steps {
                    let t = bounds.t_near + (i as f64 + 0.5) * h;
                    let sigma = scene.sample(&ray.at(t), &mut s);
                    if sigma == 0.0 {
                        continue;
                    }
                    let transmittance = (-(optical_depth + 0.5 * sigma * h)).exp();
                    let weight = transmittance * sigma * h;
                    for (o, v) in out.iter_mut().zip(&s) {
                        *o += weight * v;
                    }
                    optical_depth += sigma * h;
                }
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

/// Reference image of `view` projected through view `view` of `response`.
pub fn oracle_render(
    scene: &SyntheticScene,
    cam: &CameraParams,
    view: usize,
    bounds: &SceneBounds,
    response: &ResponseMatrix,
    step: f64,
) -> Result<Image> {
    response.check_view(view)?;
    oracle_spectral_image(scene, cam, view, bounds, step)?.project(response, view)
}
