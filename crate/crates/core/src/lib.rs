//! Broadband spectral radiance fields for snapshot multispectral light-field imaging.
//!
//! The crate couples a spectral coordinate MLP with a differentiable
//! emission-absorption renderer, and optimizes it jointly with per-view
//! camera poses and a shared focal length. Measured pixels are modelled as
//! the scene spectrum integrated against the product of a broadband filter
//! transmission and a trichromatic sensor sensitivity.
//!
//! Module map:
//! - [`geometry`]: axis-angle rotations, pinhole cameras, ray generation and their gradients.
//! - [`spectral`]: wavelength grids, filter/sensor curves, response matrices.
//! - [`field`]: the spectral radiance MLP with cached-activation backprop.
//! - [`renderer`]: stratified quadrature, compositing and spectral projection.
//! - [`losses`]: fidelity and color-statistics losses.
//! - [`optim`]: Adam, staircase schedules and the joint training loop.
//! - [`scenedata`]: synthetic scene oracle, raster/meta formats, datasets.
//! - [`checkpoint`] and [`eval`]: persistence and evaluation metrics.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
mod linalg;
pub mod losses;
pub mod optim;
pub mod renderer;
pub mod scenedata;
pub mod spectral;

pub use error::{Error, Result};
