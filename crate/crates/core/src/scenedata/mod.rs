//! Synthetic scene oracle, raster and dataset formats.

pub mod dataset;
pub mod raster;
pub mod scene;

pub use dataset::{default_focal, default_rig, load_dataset, make_dataset, ring_prior, Preset, SubviewStack, SynthOptions, DEFAULT_BOUNDS};
pub use raster::{export_png, load_image, save_image, Image};
pub use scene::{oracle_render, oracle_spectral_image, Blob, SyntheticScene, ORACLE_STEP};
