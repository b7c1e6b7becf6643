//! Float raster images and their on-disk format.
//!
//! `.imgf32` layout (all little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 7    | magic `IMGF32\0`                          |
//! | 7      | 4    | `u32` height                              |
//! | 11     | 4    | `u32` width                               |
//! | 15     | 4    | `u32` channels                            |
//! | 19     | 4·n  | `f32` samples, row-major, channel-interleaved |

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"IMGF32\0";
const HEADER_LEN: usize = 7 + 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// All samples widened to `f64`, row-major `pixels × channels`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for dim in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..7] != MAGIC {
            return Err(Error::format(path, "not an IMGF32 raster (bad magic)"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::format(path, "raster dimensions overflow"))?;
        if bytes.len() != HEADER_LEN + 4 * n {
            return Err(Error::format(
                path,
                format!(
                    "payload of {} bytes does not match {height}x{width}x{channels}",
                    bytes.len() - HEADER_LEN
                ),
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::from_bytes(&bytes, path)
}

/// Writes an 8-bit PNG for viewing: values are divided by `peak`, clamped
/// and gamma-encoded with exponent 1/2.2. One-channel images become
/// grayscale, three-channel images RGB; other channel counts are rejected.
pub fn export_png(path: impl AsRef<Path>, image: &Image, peak: f32) -> Result<()> {
    let path = path.as_ref();
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let bytes: Vec<u8> = image
        .data
        .iter()
        .map(|&v| ((v * scale).clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8)
        .collect();
    let (w, h) = (image.width as u32, image.height as u32);
    let result = match image.channels {
        1 => image::GrayImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        3 => image::RgbImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        c => return Err(Error::format(path, format!("cannot export {c}-channel image as PNG"))),
    };
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(e)) => Err(Error::format(path, e.to_string())),
        None => Err(Error::format(path, "image buffer size mismatch")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let data: Vec<f32> = (0..2 * 3 * 4).map(|i| (i as f32).sin() * 1e3 + f32::EPSILON).collect();
        let img = Image::new(3, 2, 4, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.imgf32");
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.width(), 3);
        assert_eq!(back.height(), 2);
        let a: Vec<u32> = img.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_magic_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.imgf32");
        let mut bytes = Image::zeros(2, 2, 1).to_bytes();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("bad.imgf32"), "{err}");
        assert!(err.contains("magic"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut bytes = Image::zeros(2, 2, 3).to_bytes();
        bytes.pop();
        assert!(Image::from_bytes(&bytes, Path::new("t")).is_err());
    }

    #[test]
    fn header_layout() {
        let bytes = Image::zeros(5, 7, 3).to_bytes();
        assert_eq!(&bytes[..7], b"IMGF32\0");
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[11..15].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[15..19].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 19 + 4 * 105);
    }

    #[test]
    fn png_export() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 1, 3, vec![0.0, 0.5, 1.0, 2.0, 0.25, 0.0]).unwrap();
        export_png(dir.path().join("x.png"), &img, 1.0).unwrap();
        let bad = Image::zeros(2, 2, 2);
        assert!(export_png(dir.path().join("y.png"), &bad, 1.0).is_err());
    }
}
