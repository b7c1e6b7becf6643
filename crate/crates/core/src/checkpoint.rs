//! Binary checkpoints of field parameters and, optionally, cameras.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "BSNFCKPT"                      8-byte magic
//! u32 version                     currently 1
//! u32 depth, u32 width
//! i32 skip                        −1 when there is no skip connection
//! u32 pos_freqs, u32 dir_freqs, u32 bins
//! u64 n                           parameter count
//! f64 × n                         parameters in layer order
//! u32 has_cameras                 0 or 1
//! if has_cameras:
//!   "CAMS"
//!   u32 views, u32 width, u32 height
//!   f64 focal
//!   views × (f64 × 3 axis-angle, f64 × 3 translation)
//! ```

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::field::{FieldArch, FieldParams};
use crate::geometry::{AxisAngle, CameraParams, Pose};

pub const MAGIC: &[u8; 8] = b"BSNFCKPT";
pub const VERSION: u32 = 1;
const CAMERA_TAG: &[u8; 4] = b"CAMS";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FieldParams,
    pub cameras: Option<CameraParams>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.params.arch();
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(arch.depth as u32).to_le_bytes());
        out.extend_from_slice(&(arch.width as u32).to_le_bytes());
        out.extend_from_slice(&arch.skip.map_or(-1, |s| s as i32).to_le_bytes());
        for v in [arch.pos_freqs, arch.dir_freqs, arch.bins] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in self.params.as_slice() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        match &self.cameras {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(cam) => {
                out.extend_from_slice(&1u32.to_le_bytes());
                out.extend_from_slice(CAMERA_TAG);
                for v in [cam.views(), cam.width, cam.height] {
                    out.extend_from_slice(&(v as u32).to_le_bytes());
                }
                out.extend_from_slice(&cam.focal.to_le_bytes());
                for pose in &cam.poses {
                    for v in pose.rotation.vector().iter().chain(pose.translation.iter()) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let depth = r.u32()? as usize;
        let width = r.u32()? as usize;
        let skip = r.i32()?;
        let arch = FieldArch {
            depth,
            width,
            skip: if skip < 0 { None } else { Some(skip as usize) },
            pos_freqs: r.u32()? as usize,
            dir_freqs: r.u32()? as usize,
            bins: r.u32()? as usize,
        };
        arch.validate().map_err(|e| Error::format(path, e.to_string()))?;
        let n = r.u64()? as usize;
        if n != arch.param_count() {
            return Err(Error::format(
                path,
                format!("{n} parameters stored, architecture needs {}", arch.param_count()),
            ));
        }
        let theta = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let params = FieldParams::from_vec(arch, theta).map_err(|e| Error::format(path, e.to_string()))?;
        let cameras = match r.u32()? {
            0 => None,
            1 => {
                if r.take(4)? != CAMERA_TAG {
                    return Err(Error::format(path, "missing camera section tag"));
                }
                let views = r.u32()? as usize;
                let width = r.u32()? as usize;
                let height = r.u32()? as usize;
                let focal = r.f64()?;
                let mut poses = Vec::with_capacity(views);
                for _ in 0..views {
                    let mut v = [0.0; 6];
                    for x in &mut v {
                        *x = r.f64()?;
                    }
                    let rotation = AxisAngle::new(Vector3::new(v[0], v[1], v[2]))
                        .map_err(|e| Error::format(path, e.to_string()))?;
                    poses.push(Pose::new(rotation, Vector3::new(v[3], v[4], v[5])).map_err(|e| Error::format(path, e.to_string()))?);
                }
                Some(CameraParams::new(poses, focal, width, height).map_err(|e| Error::format(path, e.to_string()))?)
            }
            flag => return Err(Error::format(path, format!("bad camera flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { params, cameras })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(self.path, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FieldArch {
        FieldArch {
            depth: 2,
            width: 8,
            skip: None,
            pos_freqs: 2,
            dir_freqs: 1,
            bins: 3,
        }
    }

    #[test]
    fn round_trip_with_cameras() {
        let params = FieldParams::init(small(), 3).unwrap();
        let cam = CameraParams::new(
            vec![Pose::identity(), Pose::new(AxisAngle::new(Vector3::new(0.1, -0.2, 0.3)).unwrap(), Vector3::new(1.0, 2.0, 3.0)).unwrap()],
            77.5,
            16,
            12,
        )
        .unwrap();
        let ck = Checkpoint { params, cameras: Some(cam) };
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_inputs() {
        let ck = Checkpoint { params: FieldParams::init(small(), 1).unwrap(), cameras: None };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = Checkpoint::from_bytes(&bad, Path::new("model.ckpt")).unwrap_err().to_string();
        assert!(err.contains("model.ckpt"));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, Path::new("x")).is_err());
    }
}
