//! Lesion volumes and the VOL3 container.
//!
//! A [`Volume3D`] is a `d x h x w` grid of normalized intensities stored
//! z-slowest: `index(z, y, x) = (z * h + y) * w + x`, with z the slice
//! (depth) axis, y the height axis and x the width axis.
//!
//! VOL3 layout (little-endian):
//!
//! | bytes  | content                  |
//! |--------|--------------------------|
//! | 0..4   | magic `SCLV`             |
//! | 4..6   | version `u16` = 1        |
//! | 6..10  | d `u32`                  |
//! | 10..14 | h `u32`                  |
//! | 14..18 | w `u32`                  |
//! | 18     | dtype `u8` = 0 (f32)     |
//! | 19..24 | zero padding             |
//! | 24..   | `d*h*w` f32 voxels       |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const VOL3_MAGIC: [u8; 4] = *b"SCLV";
pub const VOL3_VERSION: u16 = 1;
pub const VOL3_HEADER_LEN: usize = 24;

/// Default Hounsfield window mapped onto `[0, 1]` at ingestion.
pub const DEFAULT_HU_WINDOW: (f32, f32) = (-1000.0, 400.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    depth: usize,
    height: usize,
    width: usize,
    voxels: Vec<f32>,
}

impl Volume3D {
    /// Builds a volume, checking the dimensions and that every voxel is finite.
    pub fn new(depth: usize, height: usize, width: usize, voxels: Vec<f32>) -> Result<Self> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidHeader(format!(
                "dimensions must be positive, got {depth}x{height}x{width}"
            )));
        }
        let expected = depth
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::InvalidHeader("voxel count overflows".into()))?;
        if voxels.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{depth}x{height}x{width} volume needs {expected} voxels, got {}",
                voxels.len()
            )));
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            depth,
            height,
            width,
            voxels,
        })
    }

    /// Volume whose voxels are `f(z, y, x)`.
    pub fn from_fn(
        depth: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut voxels = Vec::with_capacity(depth * height * width);
        for z in 0..depth {
            for y in 0..height {
                for x in 0..width {
                    voxels.push(f(z, y, x));
                }
            }
        }
        Self::new(depth, height, width, voxels)
    }

    /// Maps raw Hounsfield units linearly from `window` onto `[0, 1]`, clamping
    /// values outside the window.
    pub fn from_hounsfield(
        depth: usize,
        height: usize,
        width: usize,
        hu: &[f32],
        window: (f32, f32),
    ) -> Result<Self> {
        let (lo, hi) = window;
        if !(hi > lo) {
            return Err(Error::InvalidConfig(format!("empty HU window [{lo}, {hi}]")));
        }
        let voxels = hu
            .iter()
            .map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect();
        Self::new(depth, height, width, voxels)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(depth, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.index(z, y, x)]
    }

    /// Voxel-center midpoint `((d-1)/2, (h-1)/2, (w-1)/2)` in `(z, y, x)` order.
    pub fn center_point(&self) -> [f64; 3] {
        [
            (self.depth as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            (self.width as f64 - 1.0) / 2.0,
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VOL3_HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(&VOL3_MAGIC);
        out.extend_from_slice(&VOL3_VERSION.to_le_bytes());
        for dim in [self.depth, self.height, self.width] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.push(0);
        out.extend_from_slice(&[0; 5]);
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: VOL3_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != VOL3_MAGIC {
            return Err(Error::BadMagic {
                expected: VOL3_MAGIC,
                found,
            });
        }
        if bytes.len() < VOL3_HEADER_LEN {
            return Err(Error::Truncated {
                expected: VOL3_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VOL3_VERSION {
            return Err(Error::InvalidHeader(format!("unsupported version {version}")));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (depth, height, width) = (read_u32(6), read_u32(10), read_u32(14));
        if bytes[18] != 0 {
            return Err(Error::InvalidHeader(format!("unsupported dtype {}", bytes[18])));
        }
        let count = depth
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::InvalidHeader("voxel count overflows".into()))?;
        let payload = &bytes[VOL3_HEADER_LEN..];
        if payload.len() < count * 4 {
            return Err(Error::Truncated {
                expected: count * 4,
                found: payload.len(),
            });
        }
        if payload.len() > count * 4 {
            return Err(Error::InvalidHeader(format!(
                "{} trailing bytes after payload",
                payload.len() - count * 4
            )));
        }
        let voxels = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(depth, height, width, voxels)
    }
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    Volume3D::from_bytes(&fs::read(path)?)
}

pub fn save_volume(volume: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    if let Some(i) = volume.voxels.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    fs::write(path, volume.to_bytes())?;
    Ok(())
}

/// A volume plus identifier and optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionSample {
    pub id: String,
    pub volume: Volume3D,
    pub label: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_voxel_file() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SCLV");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        for _ in 0..3 {
            bytes.extend_from_slice(&1u32.to_le_bytes());
        }
        bytes.extend_from_slice(&[0; 6]);
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        let v = Volume3D::from_bytes(&bytes).unwrap();
        assert_eq!(v.dims(), (1, 1, 1));
        assert_eq!(v.voxels(), &[0.5]);
    }

    #[test]
    fn zero_voxel_encoding() {
        let v = Volume3D::new(1, 1, 1, vec![0.0]).unwrap();
        let bytes = v.to_bytes();
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..4], b"SCLV");
        assert_eq!(&bytes[24..], &[0, 0, 0, 0]);
        assert!(bytes[18..24].iter().all(|&b| b == 0));
    }

    #[test]
    fn truncated_payload() {
        let v = Volume3D::new(1, 1, 2, vec![0.25, 0.75]).unwrap();
        let mut bytes = v.to_bytes();
        bytes.truncate(VOL3_HEADER_LEN + 7);
        assert!(matches!(
            Volume3D::from_bytes(&bytes),
            Err(Error::Truncated { expected: 8, found: 7 })
        ));
    }

    #[test]
    fn bad_magic_and_nan() {
        let v = Volume3D::new(1, 1, 1, vec![0.0]).unwrap();
        let mut bytes = v.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Volume3D::from_bytes(&bytes), Err(Error::BadMagic { .. })));

        let mut bytes = v.to_bytes();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(Volume3D::from_bytes(&bytes), Err(Error::NonFinite(0))));
        assert!(matches!(
            Volume3D::new(1, 1, 1, vec![f32::INFINITY]),
            Err(Error::NonFinite(0))
        ));
    }

    #[test]
    fn centers() {
        let c = |d, h, w| Volume3D::new(d, h, w, vec![0.0; d * h * w]).unwrap().center_point();
        assert_eq!(c(32, 32, 32), [15.5, 15.5, 15.5]);
        assert_eq!(c(1, 1, 1), [0.0, 0.0, 0.0]);
        assert_eq!(c(3, 5, 7), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn hounsfield_window() {
        let v = Volume3D::from_hounsfield(1, 1, 4, &[-2000.0, -1000.0, -300.0, 400.0], DEFAULT_HU_WINDOW)
            .unwrap();
        assert_eq!(v.voxels(), &[0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol3");
        let v = Volume3D::from_fn(2, 3, 4, |z, y, x| (z * 12 + y * 4 + x) as f32 / 24.0).unwrap();
        save_volume(&v, &path).unwrap();
        assert_eq!(load_volume(&path).unwrap(), v);
    }
}
