//! Single-channel 2D images, bilinear resizing, and the SPIM / PGM writers.
//!
//! SPIM layout (little-endian): magic `SCLI`, `u16` version 1, `u32` rows,
//! `u32` cols, then `rows * cols` f32 pixels row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SPIM_MAGIC: [u8; 4] = *b"SCLI";
pub const SPIM_VERSION: u16 = 1;
pub const SPIM_HEADER_LEN: usize = 14;

/// Row-major grid of `f64` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(format!("empty image {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} image needs {} pixels, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty image");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty image");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Copy of the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Image {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "crop out of range");
        Image::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c))
    }

    /// Bilinear sample at a continuous `(row, col)`, clamped to the image.
    pub fn sample_clamped(&self, r: f64, c: f64) -> f64 {
        let r = r.clamp(0.0, (self.rows - 1) as f64);
        let c = c.clamp(0.0, (self.cols - 1) as f64);
        let r0 = (r.floor() as usize).min(self.rows - 1);
        let c0 = (c.floor() as usize).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let c1 = (c0 + 1).min(self.cols - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        let top = self.get(r0, c0) * (1.0 - fc) + self.get(r0, c1) * fc;
        let bottom = self.get(r1, c0) * (1.0 - fc) + self.get(r1, c1) * fc;
        top * (1.0 - fr) + bottom * fr
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Block average over non-overlapping `factor x factor` tiles. Both
    /// dimensions must be multiples of `factor`.
    pub fn average_pool(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.rows % factor != 0 || self.cols % factor != 0 {
            return Err(Error::DimensionMismatch(format!(
                "cannot pool {}x{} by {factor}",
                self.rows, self.cols
            )));
        }
        let (out_r, out_c) = (self.rows / factor, self.cols / factor);
        let mut out = vec![0.0; out_r * out_c];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let dst = &mut out[(r / factor) * out_c..(r / factor + 1) * out_c];
            for (c, v) in row.iter().enumerate() {
                dst[c / factor] += v;
            }
        }
        let scale = 1.0 / (factor * factor) as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        Image::new(out_r, out_c, out)
    }

    pub fn to_spim_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SPIM_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&SPIM_MAGIC);
        out.extend_from_slice(&SPIM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_spim_bytes(bytes: &[u8]) -> Result<Image> {
        if bytes.len() < SPIM_HEADER_LEN {
            return Err(Error::Truncated {
                expected: SPIM_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != SPIM_MAGIC {
            return Err(Error::BadMagic {
                expected: SPIM_MAGIC,
                found,
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SPIM_VERSION {
            return Err(Error::InvalidHeader(format!("unsupported version {version}")));
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let payload = &bytes[SPIM_HEADER_LEN..];
        let expected = rows * cols * 4;
        if payload.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::InvalidHeader("trailing bytes after payload".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (i, c) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            data.push(v as f64);
        }
        Image::new(rows, cols, data)
    }

    /// Binary PGM (P5) with min-max scaling to 0..=255. Constant images map to 0.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.data.iter().map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
        out
    }
}

/// Bilinear resampling with half-pixel centers and edge-clamped coordinates.
pub fn resize_view(image: &Image, out_rows: usize, out_cols: usize) -> Result<Image> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::InvalidConfig(format!(
            "resize target {out_rows}x{out_cols} is empty"
        )));
    }
    let sr = image.rows as f64 / out_rows as f64;
    let sc = image.cols as f64 / out_cols as f64;
    let col_src: Vec<f64> = (0..out_cols).map(|c| (c as f64 + 0.5) * sc - 0.5).collect();
    let mut data = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let src_r = (r as f64 + 0.5) * sr - 0.5;
        data.extend(col_src.iter().map(|&src_c| image.sample_clamped(src_r, src_c)));
    }
    Image::new(out_rows, out_cols, data)
}

pub fn save_spim(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, image.to_spim_bytes())?;
    Ok(())
}

pub fn load_spim(path: impl AsRef<Path>) -> Result<Image> {
    Image::from_spim_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_constant() {
        let img = Image::filled(5, 7, 0.3);
        let out = resize_view(&img, 11, 3).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn resize_identity() {
        let img = Image::from_fn(4, 6, |r, c| (r * 6 + c) as f64 * 0.1);
        let out = resize_view(&img, 4, 6).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_monotone_rows() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize_view(&img, 2, 4).unwrap();
        for r in 0..2 {
            for c in 1..4 {
                assert!(out.get(r, c) >= out.get(r, c - 1));
            }
        }
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(0, 3), 1.0);
    }

    #[test]
    fn pooling_averages_blocks() {
        let img = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let p = img.average_pool(2).unwrap();
        assert_eq!(p.data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(img.average_pool(3).is_err());
    }

    #[test]
    fn spim_round_trip_and_errors() {
        let img = Image::from_fn(3, 5, |r, c| r as f64 * 0.25 - c as f64 * 0.5);
        let bytes = img.to_spim_bytes();
        assert_eq!(bytes.len(), SPIM_HEADER_LEN + 60);
        assert_eq!(Image::from_spim_bytes(&bytes).unwrap(), img);
        assert!(matches!(
            Image::from_spim_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(Image::from_spim_bytes(&bad), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn pgm_scaling() {
        let img = Image::new(1, 3, vec![-1.0, 0.0, 1.0]).unwrap();
        let bytes = img.to_pgm_bytes();
        assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
        let flat = Image::filled(2, 2, 0.7).to_pgm_bytes();
        assert_eq!(&flat[flat.len() - 4..], &[0; 4]);
    }
}
