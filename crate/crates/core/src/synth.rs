//! Seeded synthetic lesions standing in for CT nodules.
//!
//! Each lesion is a solid ball centered on the volume's voxel-center midpoint.
//! Inside the ball the intensity is `1 - a + a * (1 + sin(2 pi f t + phi)) / 2`
//! for texture amplitude `a`, frequency `f` (cycles per voxel) and a seeded
//! phase `phi`. The texture coordinate `t` is the distance from the center for
//! radial shells, or the projection `u . p` on a seeded unit direction for
//! planar waves. Gaussian noise is added everywhere and the result is clamped
//! to `[0, 1]`.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{LesionSample, Volume3D};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TexturePattern {
    /// Concentric shells around the center.
    #[default]
    Radial,
    /// Parallel planes with a seeded normal.
    Planar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLesionSpec {
    pub class_id: usize,
    /// Edge length of the cubic volume, voxels.
    pub size: usize,
    /// Ball radius, voxels.
    pub core_radius: f64,
    /// Cycles per voxel.
    pub texture_frequency: f64,
    pub texture_amplitude: f64,
    pub noise_sigma: f64,
    pub pattern: TexturePattern,
}

impl SyntheticLesionSpec {
    pub fn new(class_id: usize, texture_frequency: f64) -> Self {
        Self {
            class_id,
            size: 32,
            core_radius: 10.0,
            texture_frequency,
            texture_amplitude: 0.8,
            noise_sigma: 0.02,
            pattern: TexturePattern::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.size == 0 {
            return bad("size must be positive".into());
        }
        if !(self.core_radius > 0.0) || !self.core_radius.is_finite() {
            return bad(format!("core_radius must be positive, got {}", self.core_radius));
        }
        if !(0.0..=1.0).contains(&self.texture_amplitude) {
            return bad(format!(
                "texture_amplitude must lie in [0, 1], got {}",
                self.texture_amplitude
            ));
        }
        if !(self.texture_frequency >= 0.0) || !self.texture_frequency.is_finite() {
            return bad(format!(
                "texture_frequency must be non-negative, got {}",
                self.texture_frequency
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

pub fn generate_synthetic_lesion(spec: &SyntheticLesionSpec, seed: u64) -> Result<LesionSample> {
    spec.validate()?;
    let mut rng = rng::generator(seed);

    let mut dir = [0.0f64; 3];
    loop {
        for d in dir.iter_mut() {
            *d = StandardNormal.sample(&mut rng);
        }
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm > 1e-12 {
            dir.iter_mut().for_each(|d| *d /= norm);
            break;
        }
    }
    let phase = rng.random::<f64>() * 2.0 * PI;
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");

    let n = spec.size;
    let c = (n as f64 - 1.0) / 2.0;
    let r2 = spec.core_radius * spec.core_radius;
    let amp = spec.texture_amplitude;
    let omega = 2.0 * PI * spec.texture_frequency;
    let volume = Volume3D::from_fn(n, n, n, |z, y, x| {
        let p = [z as f64 - c, y as f64 - c, x as f64 - c];
        let inside = p.iter().map(|v| v * v).sum::<f64>() <= r2;
        let mut value = if inside {
            let t = match spec.pattern {
                TexturePattern::Radial => p.iter().map(|v| v * v).sum::<f64>().sqrt(),
                TexturePattern::Planar => dir[0] * p[0] + dir[1] * p[1] + dir[2] * p[2],
            };
            1.0 - amp + amp * 0.5 * (1.0 + (omega * t + phase).sin())
        } else {
            0.0
        };
        if spec.noise_sigma > 0.0 {
            value += noise.sample(&mut rng);
        }
        value.clamp(0.0, 1.0) as f32
    })?;

    Ok(LesionSample {
        id: format!("c{}_s{seed:016x}", spec.class_id),
        volume,
        label: Some(spec.class_id),
    })
}

/// `per_class` lesions for each spec, class-major. Sample `i` (global index)
/// uses seed `seed ^ i`, so any sample can be regenerated independently.
pub fn generate_dataset(
    specs: &[SyntheticLesionSpec],
    per_class: usize,
    seed: u64,
) -> Result<Vec<LesionSample>> {
    if per_class == 0 {
        return Err(Error::InvalidSpec("per_class must be at least 1".into()));
    }
    if specs.is_empty() {
        return Err(Error::InvalidSpec("no lesion specs given".into()));
    }
    let mut out = Vec::with_capacity(specs.len() * per_class);
    for (class_pos, spec) in specs.iter().enumerate() {
        for k in 0..per_class {
            let index = class_pos * per_class + k;
            let mut sample = generate_synthetic_lesion(spec, seed ^ index as u64)?;
            sample.id = format!("lesion_{index:05}");
            out.push(sample);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(class_id: usize, freq: f64) -> SyntheticLesionSpec {
        SyntheticLesionSpec {
            class_id,
            size: 16,
            core_radius: 5.0,
            texture_frequency: freq,
            texture_amplitude: 0.0,
            noise_sigma: 0.0,
            pattern: TexturePattern::Radial,
        }
    }

    #[test]
    fn degenerate_texture_is_binary_ball() {
        let s = generate_synthetic_lesion(&flat(0, 0.3), 11).unwrap();
        let v = &s.volume;
        let c = v.center_point();
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    let d2 = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
                    let expected = if d2 <= 25.0 { 1.0 } else { 0.0 };
                    assert_eq!(v.get(z, y, x), expected);
                }
            }
        }
        assert_eq!(s.label, Some(0));
    }

    #[test]
    fn deterministic() {
        let spec = SyntheticLesionSpec::new(1, 0.4);
        let a = generate_synthetic_lesion(&spec, 99).unwrap();
        let b = generate_synthetic_lesion(&spec, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_lesion(&spec, 100).unwrap();
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn texture_frequency_changes_core() {
        let mut lo = SyntheticLesionSpec::new(0, 0.1);
        let mut hi = SyntheticLesionSpec::new(1, 0.4);
        lo.noise_sigma = 0.0;
        hi.noise_sigma = 0.0;
        let a = generate_synthetic_lesion(&lo, 5).unwrap().volume;
        let b = generate_synthetic_lesion(&hi, 5).unwrap().volume;
        let c = a.center_point();
        let (mut sum, mut n) = (0.0, 0);
        for z in 0..32 {
            for y in 0..32 {
                for x in 0..32 {
                    let d2 = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
                    if d2 <= 100.0 {
                        sum += (a.get(z, y, x) - b.get(z, y, x)).abs() as f64;
                        n += 1;
                    }
                }
            }
        }
        assert!(sum / n as f64 > 0.0);
    }

    #[test]
    fn voxels_in_unit_range_with_heavy_noise() {
        let mut spec = SyntheticLesionSpec::new(0, 0.2);
        spec.noise_sigma = 0.8;
        let s = generate_synthetic_lesion(&spec, 3).unwrap();
        assert!(s.volume.voxels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = flat(0, 0.1);
        spec.core_radius = 0.0;
        assert!(matches!(generate_synthetic_lesion(&spec, 0), Err(Error::InvalidSpec(_))));
        spec.core_radius = 2.0;
        spec.texture_amplitude = 1.5;
        assert!(matches!(generate_synthetic_lesion(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let specs = [flat(0, 0.1), flat(1, 0.4)];
        let ds = generate_dataset(&specs, 3, 42).unwrap();
        let labels: Vec<_> = ds.iter().map(|s| s.label.unwrap()).collect();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
        let mut ids: Vec<_> = ds.iter().map(|s| s.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 6);
        assert_eq!(ds, generate_dataset(&specs, 3, 42).unwrap());
        assert!(matches!(generate_dataset(&specs, 0, 42), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn dataset_sample_matches_standalone_generation() {
        let specs = [SyntheticLesionSpec::new(0, 0.1), SyntheticLesionSpec::new(1, 0.4)];
        let ds = generate_dataset(&specs, 2, 1234).unwrap();
        let alone = generate_synthetic_lesion(&specs[1], 1234 ^ 3).unwrap();
        assert_eq!(ds[3].volume, alone.volume);
    }
}
