//! Spiral transformation of a volume into a 2D view.
//!
//! Sample directions live on the upper unit hemisphere. The polar angle is
//! split into `M` planes `theta_j = j * pi / (2M)`, `j = 1..=M`. A plane at
//! polar angle `theta` would ideally hold `2M |sin theta|` points, but those
//! counts do not sum to the continuum total `m = 4M^2 / pi`. We fix
//! `m = round(4M^2 / pi)` and distribute exactly `m` columns over the planes in
//! proportion to `sin theta_j` (largest remainder, ties to the lower plane).
//!
//! The view has `2R` rows, one per signed radius `r_k = -R + k + 0.5`, and `m`
//! columns, one per direction. Pixel `(k, c)` is the trilinear sample of the
//! volume at `O + r_k * dir_c`, where `O` is the volume's voxel-center
//! midpoint.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::volume::Volume3D;

pub const DEFAULT_RADIUS: usize = 46;
pub const DEFAULT_ANGULAR_RESOLUTION: usize = 12;
/// Coordinate-system rotations used to derive extra views of one lesion.
pub const DEFAULT_VIEW_ANGLES: [f64; 5] = [0.0, 50.0, 90.0, 140.0, 180.0];

/// Handling of sample points that fall outside the voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OobPolicy {
    #[default]
    ZeroFill,
    Clamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralConfig {
    /// Maximum radius `R`, voxels.
    pub radius: usize,
    /// Angular resolution `M`.
    pub angular_resolution: usize,
    /// Rotation of the coordinate system in the x-y plane, degrees.
    pub rotation_deg: f64,
    pub oob_policy: OobPolicy,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            angular_resolution: DEFAULT_ANGULAR_RESOLUTION,
            rotation_deg: 0.0,
            oob_policy: OobPolicy::ZeroFill,
        }
    }
}

impl SpiralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::InvalidConfig("radius must be at least 1".into()));
        }
        if self.angular_resolution < 2 {
            return Err(Error::InvalidConfig(
                "angular resolution must be at least 2".into(),
            ));
        }
        if !(0.0..360.0).contains(&self.rotation_deg) {
            return Err(Error::InvalidConfig(format!(
                "rotation {} is outside [0, 360)",
                self.rotation_deg
            )));
        }
        Ok(())
    }

    pub fn with_rotation(&self, rotation_deg: f64) -> Self {
        Self {
            rotation_deg,
            ..self.clone()
        }
    }

    /// Shape `(2R, m)` of the emitted view.
    pub fn view_shape(&self) -> (usize, usize) {
        (2 * self.radius, column_count(self.angular_resolution))
    }
}

/// `round(4 M^2 / pi)`.
pub fn column_count(angular_resolution: usize) -> usize {
    let m = angular_resolution as f64;
    (4.0 * m * m / PI).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralPlane {
    /// Polar angle, radians.
    pub theta: f64,
    pub count: usize,
    /// Azimuths of the plane's samples, radians, rotation included.
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    pub m: usize,
    pub planes: Vec<SpiralPlane>,
    /// Plane-major, azimuth-minor unit vectors `(x, y, z)`.
    pub directions: Vec<[f64; 3]>,
}

/// Integer apportionment of `total` proportional to `weights`, by largest
/// remainder. Ties go to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Stable sort keeps lower indices first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn build_schedule(config: &SpiralConfig) -> Result<SamplingSchedule> {
    config.validate()?;
    let planes_n = config.angular_resolution;
    let m = column_count(planes_n);
    let thetas: Vec<f64> = (1..=planes_n)
        .map(|j| j as f64 * PI / (2.0 * planes_n as f64))
        .collect();
    let weights: Vec<f64> = thetas.iter().map(|t| t.sin()).collect();
    let counts = apportion(m, &weights);
    let offset = config.rotation_deg.to_radians();

    let mut planes = Vec::with_capacity(planes_n);
    let mut directions = Vec::with_capacity(m);
    for (&theta, &count) in thetas.iter().zip(&counts) {
        let psi: Vec<f64> = (0..count)
            .map(|i| 2.0 * PI * i as f64 / count as f64 + offset)
            .collect();
        directions.extend(psi.iter().map(|&p| direction_vector(theta, p)));
        planes.push(SpiralPlane { theta, count, psi });
    }
    Ok(SamplingSchedule {
        m,
        planes,
        directions,
    })
}

/// Unit vector `(sin t cos p, sin t sin p, cos t)` for polar angle `t` and
/// azimuth `p`.
pub fn direction_vector(theta: f64, psi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Rotation about the z axis by `angle_deg` (counter-clockwise seen from +z).
pub fn rotate_xy(v: [f64; 3], angle_deg: f64) -> [f64; 3] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Trilinear interpolation at `point = (z, y, x)` in voxel-index space.
pub fn trilinear_sample(volume: &Volume3D, point: [f64; 3], policy: OobPolicy) -> f64 {
    let (d, h, w) = volume.dims();
    let extents = [d, h, w];
    let mut p = point;
    for axis in 0..3 {
        let hi = (extents[axis] - 1) as f64;
        if p[axis] < 0.0 || p[axis] > hi {
            match policy {
                OobPolicy::ZeroFill => return 0.0,
                OobPolicy::Clamp => p[axis] = p[axis].clamp(0.0, hi),
            }
        }
    }
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for axis in 0..3 {
        let n = extents[axis];
        let i = if n >= 2 {
            (p[axis].floor() as usize).min(n - 2)
        } else {
            0
        };
        base[axis] = i;
        frac[axis] = p[axis] - i as f64;
    }
    let step = |axis: usize| usize::from(extents[axis] >= 2);
    let (z0, y0, x0) = (base[0], base[1], base[2]);
    let (z1, y1, x1) = (z0 + step(0), y0 + step(1), x0 + step(2));
    let (fz, fy, fx) = (frac[0], frac[1], frac[2]);
    let v = |z, y, x| volume.get(z, y, x) as f64;

    let c00 = v(z0, y0, x0) * (1.0 - fx) + v(z0, y0, x1) * fx;
    let c01 = v(z0, y1, x0) * (1.0 - fx) + v(z0, y1, x1) * fx;
    let c10 = v(z1, y0, x0) * (1.0 - fx) + v(z1, y0, x1) * fx;
    let c11 = v(z1, y1, x0) * (1.0 - fx) + v(z1, y1, x1) * fx;
    let c0 = c00 * (1.0 - fy) + c01 * fy;
    let c1 = c10 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Signed radius of view row `k`.
pub fn row_radius(radius: usize, k: usize) -> f64 {
    -(radius as f64) + k as f64 + 0.5
}

/// Exact `(z, y, x)` sample coordinate for a view pixel.
pub fn sample_point(center: [f64; 3], r: f64, dir: [f64; 3]) -> [f64; 3] {
    // dir is (x, y, z); the grid is indexed (z, y, x).
    [center[0] + r * dir[2], center[1] + r * dir[1], center[2] + r * dir[0]]
}

pub fn spiral_transform(volume: &Volume3D, config: &SpiralConfig) -> Result<Image> {
    let schedule = build_schedule(config)?;
    Ok(transform_with_schedule(volume, &schedule, config))
}

/// Transform with a prebuilt schedule, for reuse across many volumes.
pub fn transform_with_schedule(
    volume: &Volume3D,
    schedule: &SamplingSchedule,
    config: &SpiralConfig,
) -> Image {
    let center = volume.center_point();
    let rows = 2 * config.radius;
    Image::from_fn(rows, schedule.m, |k, c| {
        let p = sample_point(center, row_radius(config.radius, k), schedule.directions[c]);
        trilinear_sample(volume, p, config.oob_policy)
    })
}

/// One view per rotation angle.
pub fn multi_view(volume: &Volume3D, config: &SpiralConfig, angles_deg: &[f64]) -> Result<Vec<Image>> {
    angles_deg
        .iter()
        .map(|&a| spiral_transform(volume, &config.with_rotation(a)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn default_schedule() {
        let s = build_schedule(&SpiralConfig::default()).unwrap();
        assert_eq!(s.m, 183);
        assert_eq!(s.directions.len(), 183);
        assert_eq!(s.planes.iter().map(|p| p.count).sum::<usize>(), 183);
        let max = s.planes.iter().map(|p| p.count).max().unwrap();
        assert_eq!(s.planes.last().unwrap().count, max);
        assert!((s.planes.last().unwrap().theta - PI / 2.0).abs() < 1e-15);
        assert!(s.planes.windows(2).all(|w| w[0].theta < w[1].theta));
        for d in &s.directions {
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn smallest_schedule() {
        let cfg = SpiralConfig {
            angular_resolution: 2,
            ..Default::default()
        };
        let s = build_schedule(&cfg).unwrap();
        assert_eq!(s.m, 5);
        assert_eq!(s.planes.iter().map(|p| p.count).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn apportion_ties_prefer_lower_index() {
        assert_eq!(apportion(3, &[1.0, 1.0]), vec![2, 1]);
        assert_eq!(apportion(10, &[1.0, 2.0, 2.0]), vec![2, 4, 4]);
    }

    #[test]
    fn invalid_configs() {
        let bad = |c: SpiralConfig| matches!(build_schedule(&c), Err(Error::InvalidConfig(_)));
        assert!(bad(SpiralConfig { radius: 0, ..Default::default() }));
        assert!(bad(SpiralConfig { angular_resolution: 1, ..Default::default() }));
        assert!(bad(SpiralConfig { rotation_deg: 360.0, ..Default::default() }));
        assert!(bad(SpiralConfig { rotation_deg: -1.0, ..Default::default() }));
    }

    #[test]
    fn directions_and_rotation() {
        assert!(close(direction_vector(0.0, 1.3), [0.0, 0.0, 1.0]));
        assert!(close(direction_vector(PI / 2.0, 0.0), [1.0, 0.0, 0.0]));
        assert!(close(direction_vector(PI / 2.0, PI / 2.0), [0.0, 1.0, 0.0]));
        assert!(close(rotate_xy([1.0, 0.0, 0.0], 90.0), [0.0, 1.0, 0.0]));
        assert!(close(rotate_xy([1.0, 0.0, 0.0], 180.0), [-1.0, 0.0, 0.0]));
        assert!(close(rotate_xy([0.3, -0.2, 0.9], 0.0), [0.3, -0.2, 0.9]));
    }

    #[test]
    fn rotation_offsets_match_rotated_directions() {
        let base = build_schedule(&SpiralConfig::default()).unwrap();
        let turned = build_schedule(&SpiralConfig::default().with_rotation(50.0)).unwrap();
        for (a, b) in base.directions.iter().zip(&turned.directions) {
            let r = rotate_xy(*a, 50.0);
            assert!(r.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn trilinear_nodes_and_cell_center() {
        let v = Volume3D::from_fn(2, 2, 2, |z, y, x| (z * 4 + y * 2 + x) as f32 * 0.1).unwrap();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let s = trilinear_sample(&v, [z as f64, y as f64, x as f64], OobPolicy::ZeroFill);
                    assert!((s - v.get(z, y, x) as f64).abs() < 1e-12);
                }
            }
        }
        let mean = v.voxels().iter().map(|&x| x as f64).sum::<f64>() / 8.0;
        let s = trilinear_sample(&v, [0.5, 0.5, 0.5], OobPolicy::ZeroFill);
        assert!((s - mean).abs() < 1e-7);
    }

    #[test]
    fn out_of_bounds_policies() {
        let v = Volume3D::from_fn(3, 3, 3, |z, _, _| z as f32).unwrap();
        assert_eq!(trilinear_sample(&v, [-0.1, 1.0, 1.0], OobPolicy::ZeroFill), 0.0);
        assert_eq!(trilinear_sample(&v, [5.0, 1.0, 1.0], OobPolicy::Clamp), 2.0);
        assert_eq!(trilinear_sample(&v, [2.0, 2.0, 2.0], OobPolicy::ZeroFill), 2.0);
    }

    #[test]
    fn singleton_volume() {
        let v = Volume3D::new(1, 1, 1, vec![0.7]).unwrap();
        assert!((trilinear_sample(&v, [0.0; 3], OobPolicy::ZeroFill) - 0.7).abs() < 1e-7);
        assert_eq!(trilinear_sample(&v, [0.1, 0.0, 0.0], OobPolicy::ZeroFill), 0.0);
    }

    #[test]
    fn constant_volume_view() {
        let v = Volume3D::new(16, 16, 16, vec![0.4; 4096]).unwrap();
        let cfg = SpiralConfig { radius: 7, ..Default::default() };
        let img = spiral_transform(&v, &cfg).unwrap();
        assert_eq!(img.shape(), (14, 183));
        assert!(img.data().iter().all(|&p| (p - 0.4).abs() < 1e-6));
    }

    #[test]
    fn zero_fill_outside() {
        let v = Volume3D::new(8, 8, 8, vec![1.0; 512]).unwrap();
        let cfg = SpiralConfig { radius: 10, ..Default::default() };
        let img = spiral_transform(&v, &cfg).unwrap();
        let sched = build_schedule(&cfg).unwrap();
        let c = v.center_point();
        for k in 0..20 {
            for (col, d) in sched.directions.iter().enumerate() {
                let p = sample_point(c, row_radius(10, k), *d);
                let outside = p.iter().any(|&q| !(0.0..=7.0).contains(&q));
                if outside {
                    assert_eq!(img.get(k, col), 0.0);
                } else {
                    assert!((img.get(k, col) - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn multi_view_shapes() {
        let v = Volume3D::from_fn(12, 12, 12, |z, y, x| ((z + 2 * y + 3 * x) % 7) as f32 / 7.0).unwrap();
        let cfg = SpiralConfig { radius: 5, ..Default::default() };
        let views = multi_view(&v, &cfg, &[50.0, 90.0, 140.0, 180.0]).unwrap();
        assert_eq!(views.len(), 4);
        assert!(views.iter().all(|im| im.shape() == (10, 183)));
        let single = multi_view(&v, &cfg, &[0.0]).unwrap();
        assert_eq!(single[0], spiral_transform(&v, &cfg).unwrap());
    }
}
