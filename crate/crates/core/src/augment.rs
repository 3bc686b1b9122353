//! Stochastic 2D augmentations applied to spiral views.
//!
//! Two families are provided. Natural-image augmentations (crop-and-resize,
//! flips, Gaussian blur) and medical-image augmentations (non-linear intensity
//! remapping, local pixel shuffling, in-painting and out-painting). Every op is
//! a pure function of `(image, parameters, seed)` and returns an image of the
//! input's shape.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::{resize_view, Image};
use crate::rng::{self, Rng};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: PartialOrd + Copy + std::fmt::Display> Range<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.lo > self.hi {
            return Err(Error::InvalidConfig(format!(
                "{name} range [{}, {}] is inverted",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl Range<f64> {
    fn draw(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl Range<usize> {
    fn draw(&self, rng: &mut Rng) -> usize {
        rng.random_range(self.lo..=self.hi)
    }
}

/// Crop a random sub-rectangle and resize it back to the input shape.
///
/// The area fraction is drawn from `scale`; the aspect ratio, relative to the
/// image's own aspect, is drawn log-uniformly from `aspect`. Crop extents are
/// clamped to the image.
pub fn random_crop_resize(
    image: &Image,
    scale: Range<f64>,
    aspect: Range<f64>,
    seed: u64,
) -> Result<Image> {
    scale.check("crop scale")?;
    aspect.check("crop aspect")?;
    if !(scale.lo > 0.0 && scale.hi <= 1.0) || !(aspect.lo > 0.0) {
        return Err(Error::InvalidConfig(
            "crop scale must lie in (0, 1] and aspect must be positive".into(),
        ));
    }
    let mut rng = rng::generator(seed);
    let s = scale.draw(&mut rng);
    let a = Range::new(aspect.lo.ln(), aspect.hi.ln()).draw(&mut rng).exp();
    let (rows, cols) = image.shape();
    let crop_cols = (cols as f64 * (s * a).sqrt()).round().min(cols as f64) as usize;
    let crop_rows = (rows as f64 * (s / a).sqrt()).round().min(rows as f64) as usize;
    if crop_rows < 1 || crop_cols < 1 {
        return Err(Error::DegenerateCrop {
            rows: crop_rows,
            cols: crop_cols,
        });
    }
    let r0 = rng.random_range(0..=rows - crop_rows);
    let c0 = rng.random_range(0..=cols - crop_cols);
    resize_view(&image.crop(r0, c0, crop_rows, crop_cols), rows, cols)
}

pub fn flip_horizontal(image: &Image) -> Image {
    let cols = image.cols();
    Image::from_fn(image.rows(), cols, |r, c| image.get(r, cols - 1 - c))
}

pub fn flip_vertical(image: &Image) -> Image {
    let rows = image.rows();
    Image::from_fn(rows, image.cols(), |r, c| image.get(rows - 1 - r, c))
}

pub fn random_flip(image: &Image, p_horizontal: f64, p_vertical: f64, seed: u64) -> Result<Image> {
    check_probability(p_horizontal)?;
    check_probability(p_vertical)?;
    let mut rng = rng::generator(seed);
    let h = rng.random_bool(p_horizontal);
    let v = rng.random_bool(p_vertical);
    let mut out = image.clone();
    if h {
        out = flip_horizontal(&out);
    }
    if v {
        out = flip_vertical(&out);
    }
    Ok(out)
}

/// Normalized 1D Gaussian taps for offsets `-radius..=radius`, `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable blur with edge clamping at a fixed `sigma`. `sigma == 0` is the identity.
pub fn blur_with_sigma(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (rows, cols) = image.shape();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let horizontal = Image::from_fn(rows, cols, |r, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(t, w)| w * image.get(r, clamp(c as isize + t as isize - radius, cols)))
            .sum()
    });
    Image::from_fn(rows, cols, |r, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(t, w)| w * horizontal.get(clamp(r as isize + t as isize - radius, rows), c))
            .sum()
    })
}

/// Blur with `sigma` drawn uniformly from `sigma_range`.
pub fn gaussian_blur(image: &Image, sigma_range: Range<f64>, seed: u64) -> Result<Image> {
    sigma_range.check("blur sigma")?;
    if sigma_range.lo < 0.0 || sigma_range.hi > 5.0 {
        return Err(Error::InvalidConfig("blur sigma must lie in [0, 5]".into()));
    }
    let sigma = sigma_range.draw(&mut rng::generator(seed));
    Ok(blur_with_sigma(image, sigma))
}

/// Random rectangle of the given extent fully inside the image.
fn place(rng: &mut Rng, rows: usize, cols: usize, h: usize, w: usize) -> (usize, usize) {
    (rng.random_range(0..=rows - h), rng.random_range(0..=cols - w))
}

/// Permutes the pixels inside each of several random patches.
pub fn local_pixel_shuffle(
    image: &Image,
    patch_count: Range<usize>,
    patch_size: Range<usize>,
    seed: u64,
) -> Result<Image> {
    patch_count.check("patch count")?;
    patch_size.check("patch size")?;
    let (rows, cols) = image.shape();
    if patch_size.lo == 0 || patch_size.hi > rows.min(cols) {
        return Err(Error::InvalidConfig(format!(
            "patch sizes [{}, {}] do not fit a {rows}x{cols} image",
            patch_size.lo, patch_size.hi
        )));
    }
    let mut rng = rng::generator(seed);
    let mut out = image.clone();
    let n = patch_count.draw(&mut rng);
    let mut buf = Vec::new();
    for _ in 0..n {
        let h = patch_size.draw(&mut rng);
        let w = patch_size.draw(&mut rng);
        let (r0, c0) = place(&mut rng, rows, cols, h, w);
        buf.clear();
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                buf.push(out.get(r, c));
            }
        }
        buf.shuffle(&mut rng);
        let mut it = buf.iter();
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                out.set(r, c, *it.next().unwrap());
            }
        }
    }
    Ok(out)
}

/// Monotone cubic Bezier intensity curve on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierCurve {
    /// Interior control points, sorted on both coordinates.
    pub controls: [(f64, f64); 2],
    /// Use `1 - f(x)` instead of `f(x)`.
    pub reversed: bool,
}

const CURVE_SAMPLES: usize = 4096;

impl BezierCurve {
    pub fn random(rng: &mut Rng) -> Self {
        let mut xs = [rng.random::<f64>(), rng.random::<f64>()];
        let mut ys = [rng.random::<f64>(), rng.random::<f64>()];
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let reversed = rng.random_bool(0.5);
        Self {
            controls: [(xs[0], ys[0]), (xs[1], ys[1])],
            reversed,
        }
    }

    /// Point on the curve at parameter `t`.
    pub fn point(&self, t: f64) -> (f64, f64) {
        let u = 1.0 - t;
        let (b1, b2, b3) = (3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
        let [(x1, y1), (x2, y2)] = self.controls;
        (b1 * x1 + b2 * x2 + b3, b1 * y1 + b2 * y2 + b3)
    }

    /// Piecewise-linear lookup table `(x, y)` over a dense grid in `t`.
    /// Both columns are non-decreasing because the control points are sorted.
    pub fn table(&self) -> Vec<(f64, f64)> {
        (0..=CURVE_SAMPLES)
            .map(|i| self.point(i as f64 / CURVE_SAMPLES as f64))
            .collect()
    }
}

fn eval_table(table: &[(f64, f64)], x: f64) -> f64 {
    let hi = table.partition_point(|&(tx, _)| tx < x);
    if hi == 0 {
        return table[0].1;
    }
    if hi >= table.len() {
        return table[table.len() - 1].1;
    }
    let (x0, y0) = table[hi - 1];
    let (x1, y1) = table[hi];
    if x1 - x0 <= 0.0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Applies a fixed Bezier curve to every pixel.
pub fn apply_curve(image: &Image, curve: &BezierCurve) -> Result<Image> {
    if let Some((index, &value)) = image
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::OutOfDomain { index, value });
    }
    let table = curve.table();
    let data = image
        .data()
        .iter()
        .map(|&x| {
            let y = eval_table(&table, x).clamp(0.0, 1.0);
            if curve.reversed {
                1.0 - y
            } else {
                y
            }
        })
        .collect();
    Image::new(image.rows(), image.cols(), data)
}

pub fn nonlinear_intensity(image: &Image, seed: u64) -> Result<Image> {
    let curve = BezierCurve::random(&mut rng::generator(seed));
    apply_curve(image, &curve)
}

fn fill_noise(out: &mut Image, rng: &mut Rng, r0: usize, c0: usize, h: usize, w: usize) {
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            out.set(r, c, rng.random::<f64>());
        }
    }
}

fn fraction_extent(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Replaces random rectangles with uniform noise. Rectangle extents are
/// fractions of the image extent drawn from `rect_size`.
pub fn in_paint(
    image: &Image,
    rect_count: Range<usize>,
    rect_size: Range<f64>,
    seed: u64,
) -> Result<Image> {
    rect_count.check("in-paint count")?;
    rect_size.check("in-paint size")?;
    if !(rect_size.lo > 0.0 && rect_size.hi <= 1.0) {
        return Err(Error::InvalidConfig("in-paint size fractions must lie in (0, 1]".into()));
    }
    let (rows, cols) = image.shape();
    let mut rng = rng::generator(seed);
    let mut out = image.clone();
    let n = rect_count.draw(&mut rng);
    for _ in 0..n {
        let h = fraction_extent(rect_size.draw(&mut rng), rows);
        let w = fraction_extent(rect_size.draw(&mut rng), cols);
        let (r0, c0) = place(&mut rng, rows, cols, h, w);
        fill_noise(&mut out, &mut rng, r0, c0, h, w);
    }
    Ok(out)
}

/// Rectangle `(r0, c0, h, w)` that [`out_paint`] keeps for a given seed.
pub fn out_paint_region(
    rows: usize,
    cols: usize,
    retain: Range<f64>,
    rng: &mut Rng,
) -> (usize, usize, usize, usize) {
    let h = fraction_extent(retain.draw(rng), rows);
    let w = fraction_extent(retain.draw(rng), cols);
    // Centered, jittered by up to a quarter of the free margin on each axis.
    let jitter = |rng: &mut Rng, free: usize| {
        let lo = free / 4;
        let hi = free - free / 4;
        rng.random_range(lo..=hi.max(lo))
    };
    let r0 = jitter(rng, rows - h);
    let c0 = jitter(rng, cols - w);
    (r0, c0, h, w)
}

/// Keeps a central rectangle, with extents drawn from `retain` as fractions
/// of the image, and replaces everything else with uniform noise.
pub fn out_paint(image: &Image, retain: Range<f64>, seed: u64) -> Result<Image> {
    retain.check("out-paint retain")?;
    if !(retain.lo > 0.0 && retain.hi <= 1.0) {
        return Err(Error::InvalidConfig("out-paint fractions must lie in (0, 1]".into()));
    }
    let (rows, cols) = image.shape();
    let mut rng = rng::generator(seed);
    let (r0, c0, h, w) = out_paint_region(rows, cols, retain, &mut rng);
    let mut out = image.clone();
    for r in 0..rows {
        for c in 0..cols {
            let kept = (r0..r0 + h).contains(&r) && (c0..c0 + w).contains(&c);
            if !kept {
                out.set(r, c, rng.random::<f64>());
            }
        }
    }
    Ok(out)
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentKind {
    Crop { scale: Range<f64>, aspect: Range<f64> },
    Flip { p_horizontal: f64, p_vertical: f64 },
    GaussianBlur { sigma: Range<f64> },
    LocalShuffle { count: Range<usize>, size: Range<usize> },
    NonLinearIntensity,
    InPaint { count: Range<usize>, size: Range<f64> },
    OutPaint { retain: Range<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOpSpec {
    pub kind: AugmentKind,
    /// Chance that the op fires on a given draw.
    pub probability: f64,
}

impl AugmentOpSpec {
    pub fn new(kind: AugmentKind, probability: f64) -> Self {
        Self { kind, probability }
    }

    pub fn apply(&self, image: &Image, seed: u64) -> Result<Image> {
        match &self.kind {
            AugmentKind::Crop { scale, aspect } => random_crop_resize(image, *scale, *aspect, seed),
            AugmentKind::Flip {
                p_horizontal,
                p_vertical,
            } => random_flip(image, *p_horizontal, *p_vertical, seed),
            AugmentKind::GaussianBlur { sigma } => gaussian_blur(image, *sigma, seed),
            AugmentKind::LocalShuffle { count, size } => local_pixel_shuffle(image, *count, *size, seed),
            AugmentKind::NonLinearIntensity => nonlinear_intensity(image, seed),
            AugmentKind::InPaint { count, size } => in_paint(image, *count, *size, seed),
            AugmentKind::OutPaint { retain } => out_paint(image, *retain, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentFamily {
    Nia,
    Mia,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPipeline {
    pub family: AugmentFamily,
    pub ops: Vec<AugmentOpSpec>,
}

impl AugmentPipeline {
    /// Crop, flip, then blur.
    pub fn nia() -> Self {
        Self {
            family: AugmentFamily::Nia,
            ops: vec![
                AugmentOpSpec::new(
                    AugmentKind::Crop {
                        scale: Range::new(0.6, 1.0),
                        aspect: Range::new(3.0 / 4.0, 4.0 / 3.0),
                    },
                    1.0,
                ),
                AugmentOpSpec::new(
                    AugmentKind::Flip {
                        p_horizontal: 0.5,
                        p_vertical: 0.5,
                    },
                    1.0,
                ),
                AugmentOpSpec::new(
                    AugmentKind::GaussianBlur {
                        sigma: Range::new(0.1, 2.0),
                    },
                    0.5,
                ),
            ],
        }
    }

    /// Non-linear intensity, local shuffle, in-paint, out-paint.
    pub fn mia() -> Self {
        Self {
            family: AugmentFamily::Mia,
            ops: vec![
                AugmentOpSpec::new(AugmentKind::NonLinearIntensity, 0.9),
                AugmentOpSpec::new(
                    AugmentKind::LocalShuffle {
                        count: Range::new(1, 10),
                        size: Range::new(2, 8),
                    },
                    0.5,
                ),
                AugmentOpSpec::new(
                    AugmentKind::InPaint {
                        count: Range::new(1, 5),
                        size: Range::new(0.05, 0.25),
                    },
                    0.5,
                ),
                AugmentOpSpec::new(
                    AugmentKind::OutPaint {
                        retain: Range::new(0.5, 0.9),
                    },
                    0.25,
                ),
            ],
        }
    }

    pub fn mixed() -> Self {
        let mut ops = Self::nia().ops;
        ops.extend(Self::mia().ops);
        Self {
            family: AugmentFamily::Mixed,
            ops,
        }
    }

    pub fn for_family(family: AugmentFamily) -> Self {
        match family {
            AugmentFamily::Nia => Self::nia(),
            AugmentFamily::Mia => Self::mia(),
            AugmentFamily::Mixed => Self::mixed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::InvalidConfig("augmentation pipeline is empty".into()));
        }
        for op in &self.ops {
            check_probability(op.probability)?;
        }
        Ok(())
    }

    /// One draw `t ~ T` applied to `image`: each op fires with its own
    /// probability, in order.
    pub fn apply(&self, image: &Image, seed: u64) -> Result<Image> {
        let mut out = image.clone();
        for (i, op) in self.ops.iter().enumerate() {
            let op_seed = rng::derive(seed, i as u64);
            let mut gate = rng::generator(rng::derive(op_seed, u64::MAX));
            if gate.random_bool(op.probability) {
                out = op.apply(&out, op_seed)?;
            }
        }
        Ok(out)
    }
}

/// Two independent draws `(t1(x), t2(x))`, seeded `2 * seed` and `2 * seed + 1`.
pub fn sample_pair(image: &Image, pipeline: &AugmentPipeline, seed: u64) -> Result<(Image, Image)> {
    pipeline.validate()?;
    let s1 = seed.wrapping_mul(2);
    let s2 = s1.wrapping_add(1);
    Ok((pipeline.apply(image, s1)?, pipeline.apply(image, s2)?))
}
