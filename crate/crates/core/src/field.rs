//! Grid types (grayscale images, two-channel flow fields), resampling between
//! resolutions, and multi-resolution pyramids.
//!
//! All grids are row-major `f64`. Downsampling is 2x2 average pooling with the
//! trailing row/column dropped on odd sizes; flow displacements are rescaled
//! on every level change so they stay in units of the current grid's pixels.

use crate::error::{check_dims, Error, Result};

/// Maximum pyramid depth used by the multi-scale objective.
pub const MAX_PYRAMID_LEVELS: usize = 6;

/// Single-channel scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite intensity at index {bad}"
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        assert!(data.iter().all(|v| v.is_finite()), "non-finite intensity");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Maps intensities from the byte range `[0, 255]` to `[0, 1]`.
    pub fn normalize(&self) -> Result<Self> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite intensity at index {i}"
                )));
            }
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "intensity {v} at index {i} outside [0, 255]"
                )));
            }
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v / 255.0).collect(),
        })
    }

    /// Horizontal mirror: `x -> width - 1 - x`.
    pub fn mirrored_x(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }
}

/// Dense two-channel displacement field in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "flow dimensions must be positive, got {width}x{height}"
            )));
        }
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::InvalidInput(format!(
                "flow buffers have {} / {} values, expected {n}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite flow value".into()));
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        assert!(width > 0 && height > 0 && u.is_finite() && v.is_finite());
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Self {
        assert!(width > 0 && height > 0);
        let n = width * height;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        assert!(
            u.iter().chain(v.iter()).all(|x| x.is_finite()),
            "non-finite flow value"
        );
        Self { width, height, u, v }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub(crate) fn u_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    pub(crate) fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.u, self.v)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Per-pixel displacement magnitudes.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitudes().iter().sum::<f64>() / self.len() as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|a| a * factor).collect(),
            v: self.v.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn add(&self, other: &FlowField) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            v: self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect(),
        })
    }

    /// Horizontal mirror with the horizontal component negated.
    pub fn mirrored_x(&self) -> Self {
        let w = self.width;
        Self::from_fn(w, self.height, |x, y| {
            let (a, b) = self.get(w - 1 - x, y);
            (-a, b)
        })
    }
}

/// A grid that can be pooled down to half resolution.
pub trait Grid: Sized {
    fn dims(&self) -> (usize, usize);

    /// 2x2 average pooling. Flow fields are additionally scaled by 0.5.
    fn downsample2x(&self) -> Result<Self>;
}

fn pool2x2(src: &[f64], width: usize, height: usize) -> Result<(Vec<f64>, usize, usize)> {
    if width < 2 || height < 2 {
        return Err(Error::TooSmall(format!(
            "cannot downsample a {width}x{height} grid"
        )));
    }
    let (w2, h2) = (width / 2, height / 2);
    let mut out = Vec::with_capacity(w2 * h2);
    for y in 0..h2 {
        let r0 = 2 * y * width;
        let r1 = r0 + width;
        for x in 0..w2 {
            let c = 2 * x;
            out.push((src[r0 + c] + src[r0 + c + 1] + src[r1 + c] + src[r1 + c + 1]) * 0.25);
        }
    }
    Ok((out, w2, h2))
}

impl Grid for GrayImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn downsample2x(&self) -> Result<Self> {
        let (data, width, height) = pool2x2(&self.data, self.width, self.height)?;
        Ok(Self { width, height, data })
    }
}

impl Grid for FlowField {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn downsample2x(&self) -> Result<Self> {
        let (mut u, width, height) = pool2x2(&self.u, self.width, self.height)?;
        let (mut v, _, _) = pool2x2(&self.v, self.width, self.height)?;
        u.iter_mut().chain(v.iter_mut()).for_each(|a| *a *= 0.5);
        Ok(Self { width, height, u, v })
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // Exact when a == b, which keeps constant fields bit-stable.
    a + t * (b - a)
}

fn bilinear_resample(src: &[f64], sw: usize, sh: usize, tw: usize, th: usize) -> Vec<f64> {
    // Coarse pixel i covers fine pixels 2i and 2i+1, so its center sits at 2i + 0.5.
    let coord = |t: usize, n: usize| -> (usize, usize, f64) {
        let c = (t as f64 - 0.5) * 0.5;
        let c = c.clamp(0.0, (n - 1) as f64);
        let i0 = (c.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let xs: Vec<_> = (0..tw).map(|x| coord(x, sw)).collect();
    let mut out = Vec::with_capacity(tw * th);
    for y in 0..th {
        let (y0, y1, fy) = coord(y, sh);
        for &(x0, x1, fx) in &xs {
            let top = lerp(src[y0 * sw + x0], src[y0 * sw + x1], fx);
            let bot = lerp(src[y1 * sw + x0], src[y1 * sw + x1], fx);
            out.push(lerp(top, bot, fy));
        }
    }
    out
}

/// Bilinearly upsamples a flow field to `target_width x target_height` and
/// doubles the displacements so they are expressed in fine-grid pixels.
///
/// Each target dimension must be twice the source dimension, or one more.
pub fn upsample2x_flow(
    flow: &FlowField,
    target_width: usize,
    target_height: usize,
) -> Result<FlowField> {
    let (sw, sh) = flow.dims();
    let ok = |t: usize, s: usize| t == 2 * s || t == 2 * s + 1;
    if !ok(target_width, sw) || !ok(target_height, sh) {
        return Err(Error::DimensionMismatch {
            expected: (2 * sw, 2 * sh),
            actual: (target_width, target_height),
        });
    }
    let mut u = bilinear_resample(&flow.u, sw, sh, target_width, target_height);
    let mut v = bilinear_resample(&flow.v, sw, sh, target_width, target_height);
    u.iter_mut().chain(v.iter_mut()).for_each(|a| *a *= 2.0);
    Ok(FlowField {
        width: target_width,
        height: target_height,
        u,
        v,
    })
}

/// Multi-resolution stack; level 0 is full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T> {
    levels: Vec<T>,
}

impl<T: Grid + Clone> Pyramid<T> {
    pub fn build(grid: &T, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidInput("pyramid needs at least one level".into()));
        }
        let (w, h) = grid.dims();
        let need = 1usize << (levels - 1);
        if w < need || h < need {
            return Err(Error::TooSmall(format!(
                "{w}x{h} grid cannot hold {levels} pyramid levels (needs at least {need}x{need})"
            )));
        }
        let mut out = Vec::with_capacity(levels);
        out.push(grid.clone());
        for _ in 1..levels {
            let next = out.last().expect("non-empty").downsample2x()?;
            out.push(next);
        }
        Ok(Self { levels: out })
    }
}

impl<T> Pyramid<T> {
    /// Wraps an existing stack; dimensions must follow floor-halving.
    pub fn from_levels(levels: Vec<T>) -> Result<Self>
    where
        T: Grid,
    {
        if levels.is_empty() {
            return Err(Error::InvalidInput("pyramid needs at least one level".into()));
        }
        for pair in levels.windows(2) {
            let (w, h) = pair[0].dims();
            check_dims((w / 2, h / 2), pair[1].dims())?;
        }
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, i: usize) -> &T {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<T> {
        self.levels
    }
}

/// Convenience wrapper around [`Pyramid::build`].
pub fn build_pyramid<T: Grid + Clone>(grid: &T, levels: usize) -> Result<Pyramid<T>> {
    Pyramid::build(grid, levels)
}
