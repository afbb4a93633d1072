//! Differentiable backward warping: `warped(x) = target(x + flow(x))` with
//! bilinear sampling and analytic derivatives with respect to the flow.
//!
//! A sample is valid when the 2x2 cell it interpolates from lies inside the
//! image, i.e. `0 <= xs <= w - 1` and `0 <= ys <= h - 1`. Invalid samples
//! read as zero with zero derivative. Cells are chosen from `floor` (the
//! right-limit convention), except that a sample exactly on the last
//! row/column uses the cell to its left/top so the lattice edge stays valid.

use crate::error::{check_dims, Result};
use crate::field::{FlowField, GrayImage};

/// Bilinear interpolation cell: the top-left corner plus fractional offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearCell {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

/// Weights `[w00, w10, w01, w11]` for offsets `(fx, fy)` in `[0, 1]`.
#[inline]
pub fn bilinear_weights(fx: f64, fy: f64) -> [f64; 4] {
    let (gx, gy) = (1.0 - fx, 1.0 - fy);
    [gx * gy, fx * gy, gx * fy, fx * fy]
}

#[inline]
fn axis(c: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = c.floor() as usize;
    if i0 >= n - 1 {
        (n - 2, n - 1, 1.0)
    } else {
        (i0, i0 + 1, c - i0 as f64)
    }
}

impl BilinearCell {
    /// The cell for a sample point, or `None` when it is out of bounds.
    #[inline]
    pub fn inside(xs: f64, ys: f64, width: usize, height: usize) -> Option<Self> {
        let in_range = |c: f64, n: usize| c >= 0.0 && c <= (n - 1) as f64;
        if !(in_range(xs, width) && in_range(ys, height)) {
            return None;
        }
        let (x0, x1, fx) = axis(xs, width);
        let (y0, y1, fy) = axis(ys, height);
        Some(Self { x0, y0, x1, y1, fx, fy })
    }

    /// The cell for a sample point clamped onto the image, along with flags
    /// telling whether each axis was clamped (its derivative is then zero).
    #[inline]
    pub fn clamped(xs: f64, ys: f64, width: usize, height: usize) -> (Self, bool, bool) {
        let cx = xs.clamp(0.0, (width - 1) as f64);
        let cy = ys.clamp(0.0, (height - 1) as f64);
        let (x0, x1, fx) = axis(cx, width);
        let (y0, y1, fy) = axis(cy, height);
        (Self { x0, y0, x1, y1, fx, fy }, cx != xs, cy != ys)
    }

    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        bilinear_weights(self.fx, self.fy)
    }

    /// Flat indices of the four corners, ordered like [`Self::weights`].
    #[inline]
    pub fn indices(&self, width: usize) -> [usize; 4] {
        [
            self.y0 * width + self.x0,
            self.y0 * width + self.x1,
            self.y1 * width + self.x0,
            self.y1 * width + self.x1,
        ]
    }

    #[inline]
    fn corners(&self, data: &[f64], width: usize) -> [f64; 4] {
        self.indices(width).map(|i| data[i])
    }

    #[inline]
    pub fn sample(&self, data: &[f64], width: usize) -> f64 {
        let c = self.corners(data, width);
        let w = self.weights();
        w[0] * c[0] + w[1] * c[1] + w[2] * c[2] + w[3] * c[3]
    }

    /// Interpolated value and its partial derivatives w.r.t. the sample
    /// coordinates.
    #[inline]
    pub fn sample_with_gradient(&self, data: &[f64], width: usize) -> (f64, f64, f64) {
        let c = self.corners(data, width);
        let w = self.weights();
        let value = w[0] * c[0] + w[1] * c[1] + w[2] * c[2] + w[3] * c[3];
        let dx = (1.0 - self.fy) * (c[1] - c[0]) + self.fy * (c[3] - c[2]);
        let dy = (1.0 - self.fx) * (c[2] - c[0]) + self.fx * (c[3] - c[1]);
        (value, dx, dy)
    }
}

/// Output of [`backwarp`]; all grids share the input dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub warped: GrayImage,
    pub d_warp_du: Vec<f64>,
    pub d_warp_dv: Vec<f64>,
    pub valid_mask: Vec<bool>,
}

impl WarpResult {
    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }
}

/// Samples `target` at `x + flow(x)` for every pixel.
pub fn backwarp(target: &GrayImage, flow: &FlowField) -> Result<WarpResult> {
    check_dims(target.dims(), flow.dims())?;
    let (w, h) = target.dims();
    let n = w * h;
    let data = target.data();
    let mut warped = vec![0.0; n];
    let mut d_du = vec![0.0; n];
    let mut d_dv = vec![0.0; n];
    let mut mask = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let xs = x as f64 + flow.u()[i];
            let ys = y as f64 + flow.v()[i];
            if let Some(cell) = BilinearCell::inside(xs, ys, w, h) {
                let (val, dx, dy) = cell.sample_with_gradient(data, w);
                warped[i] = val;
                d_du[i] = dx;
                d_dv[i] = dy;
                mask[i] = true;
            }
        }
    }
    Ok(WarpResult {
        warped: GrayImage::new(w, h, warped)?,
        d_warp_du: d_du,
        d_warp_dv: d_dv,
        valid_mask: mask,
    })
}

/// Per-pixel brightness-constancy residual `i1(x) - i2(x + flow(x))` and its
/// derivatives with respect to the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricResidual {
    pub width: usize,
    pub height: usize,
    pub residual: Vec<f64>,
    pub d_res_du: Vec<f64>,
    pub d_res_dv: Vec<f64>,
    pub valid_mask: Vec<bool>,
}

pub fn photometric_residual(
    i1: &GrayImage,
    i2: &GrayImage,
    flow: &FlowField,
) -> Result<PhotometricResidual> {
    check_dims(i1.dims(), i2.dims())?;
    let warp = backwarp(i2, flow)?;
    let residual = i1
        .data()
        .iter()
        .zip(warp.warped.data())
        .map(|(a, b)| a - b)
        .collect();
    Ok(PhotometricResidual {
        width: i1.width(),
        height: i1.height(),
        residual,
        d_res_du: warp.d_warp_du.iter().map(|d| -d).collect(),
        d_res_dv: warp.d_warp_dv.iter().map(|d| -d).collect(),
        valid_mask: warp.valid_mask,
    })
}
