//! Classical Horn–Schunck optical flow with optional coarse-to-fine warping.
//!
//! Derivatives: `Ix`, `Iy` are central differences of the mean of the first
//! image and the warped second image (borders replicate); `It` is the
//! warped second image minus the first. Each warp re-linearizes around the
//! current flow and runs Jacobi sweeps
//! `u <- u_bar - Ix * t`, `v <- v_bar - Iy * t` with
//! `t = (Ix (u_bar - u0) + Iy (v_bar - v0) + It) / (alpha^2 + Ix^2 + Iy^2)`.

use serde::Serialize;

use crate::config::KeyValueConfig;
use crate::error::{check_dims, Error, Result};
use crate::field::{upsample2x_flow, FlowField, GrayImage, Pyramid, MAX_PYRAMID_LEVELS};
use crate::warp::BilinearCell;

use super::unsupervised::{check_normalized, effective_levels};

pub const HS_CONFIG_KEYS: &[&str] = &[
    "hs_alpha",
    "hs_iterations",
    "hs_multiscale",
    "hs_levels",
    "hs_warps",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsConfig {
    /// Smoothness weight on `[0, 1]` intensities.
    pub alpha: f64,
    /// Jacobi sweeps per warp.
    pub iterations: usize,
    pub use_multiscale: bool,
    /// Pyramid depth when `use_multiscale` is set.
    pub pyramid_levels: usize,
    /// Re-linearizations per level.
    pub warps: usize,
}

impl Default for HsConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            iterations: 200,
            use_multiscale: true,
            pyramid_levels: 4,
            warps: 3,
        }
    }
}

impl HsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("hs alpha must be > 0".into()));
        }
        if self.iterations == 0 || self.warps == 0 {
            return Err(Error::Config("hs iterations and warps must be >= 1".into()));
        }
        if self.pyramid_levels == 0 || self.pyramid_levels > MAX_PYRAMID_LEVELS {
            return Err(Error::Config("hs_levels must be in 1..=6".into()));
        }
        Ok(())
    }

    pub fn apply_config(mut self, cfg: &KeyValueConfig) -> Result<Self> {
        if let Some(v) = cfg.get("hs_alpha")? {
            self.alpha = v;
        }
        if let Some(v) = cfg.get("hs_iterations")? {
            self.iterations = v;
        }
        if let Some(v) = cfg.get("hs_multiscale")? {
            self.use_multiscale = v;
        }
        if let Some(v) = cfg.get("hs_levels")? {
            self.pyramid_levels = v;
        }
        if let Some(v) = cfg.get("hs_warps")? {
            self.warps = v;
        }
        self.validate()?;
        Ok(self)
    }
}

fn warp_clamped(img: &GrayImage, flow: &FlowField) -> Vec<f64> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let (cell, _, _) = BilinearCell::clamped(x as f64 + u, y as f64 + v, w, h);
            out.push(cell.sample(img.data(), w));
        }
    }
    out
}

fn central_differences(f: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            gx[y * w + x] = 0.5 * (f[y * w + xp] - f[y * w + xm]);
            gy[y * w + x] = 0.5 * (f[yp * w + x] - f[ym * w + x]);
        }
    }
    (gx, gy)
}

fn neighbor_average(f: &[f64], out: &mut [f64], w: usize, h: usize) {
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            out[y * w + x] =
                0.25 * (f[y * w + xm] + f[y * w + xp] + f[ym * w + x] + f[yp * w + x]);
        }
    }
}

fn refine_level(
    i1: &GrayImage,
    i2: &GrayImage,
    mut flow: FlowField,
    config: &HsConfig,
) -> FlowField {
    let (w, h) = i1.dims();
    let n = w * h;
    let alpha2 = config.alpha * config.alpha;
    let mut u_bar = vec![0.0; n];
    let mut v_bar = vec![0.0; n];
    for _ in 0..config.warps {
        let warped = warp_clamped(i2, &flow);
        let mean: Vec<f64> = i1
            .data()
            .iter()
            .zip(&warped)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let (ix, iy) = central_differences(&mean, w, h);
        let it: Vec<f64> = warped.iter().zip(i1.data()).map(|(b, a)| b - a).collect();
        let (u0, v0) = (flow.u().to_vec(), flow.v().to_vec());
        let inv_denom: Vec<f64> = (0..n)
            .map(|i| 1.0 / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]))
            .collect();
        for _ in 0..config.iterations {
            neighbor_average(flow.u(), &mut u_bar, w, h);
            neighbor_average(flow.v(), &mut v_bar, w, h);
            for i in 0..n {
                let t = (ix[i] * (u_bar[i] - u0[i]) + iy[i] * (v_bar[i] - v0[i]) + it[i])
                    * inv_denom[i];
                flow.u_mut()[i] = u_bar[i] - ix[i] * t;
                flow.v_mut()[i] = v_bar[i] - iy[i] * t;
            }
        }
    }
    flow
}

/// Horn–Schunck estimate of the forward flow from `i1` to `i2`.
pub fn estimate_horn_schunck(i1: &GrayImage, i2: &GrayImage, config: &HsConfig) -> Result<FlowField> {
    config.validate()?;
    check_dims(i1.dims(), i2.dims())?;
    let (w, h) = i1.dims();
    if w < 3 || h < 3 {
        return Err(Error::TooSmall(format!(
            "Horn-Schunck needs at least 3x3, got {w}x{h}"
        )));
    }
    check_normalized(i1, "first image")?;
    check_normalized(i2, "second image")?;
    let levels = if config.use_multiscale {
        effective_levels(w, h, config.pyramid_levels)
    } else {
        1
    };
    let p1 = Pyramid::build(i1, levels)?;
    let p2 = Pyramid::build(i2, levels)?;
    let (cw, ch) = p1.level(levels - 1).dims();
    let mut flow = FlowField::zeros(cw, ch);
    for level in (0..levels).rev() {
        let (a, b) = (p1.level(level), p2.level(level));
        if flow.dims() != a.dims() {
            flow = upsample2x_flow(&flow, a.width(), a.height())?;
        }
        flow = refine_level(a, b, flow, config);
    }
    Ok(flow)
}
