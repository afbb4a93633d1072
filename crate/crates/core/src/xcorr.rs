//! Interrogation-window cross-correlation PIV with multi-pass window
//! deformation and 3-point Gaussian subpixel peak fitting.
//!
//! Correlation is zero-normalized (ZNCC) and computed directly in the
//! spatial domain over integer offsets within `search_radius`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KeyValueConfig;
use crate::error::{check_dims, Error, Result};
use crate::field::{FlowField, GrayImage};
use crate::warp::{backwarp, BilinearCell};

pub const XCORR_CONFIG_KEYS: &[&str] = &[
    "window_size",
    "search_radius",
    "passes",
    "subpixel",
    "grid_step",
];

/// Vectors whose correlation peak is below this are replaced during
/// validation.
pub const MIN_VALID_PEAK: f64 = 0.3;

const PERFECT_MATCH: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subpixel {
    None,
    Gaussian3,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XcorrConfig {
    /// Odd side length of the interrogation window.
    pub window_size: usize,
    pub search_radius: usize,
    pub passes: usize,
    pub subpixel: Subpixel,
    /// Spacing between window centers.
    pub grid_step: usize,
}

impl Default for XcorrConfig {
    fn default() -> Self {
        Self {
            window_size: 29,
            search_radius: 8,
            passes: 3,
            subpixel: Subpixel::Gaussian3,
            grid_step: 8,
        }
    }
}

impl XcorrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size % 2 == 0 || self.window_size < 5 {
            return Err(Error::Config(format!(
                "window_size must be odd and >= 5, got {}",
                self.window_size
            )));
        }
        if self.search_radius == 0 || self.passes == 0 || self.grid_step == 0 {
            return Err(Error::Config(
                "search_radius, passes and grid_step must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn apply_config(mut self, cfg: &KeyValueConfig) -> Result<Self> {
        if let Some(v) = cfg.get("window_size")? {
            self.window_size = v;
        }
        if let Some(v) = cfg.get("search_radius")? {
            self.search_radius = v;
        }
        if let Some(v) = cfg.get("passes")? {
            self.passes = v;
        }
        if let Some(v) = cfg.get::<String>("subpixel")? {
            self.subpixel = match v.as_str() {
                "none" => Subpixel::None,
                "gaussian3" => Subpixel::Gaussian3,
                other => return Err(Error::Config(format!("unknown subpixel mode {other}"))),
            };
        }
        if let Some(v) = cfg.get("grid_step")? {
            self.grid_step = v;
        }
        self.validate()?;
        Ok(self)
    }

    fn half(&self) -> usize {
        self.window_size / 2
    }

    /// Distance a window center must keep from the image border.
    pub fn margin(&self) -> usize {
        self.half() + self.search_radius
    }
}

/// Result of correlating one interrogation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowMatch {
    Found {
        du: f64,
        dv: f64,
        /// ZNCC at the integer peak.
        peak: f64,
        /// The integer peak sits on the edge of the search region, so the
        /// true displacement may lie beyond it.
        at_search_bound: bool,
    },
    /// Window or search region leaves the image.
    Skipped,
    /// The first-frame window has zero variance.
    Undefined,
}

/// ZNCC between two equally sized patches; `None` when either is constant.
pub fn zncc(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (x - ma, y - mb);
        ab += p * q;
        aa += p * p;
        bb += q * q;
    }
    if aa <= 0.0 || bb <= 0.0 {
        return None;
    }
    Some((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// Offset of the Gaussian through three samples around a maximum, or `None`
/// when any sample is non-positive.
pub fn gaussian3_offset(left: f64, center: f64, right: f64) -> Option<f64> {
    if left <= 0.0 || center <= 0.0 || right <= 0.0 {
        return None;
    }
    let (l, c, r) = (left.ln(), center.ln(), right.ln());
    let denom = 2.0 * l - 4.0 * c + 2.0 * r;
    if denom >= 0.0 {
        return None;
    }
    let delta = (l - r) / denom;
    (delta.abs() < 1.0).then_some(delta)
}

/// Correlates the `i1` window centered at `center` against `i2` windows at
/// every integer offset within `search_radius`.
pub fn correlate_window(
    i1: &GrayImage,
    i2: &GrayImage,
    center: (usize, usize),
    config: &XcorrConfig,
) -> WindowMatch {
    let (w, h) = i1.dims();
    let half = config.half();
    let r = config.search_radius;
    let (cx, cy) = center;
    if i2.dims() != (w, h) || cx < half + r || cy < half + r || cx + half + r >= w || cy + half + r >= h
    {
        return WindowMatch::Skipped;
    }
    let side = config.window_size;
    let n = (side * side) as f64;

    let mut template = Vec::with_capacity(side * side);
    for y in cy - half..=cy + half {
        let row = &i1.data()[y * w..(y + 1) * w];
        template.extend_from_slice(&row[cx - half..=cx + half]);
    }
    let (lo, hi) = template
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    if hi - lo <= 1e-12 {
        return WindowMatch::Undefined;
    }
    let mean = template.iter().sum::<f64>() / n;
    template.iter_mut().for_each(|t| *t -= mean);
    let norm = template.iter().map(|t| t * t).sum::<f64>().sqrt();
    template.iter_mut().for_each(|t| *t /= norm);

    let span = 2 * r + 1;
    let mut surface = vec![f64::NEG_INFINITY; span * span];
    let data = i2.data();
    for oy in 0..span {
        for ox in 0..span {
            let x0 = cx + ox - r - half;
            let y0 = cy + oy - r - half;
            let (mut dot, mut sum, mut sq) = (0.0, 0.0, 0.0);
            for wy in 0..side {
                let row = &data[(y0 + wy) * w + x0..(y0 + wy) * w + x0 + side];
                let trow = &template[wy * side..(wy + 1) * side];
                for (t, b) in trow.iter().zip(row) {
                    dot += t * b;
                    sum += b;
                    sq += b * b;
                }
            }
            // sum(t) == 0, so sum(t * (b - mean_b)) == sum(t * b)
            let var = sq - sum * sum / n;
            if var > 1e-14 * sq.max(1e-300) {
                surface[oy * span + ox] = (dot / var.sqrt()).clamp(-1.0, 1.0);
            }
        }
    }

    let (best, &peak) = surface
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, c)| if c > acc.1 { (i, c) } else { acc });
    if !peak.is_finite() {
        return WindowMatch::Undefined;
    }
    // A perfect match is reported as exactly 1 and is already exact at the
    // integer offset, so it skips the subpixel fit.
    let perfect = peak >= PERFECT_MATCH;
    let peak = if perfect { 1.0 } else { peak };
    let (bx, by) = (best % span, best / span);
    let mut du = bx as f64 - r as f64;
    let mut dv = by as f64 - r as f64;
    if config.subpixel == Subpixel::Gaussian3 && !perfect {
        if bx > 0 && bx + 1 < span {
            let row = by * span;
            if let Some(d) = gaussian3_offset(surface[row + bx - 1], peak, surface[row + bx + 1]) {
                du += d;
            }
        }
        if by > 0 && by + 1 < span {
            let at = |y: usize| surface[y * span + bx];
            if let Some(d) = gaussian3_offset(at(by - 1), peak, at(by + 1)) {
                dv += d;
            }
        }
    }
    WindowMatch::Found {
        du,
        dv,
        peak,
        at_search_bound: bx == 0 || by == 0 || bx + 1 == span || by + 1 == span,
    }
}

/// Regular grid of window centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
}

impl SampleGrid {
    fn axis(len: usize, margin: usize, step: usize) -> Vec<usize> {
        if len < 2 * margin + 1 {
            return Vec::new();
        }
        let usable = len - 1 - 2 * margin;
        let count = usable / step + 1;
        let start = margin + (usable - (count - 1) * step) / 2;
        (0..count).map(|k| start + k * step).collect()
    }

    pub fn new(width: usize, height: usize, config: &XcorrConfig) -> Self {
        Self {
            xs: Self::axis(width, config.margin(), config.grid_step),
            ys: Self::axis(height, config.margin(), config.grid_step),
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Displacements at the window centers of a [`SampleGrid`], row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFlow {
    pub positions: Vec<(f64, f64)>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// ZNCC peak of the last pass, in `[-1, 1]`; 0 where undefined.
    pub peak: Vec<f64>,
    /// False where the vector failed validation and was replaced.
    pub valid: Vec<bool>,
}

impl SparseFlow {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// CSV with columns `x,y,u,v,peak,valid`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,u,v,peak,valid\n");
        for i in 0..self.len() {
            let (x, y) = self.positions[i];
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                x, y, self.u[i], self.v[i], self.peak[i], self.valid[i]
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultipassResult {
    pub sparse: SparseFlow,
    pub dense: FlowField,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    u: f64,
    v: f64,
    peak: f64,
    /// Passed validation.
    valid: bool,
    /// Holds a usable displacement (valid, or repaired from neighbors).
    defined: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replaces invalid vectors with the component-wise median of their valid
/// 8-neighbors.
fn validate_samples(samples: &mut [Sample], nx: usize, ny: usize) {
    let snapshot = samples.to_vec();
    for gy in 0..ny {
        for gx in 0..nx {
            let i = gy * nx + gx;
            if snapshot[i].valid {
                continue;
            }
            let mut us = Vec::with_capacity(8);
            let mut vs = Vec::with_capacity(8);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (gx as i64 + dx, gy as i64 + dy);
                    if (dx, dy) == (0, 0) || x < 0 || y < 0 || x >= nx as i64 || y >= ny as i64 {
                        continue;
                    }
                    let s = snapshot[y as usize * nx + x as usize];
                    if s.valid {
                        us.push(s.u);
                        vs.push(s.v);
                    }
                }
            }
            if us.is_empty() {
                samples[i].defined = false;
            } else {
                samples[i].u = median(&mut us);
                samples[i].v = median(&mut vs);
                samples[i].defined = true;
            }
        }
    }
}

/// Fills samples without a usable displacement from the nearest one that
/// has one (grid distance, first in row-major order on ties).
fn fill_nearest(samples: &mut [Sample], nx: usize, ny: usize) -> Result<()> {
    let defined: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].defined).collect();
    if defined.is_empty() {
        return Err(Error::EstimationFailed(
            "no interrogation window produced a valid displacement".into(),
        ));
    }
    let snapshot = samples.to_vec();
    for i in 0..samples.len() {
        if snapshot[i].defined {
            continue;
        }
        let (gx, gy) = ((i % nx) as i64, (i / nx) as i64);
        let nearest = *defined
            .iter()
            .min_by_key(|&&j| {
                let (x, y) = ((j % nx) as i64, (j / nx) as i64);
                (x - gx).pow(2) + (y - gy).pow(2)
            })
            .expect("non-empty");
        samples[i].u = snapshot[nearest].u;
        samples[i].v = snapshot[nearest].v;
    }
    debug_assert!(ny * nx == samples.len());
    Ok(())
}

/// Bilinear interpolation of grid samples onto every pixel; values outside
/// the grid hull are clamped to the nearest grid cell.
fn densify(grid: &SampleGrid, u: &[f64], v: &[f64], width: usize, height: usize) -> FlowField {
    let (nx, ny) = (grid.xs.len(), grid.ys.len());
    let step_x = if nx > 1 { (grid.xs[1] - grid.xs[0]) as f64 } else { 1.0 };
    let step_y = if ny > 1 { (grid.ys[1] - grid.ys[0]) as f64 } else { 1.0 };
    let (x0, y0) = (grid.xs[0] as f64, grid.ys[0] as f64);
    FlowField::from_fn(width, height, |x, y| {
        let gx = (x as f64 - x0) / step_x;
        let gy = (y as f64 - y0) / step_y;
        let (cell, _, _) = BilinearCell::clamped(gx, gy, nx, ny);
        (cell.sample(u, nx), cell.sample(v, nx))
    })
}

fn classify(m: WindowMatch, base: (f64, f64)) -> Sample {
    match m {
        WindowMatch::Found {
            du,
            dv,
            peak,
            at_search_bound,
        } => Sample {
            u: base.0 + du,
            v: base.1 + dv,
            peak,
            valid: peak >= MIN_VALID_PEAK && !at_search_bound,
            defined: true,
        },
        WindowMatch::Skipped | WindowMatch::Undefined => Sample {
            u: base.0,
            v: base.1,
            peak: 0.0,
            valid: false,
            defined: false,
        },
    }
}

/// Multi-pass window-deformation cross-correlation.
///
/// Pass 1 correlates the raw frames. Each later pass warps `i2` by the
/// dense predictor from the previous pass and adds the residual
/// displacement found by correlation. After every pass, invalid vectors
/// (peak below [`MIN_VALID_PEAK`] or at the search bound) are replaced by
/// the median of their valid neighbors.
pub fn estimate_multipass(
    i1: &GrayImage,
    i2: &GrayImage,
    config: &XcorrConfig,
) -> Result<MultipassResult> {
    config.validate()?;
    check_dims(i1.dims(), i2.dims())?;
    let (w, h) = i1.dims();
    let grid = SampleGrid::new(w, h, config);
    if grid.is_empty() {
        return Err(Error::EstimationFailed(format!(
            "{w}x{h} image admits no {0}x{0} window with search radius {1}",
            config.window_size, config.search_radius
        )));
    }
    let (nx, ny) = (grid.xs.len(), grid.ys.len());
    let centers: Vec<(usize, usize)> = grid
        .ys
        .iter()
        .flat_map(|&y| grid.xs.iter().map(move |&x| (x, y)))
        .collect();

    let mut samples: Vec<Sample> = Vec::new();
    let mut predictor: Option<FlowField> = None;
    for pass in 0..config.passes {
        let target = match &predictor {
            None => i2.clone(),
            Some(p) => backwarp(i2, p)?.warped,
        };
        samples = centers
            .par_iter()
            .map(|&(x, y)| {
                let base = predictor.as_ref().map_or((0.0, 0.0), |p| p.get(x, y));
                classify(correlate_window(i1, &target, (x, y), config), base)
            })
            .collect();
        validate_samples(&mut samples, nx, ny);
        fill_nearest(&mut samples, nx, ny)?;
        let u: Vec<f64> = samples.iter().map(|s| s.u).collect();
        let v: Vec<f64> = samples.iter().map(|s| s.v).collect();
        predictor = Some(densify(&grid, &u, &v, w, h));
        log::debug!(
            "xcorr pass {pass}: {} of {} vectors valid",
            samples.iter().filter(|s| s.valid).count(),
            samples.len()
        );
    }

    let sparse = SparseFlow {
        positions: centers.iter().map(|&(x, y)| (x as f64, y as f64)).collect(),
        u: samples.iter().map(|s| s.u).collect(),
        v: samples.iter().map(|s| s.v).collect(),
        peak: samples.iter().map(|s| s.peak).collect(),
        valid: samples.iter().map(|s| s.valid).collect(),
    };
    Ok(MultipassResult {
        sparse,
        dense: predictor.expect("at least one pass"),
    })
}
