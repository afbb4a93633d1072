//! Synthetic particle image pairs with analytically known displacement.
//!
//! Particles are scattered uniformly (ChaCha8 seeded from `seed`) over the
//! image extended by a margin, so regions the flow carries into view are
//! seeded too. Each particle is an isotropic Gaussian blob clipped at 3σ.
//! The second frame moves every particle by the flow evaluated at its
//! center.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FlowField, GrayImage};
use crate::io::{write_atomic, write_flo, write_gray_png};

/// Upper end of the uniform-displacement regime covered by the benchmark
/// data (`|dx|` in `[0, 5]` pixels).
pub const TYPICAL_MAX_DISPLACEMENT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub particle_count: usize,
    /// Gaussian σ of each particle, pixels.
    pub particle_sigma: f64,
    pub peak_intensity: f64,
    pub background: f64,
    pub seed: u64,
    /// Images are square, `image_size` pixels per side.
    pub image_size: usize,
}

impl ParticleConfig {
    /// Defaults: σ = 1 px, 0.05 particles per pixel, black background.
    pub fn new(image_size: usize, seed: u64) -> Self {
        Self {
            particle_count: ((image_size * image_size) as f64 * 0.05).round().max(1.0) as usize,
            particle_sigma: 1.0,
            peak_intensity: 1.0,
            background: 0.0,
            seed,
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.particle_sigma > 0.0 && self.particle_sigma.is_finite()) {
            return Err(Error::Config("particle_sigma must be > 0".into()));
        }
        if !(0.0 <= self.background
            && self.background < self.peak_intensity
            && self.peak_intensity <= 1.0)
        {
            return Err(Error::Config(
                "need 0 <= background < peak_intensity <= 1".into(),
            ));
        }
        if self.particle_count == 0 {
            return Err(Error::Config("particle_count must be >= 1".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Analytic displacement fields, in pixels per frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticFlow {
    Uniform {
        dx: f64,
        dy: f64,
    },
    /// `u = rate * (y - center_y)`, `v = 0`.
    Shear {
        rate: f64,
        center_y: f64,
    },
    /// Rigid rotation by angular displacement `omega` (radians per frame).
    SolidRotation {
        omega: f64,
        center: (f64, f64),
    },
    /// Azimuthal speed `circulation / (2 pi r) * (1 - exp(-r^2 / core_radius^2))`.
    LambOseenVortex {
        circulation: f64,
        core_radius: f64,
        center: (f64, f64),
    },
    /// `u = A sin(2 pi y / L)`, `v = A sin(2 pi x / L)`.
    Sinusoid {
        amplitude: f64,
        wavelength: f64,
    },
}

impl AnalyticFlow {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AnalyticFlow::Uniform { .. } => "uniform",
            AnalyticFlow::Shear { .. } => "shear",
            AnalyticFlow::SolidRotation { .. } => "rotation",
            AnalyticFlow::LambOseenVortex { .. } => "vortex",
            AnalyticFlow::Sinusoid { .. } => "sinusoid",
        }
    }

    /// Displacement at `(x, y)`.
    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            AnalyticFlow::Uniform { dx, dy } => (dx, dy),
            AnalyticFlow::Shear { rate, center_y } => (rate * (y - center_y), 0.0),
            AnalyticFlow::SolidRotation { omega, center } => {
                (-omega * (y - center.1), omega * (x - center.0))
            }
            AnalyticFlow::LambOseenVortex {
                circulation,
                core_radius,
                center,
            } => {
                let (rx, ry) = (x - center.0, y - center.1);
                let r2 = rx * rx + ry * ry;
                if r2 == 0.0 {
                    return (0.0, 0.0);
                }
                // u_theta / r, written to stay finite as r -> 0
                let omega = circulation * (1.0 - (-r2 / (core_radius * core_radius)).exp())
                    / (2.0 * PI * r2);
                (-omega * ry, omega * rx)
            }
            AnalyticFlow::Sinusoid {
                amplitude,
                wavelength,
            } => (
                amplitude * (2.0 * PI * y / wavelength).sin(),
                amplitude * (2.0 * PI * x / wavelength).sin(),
            ),
        }
    }

    /// The flow evaluated on a `size x size` pixel grid.
    pub fn field(&self, size: usize) -> FlowField {
        FlowField::from_fn(size, size, |x, y| self.displacement(x as f64, y as f64))
    }

    /// Parses `kind:p1,p2`; centers default to the middle of a
    /// `size x size` image.
    ///
    /// Grammar: `uniform:dx,dy | rotation:omega | vortex:circulation,core_radius
    /// | shear:rate | sinusoid:amplitude,wavelength`.
    pub fn parse_spec(spec: &str, size: usize) -> Result<Self> {
        let err = || Error::Config(format!("bad flow spec {spec:?}; expected {FLOW_GRAMMAR}"));
        let (kind, params) = spec.split_once(':').ok_or_else(err)?;
        let values: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err());
        }
        let mid = (size as f64 - 1.0) / 2.0;
        let flow = match (kind.trim(), values.as_slice()) {
            ("uniform", &[dx, dy]) => AnalyticFlow::Uniform { dx, dy },
            ("rotation", &[omega]) => AnalyticFlow::SolidRotation {
                omega,
                center: (mid, mid),
            },
            ("vortex", &[circulation, core_radius]) if core_radius > 0.0 => {
                AnalyticFlow::LambOseenVortex {
                    circulation,
                    core_radius,
                    center: (mid, mid),
                }
            }
            ("shear", &[rate]) => AnalyticFlow::Shear {
                rate,
                center_y: mid,
            },
            ("sinusoid", &[amplitude, wavelength]) if wavelength != 0.0 => {
                AnalyticFlow::Sinusoid {
                    amplitude,
                    wavelength,
                }
            }
            _ => return Err(err()),
        };
        Ok(flow)
    }
}

pub const FLOW_GRAMMAR: &str = "uniform:DX,DY | rotation:OMEGA | vortex:CIRCULATION,CORE_RADIUS | shear:RATE | sinusoid:AMPLITUDE,WAVELENGTH";

impl fmt::Display for AnalyticFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticFlow::Uniform { dx, dy } => write!(f, "uniform:{dx},{dy}"),
            AnalyticFlow::Shear { rate, .. } => write!(f, "shear:{rate}"),
            AnalyticFlow::SolidRotation { omega, .. } => write!(f, "rotation:{omega}"),
            AnalyticFlow::LambOseenVortex {
                circulation,
                core_radius,
                ..
            } => write!(f, "vortex:{circulation},{core_radius}"),
            AnalyticFlow::Sinusoid {
                amplitude,
                wavelength,
            } => write!(f, "sinusoid:{amplitude},{wavelength}"),
        }
    }
}

/// Uniform flows parse without needing an image size.
impl FromStr for AnalyticFlow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_spec(s, 256)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStats {
    pub max_magnitude: f64,
    pub mean_magnitude: f64,
}

/// Maximum and mean displacement magnitude over a `size x size` grid.
pub fn flow_stats(flow: &AnalyticFlow, image_size: usize) -> FlowStats {
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for y in 0..image_size {
        for x in 0..image_size {
            let (u, v) = flow.displacement(x as f64, y as f64);
            let m = u.hypot(v);
            max = max.max(m);
            sum += m;
        }
    }
    FlowStats {
        max_magnitude: max,
        mean_magnitude: sum / (image_size * image_size) as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub truth: FlowField,
}

fn splat(acc: &mut [f64], size: usize, cx: f64, cy: f64, sigma: f64) {
    let reach = 3.0 * sigma;
    let lo = |c: f64| (c - reach).ceil().max(0.0) as usize;
    let hi = |c: f64| ((c + reach).floor().min(size as f64 - 1.0)).max(-1.0);
    let (x_hi, y_hi) = (hi(cx), hi(cy));
    if x_hi < 0.0 || y_hi < 0.0 {
        return;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in lo(cy)..=y_hi as usize {
        let dy = y as f64 - cy;
        for x in lo(cx)..=x_hi as usize {
            let dx = x as f64 - cx;
            let d2 = dx * dx + dy * dy;
            if d2 <= reach * reach {
                acc[y * size + x] += (-d2 * inv).exp();
            }
        }
    }
}

fn finish(acc: Vec<f64>, size: usize, config: &ParticleConfig) -> GrayImage {
    let gain = config.peak_intensity - config.background;
    let data = acc
        .into_iter()
        .map(|a| (config.background + gain * a).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(size, size, data).expect("finite rendered intensities")
}

/// Particle positions in both frames, before rendering.
pub fn particle_positions(flow: &AnalyticFlow, config: &ParticleConfig) -> Vec<[(f64, f64); 2]> {
    let size = config.image_size;
    let stats = flow_stats(flow, size);
    let margin = stats.max_magnitude.ceil() + (3.0 * config.particle_sigma).ceil() + 1.0;
    let span = size as f64 - 1.0 + 2.0 * margin;
    let area_ratio = (span * span) / (size * size) as f64;
    let count = (config.particle_count as f64 * area_ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..count)
        .map(|_| {
            let x = rng.gen::<f64>() * span - margin;
            let y = rng.gen::<f64>() * span - margin;
            let (u, v) = flow.displacement(x, y);
            [(x, y), (x + u, y + v)]
        })
        .collect()
}

/// Renders a particle image pair and the ground-truth flow on the pixel grid.
pub fn render_pair(flow: &AnalyticFlow, config: &ParticleConfig) -> Result<SyntheticPair> {
    config.validate()?;
    let size = config.image_size;
    let sigma = config.particle_sigma;
    let mut acc_a = vec![0.0; size * size];
    let mut acc_b = vec![0.0; size * size];
    for [(xa, ya), (xb, yb)] in particle_positions(flow, config) {
        splat(&mut acc_a, size, xa, ya, sigma);
        splat(&mut acc_b, size, xb, yb, sigma);
    }
    Ok(SyntheticPair {
        image_a: finish(acc_a, size, config),
        image_b: finish(acc_b, size, config),
        truth: flow.field(size),
    })
}

pub const PAIR_A_FILE: &str = "pair_a.png";
pub const PAIR_B_FILE: &str = "pair_b.png";
pub const TRUTH_FILE: &str = "truth.flo";
pub const METADATA_FILE: &str = "metadata.json";

/// Provenance written next to a generated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetadata {
    pub flow_kind: String,
    pub flow_spec: String,
    pub flow: AnalyticFlow,
    pub seed: u64,
    pub rng: String,
    pub particles: ParticleConfig,
    pub max_displacement: f64,
    pub mean_displacement: f64,
}

impl PairMetadata {
    pub fn new(flow: &AnalyticFlow, config: &ParticleConfig) -> Self {
        let stats = flow_stats(flow, config.image_size);
        Self {
            flow_kind: flow.kind_name().to_string(),
            flow_spec: flow.to_string(),
            flow: *flow,
            seed: config.seed,
            rng: "chacha8".to_string(),
            particles: config.clone(),
            max_displacement: stats.max_magnitude,
            mean_displacement: stats.mean_magnitude,
        }
    }
}

/// Writes `pair_a.png`, `pair_b.png`, `truth.flo` and `metadata.json` into
/// `dir`, creating it if needed. Each file is written atomically.
pub fn write_pair_dir(
    dir: impl AsRef<std::path::Path>,
    pair: &SyntheticPair,
    metadata: &PairMetadata,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_gray_png(dir.join(PAIR_A_FILE), &pair.image_a)?;
    write_gray_png(dir.join(PAIR_B_FILE), &pair.image_b)?;
    write_flo(dir.join(TRUTH_FILE), &pair.truth)?;
    let mut json = serde_json::to_string_pretty(metadata)?;
    json.push('\n');
    write_atomic(dir.join(METADATA_FILE), json.as_bytes())
}
