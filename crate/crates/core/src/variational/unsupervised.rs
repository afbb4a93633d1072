use serde::Serialize;

use crate::config::KeyValueConfig;
use crate::error::{check_dims, Error, Result};
use crate::field::{upsample2x_flow, FlowField, GrayImage, Pyramid, MAX_PYRAMID_LEVELS};
use crate::loss::{multiscale_loss, total_loss, LossParams};

use super::adam::Adam;
use super::trace::{IterRecord, LevelTrace, SolveTrace};

pub const SOLVER_CONFIG_KEYS: &[&str] = &[
    "pyramid_levels",
    "iters_per_level",
    "step_size",
    "final_step_fraction",
    "warmup_iters",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "convergence_tol",
    "report_multiscale",
];

/// Smallest side length a pyramid level may have.
const MIN_LEVEL_SIZE: usize = 8;

/// Minimum image side accepted by the unsupervised solver.
pub const MIN_IMAGE_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Upper bound; fewer levels are used when the coarsest would drop
    /// below 8 px.
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    /// Peak Adam learning rate in pixels. Large compared with the final
    /// accuracy: the second-order Charbonnier smoothness term is very stiff
    /// near zero, so Adam's per-coordinate normalization leaves only a small
    /// fraction of each step for the coherent, photometry-driven motion.
    pub step_size: f64,
    /// The learning rate follows a cosine from `step_size` down to
    /// `step_size * final_step_fraction` within each level.
    pub final_step_fraction: f64,
    /// The step ramps up linearly over the first `warmup_iters` iterations
    /// of each level. Without it, the first full-size step scatters the
    /// upsampled initialization and finer levels lose the sub-pixel
    /// correction they are meant to add.
    pub warmup_iters: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// A level stops early once the relative loss decrease between two
    /// iterations falls in `[0, convergence_tol)`.
    pub convergence_tol: f64,
    /// Evaluate the multi-scale objective of the final flows.
    pub report_multiscale: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            iters_per_level: 150,
            step_size: 2.0,
            final_step_fraction: 0.05,
            warmup_iters: 4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            convergence_tol: 1e-7,
            report_multiscale: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.pyramid_levels == 0 || self.pyramid_levels > MAX_PYRAMID_LEVELS {
            return bad("pyramid_levels must be in 1..=6");
        }
        if self.iters_per_level == 0 {
            return bad("iters_per_level must be >= 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be > 0");
        }
        if !(self.final_step_fraction > 0.0 && self.final_step_fraction <= 1.0) {
            return bad("final_step_fraction must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be >= 0");
        }
        Ok(())
    }

    pub fn apply_config(mut self, cfg: &KeyValueConfig) -> Result<Self> {
        if let Some(v) = cfg.get("pyramid_levels")? {
            self.pyramid_levels = v;
        }
        if let Some(v) = cfg.get("iters_per_level")? {
            self.iters_per_level = v;
        }
        if let Some(v) = cfg.get("step_size")? {
            self.step_size = v;
        }
        if let Some(v) = cfg.get("final_step_fraction")? {
            self.final_step_fraction = v;
        }
        if let Some(v) = cfg.get("warmup_iters")? {
            self.warmup_iters = v;
        }
        if let Some(v) = cfg.get("adam_beta1")? {
            self.adam_beta1 = v;
        }
        if let Some(v) = cfg.get("adam_beta2")? {
            self.adam_beta2 = v;
        }
        if let Some(v) = cfg.get("adam_eps")? {
            self.adam_eps = v;
        }
        if let Some(v) = cfg.get("convergence_tol")? {
            self.convergence_tol = v;
        }
        if let Some(v) = cfg.get("report_multiscale")? {
            self.report_multiscale = v;
        }
        self.validate()?;
        Ok(self)
    }

    fn learning_rate(&self, iter: usize) -> f64 {
        let warmup = if iter < self.warmup_iters {
            (iter + 1) as f64 / self.warmup_iters as f64
        } else {
            1.0
        };
        warmup * self.cosine_rate(iter)
    }

    fn cosine_rate(&self, iter: usize) -> f64 {
        if self.iters_per_level <= 1 {
            return self.step_size;
        }
        let progress = iter as f64 / (self.iters_per_level - 1) as f64;
        let floor = self.final_step_fraction;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.step_size * (floor + (1.0 - floor) * cosine)
    }
}

pub(crate) fn check_normalized(img: &GrayImage, name: &str) -> Result<()> {
    let (lo, hi) = (img.min_value(), img.max_value());
    if lo < -1e-9 || hi > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{name} is not normalized to [0, 1] (range {lo}..{hi})"
        )));
    }
    Ok(())
}

pub(crate) fn effective_levels(width: usize, height: usize, requested: usize) -> usize {
    let mut levels = 1;
    while levels < requested && (width.min(height) >> levels) >= MIN_LEVEL_SIZE {
        levels += 1;
    }
    levels
}

fn pack(f: &FlowField, b: &FlowField) -> Vec<f64> {
    let mut x = Vec::with_capacity(4 * f.len());
    x.extend_from_slice(f.u());
    x.extend_from_slice(f.v());
    x.extend_from_slice(b.u());
    x.extend_from_slice(b.v());
    x
}

fn unpack(x: &[f64], width: usize, height: usize) -> Result<(FlowField, FlowField)> {
    let n = width * height;
    let f = FlowField::new(width, height, x[..n].to_vec(), x[n..2 * n].to_vec())?;
    let b = FlowField::new(width, height, x[2 * n..3 * n].to_vec(), x[3 * n..].to_vec())?;
    Ok((f, b))
}

fn mean_flow(f: &FlowField) -> (f64, f64) {
    let n = f.len() as f64;
    (f.u().iter().sum::<f64>() / n, f.v().iter().sum::<f64>() / n)
}

fn optimize_level(
    i1: &GrayImage,
    i2: &GrayImage,
    forward: FlowField,
    backward: FlowField,
    params: &LossParams,
    config: &SolverConfig,
    level: usize,
) -> Result<(FlowField, FlowField, LevelTrace)> {
    let (w, h) = i1.dims();
    let mut x = pack(&forward, &backward);
    let mut adam = Adam::new(x.len(), config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut losses = Vec::new();
    let mut state = (forward, backward);
    for iter in 0..config.iters_per_level {
        let loss = total_loss(i1, i2, &state.0, &state.1, params)?;
        let value = loss.combined.value;
        let converged = losses.last().is_some_and(|prev: &IterRecord| {
            let decrease = (prev.total - value) / prev.total;
            (0.0..config.convergence_tol).contains(&decrease)
        });
        losses.push(IterRecord::new(iter, value, loss.terms));
        if converged || iter + 1 == config.iters_per_level {
            break;
        }
        let grad = pack(&loss.combined.grad_forward, &loss.combined.grad_backward);
        adam.step(&mut x, &grad, config.learning_rate(iter));
        state = unpack(&x, w, h)?;
    }
    let trace = LevelTrace {
        level,
        width: w,
        height: h,
        losses,
        mean_forward: mean_flow(&state.0),
    };
    Ok((state.0, state.1, trace))
}

/// Minimizes the unsupervised total loss over the forward and backward flow
/// fields, coarse to fine. Each level starts from the upsampled result of
/// the level below; the coarsest starts from zero flow.
pub fn estimate_unsupervised(
    i1: &GrayImage,
    i2: &GrayImage,
    loss_params: &LossParams,
    solver_config: &SolverConfig,
) -> Result<SolveTrace> {
    loss_params.validate()?;
    solver_config.validate()?;
    check_dims(i1.dims(), i2.dims())?;
    let (w, h) = i1.dims();
    if w < MIN_IMAGE_SIZE || h < MIN_IMAGE_SIZE {
        return Err(Error::TooSmall(format!(
            "unsupervised estimation needs at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, got {w}x{h}"
        )));
    }
    check_normalized(i1, "first image")?;
    check_normalized(i2, "second image")?;

    let levels = effective_levels(w, h, solver_config.pyramid_levels);
    let p1 = Pyramid::build(i1, levels)?;
    let p2 = Pyramid::build(i2, levels)?;
    let (cw, ch) = p1.level(levels - 1).dims();
    let mut forward = FlowField::zeros(cw, ch);
    let mut backward = FlowField::zeros(cw, ch);
    let mut traces = Vec::with_capacity(levels);
    for level in (0..levels).rev() {
        let (a, b) = (p1.level(level), p2.level(level));
        if forward.dims() != a.dims() {
            forward = upsample2x_flow(&forward, a.width(), a.height())?;
            backward = upsample2x_flow(&backward, a.width(), a.height())?;
        }
        let (f, bw, trace) =
            optimize_level(a, b, forward, backward, loss_params, solver_config, level)?;
        log::debug!(
            "level {level}: {} iters, loss {:.4e}",
            trace.iters(),
            trace.losses.last().map_or(f64::NAN, |r| r.total)
        );
        forward = f;
        backward = bw;
        traces.push(trace);
    }

    let multiscale = if solver_config.report_multiscale {
        let pf = Pyramid::build(&forward, levels)?;
        let pb = Pyramid::build(&backward, levels)?;
        Some(multiscale_loss(i1, i2, &pf, &pb, loss_params)?.value)
    } else {
        None
    };

    Ok(SolveTrace {
        levels: traces,
        forward,
        backward,
        multiscale_loss: multiscale,
    })
}
