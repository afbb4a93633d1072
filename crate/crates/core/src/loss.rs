//! Unsupervised flow objective: photometric, second-order smoothness and
//! forward/backward consistency terms under a generalized Charbonnier
//! penalty, their weighted total, and the multi-scale aggregate.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to both the forward and the backward flow. Sums are plain sums
//! over pixels (not normalized by pixel count). Accumulation is sequential
//! in a fixed order, so results are bit-reproducible.

use serde::Serialize;

use crate::config::KeyValueConfig;
use crate::error::{check_dims, Error, Result};
use crate::field::{FlowField, GrayImage, Pyramid, MAX_PYRAMID_LEVELS};
use crate::warp::{photometric_residual, BilinearCell};

/// Layer weights of the multi-scale objective, full resolution first.
pub const DEFAULT_LAYER_WEIGHTS: [f64; MAX_PYRAMID_LEVELS] = [12.7, 5.5, 4.35, 3.9, 3.4, 1.1];

pub const LOSS_CONFIG_KEYS: &[&str] = &[
    "gamma",
    "epsilon",
    "lambda_p",
    "lambda_s",
    "lambda_c",
    "layer_weights",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossParams {
    /// Charbonnier exponent.
    pub gamma: f64,
    /// Charbonnier offset.
    pub epsilon: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_c: f64,
    /// Index 0 is full resolution.
    pub layer_weights: [f64; MAX_PYRAMID_LEVELS],
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            gamma: 0.45,
            epsilon: 1e-3,
            lambda_p: 1.0,
            lambda_s: 3.0,
            lambda_c: 0.2,
            layer_weights: DEFAULT_LAYER_WEIGHTS,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} not in (0, 1]", self.gamma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be > 0", self.epsilon)));
        }
        let lambdas = [self.lambda_p, self.lambda_s, self.lambda_c];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if lambdas.iter().all(|&l| l == 0.0) {
            return Err(Error::Config("at least one loss weight must be > 0".into()));
        }
        if self.layer_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("layer weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn charbonnier(&self) -> Charbonnier {
        Charbonnier::new(self.gamma, self.epsilon)
    }

    /// Same penalty, with the term weights replaced.
    pub fn with_lambdas(&self, lambda_p: f64, lambda_s: f64, lambda_c: f64) -> Self {
        Self {
            lambda_p,
            lambda_s,
            lambda_c,
            ..self.clone()
        }
    }

    /// Overrides fields present in `cfg` and validates the result.
    pub fn apply_config(mut self, cfg: &KeyValueConfig) -> Result<Self> {
        if let Some(v) = cfg.get("gamma")? {
            self.gamma = v;
        }
        if let Some(v) = cfg.get("epsilon")? {
            self.epsilon = v;
        }
        if let Some(v) = cfg.get("lambda_p")? {
            self.lambda_p = v;
        }
        if let Some(v) = cfg.get("lambda_s")? {
            self.lambda_s = v;
        }
        if let Some(v) = cfg.get("lambda_c")? {
            self.lambda_c = v;
        }
        if let Some(ws) = cfg.get_list::<f64>("layer_weights")? {
            self.layer_weights = ws.try_into().map_err(|ws: Vec<f64>| {
                Error::Config(format!(
                    "layer_weights needs {MAX_PYRAMID_LEVELS} values, got {}",
                    ws.len()
                ))
            })?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        Self::default().apply_config(&KeyValueConfig::parse(text)?)
    }

    pub fn to_config_string(&self) -> String {
        let ws: Vec<String> = self.layer_weights.iter().map(|w| w.to_string()).collect();
        format!(
            "gamma = {}\nepsilon = {}\nlambda_p = {}\nlambda_s = {}\nlambda_c = {}\nlayer_weights = {}\n",
            self.gamma,
            self.epsilon,
            self.lambda_p,
            self.lambda_s,
            self.lambda_c,
            ws.join(", ")
        )
    }
}

/// Generalized Charbonnier penalty `(x^2 + eps^2)^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charbonnier {
    gamma: f64,
    eps2: f64,
}

impl Charbonnier {
    pub fn new(gamma: f64, epsilon: f64) -> Self {
        Self {
            gamma,
            eps2: epsilon * epsilon,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (x * x + self.eps2).powf(self.gamma)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        2.0 * self.gamma * x * (x * x + self.eps2).powf(self.gamma - 1.0)
    }

    /// Value and derivative sharing one `powf`.
    #[inline]
    pub fn value_deriv(&self, x: f64) -> (f64, f64) {
        let s = x * x + self.eps2;
        let t = s.powf(self.gamma - 1.0);
        (t * s, 2.0 * self.gamma * x * t)
    }
}

pub fn charbonnier(x: f64, params: &LossParams) -> f64 {
    params.charbonnier().value(x)
}

pub fn charbonnier_deriv(x: f64, params: &LossParams) -> f64 {
    params.charbonnier().deriv(x)
}

/// A loss value with its gradients w.r.t. the forward and backward flows.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad_forward: FlowField,
    pub grad_backward: FlowField,
}

impl LossValueGrad {
    fn zero(width: usize, height: usize) -> Self {
        Self {
            value: 0.0,
            grad_forward: FlowField::zeros(width, height),
            grad_backward: FlowField::zeros(width, height),
        }
    }

    fn add_scaled(&mut self, other: &LossValueGrad, weight: f64) {
        self.value += weight * other.value;
        let pairs = [
            (&mut self.grad_forward, &other.grad_forward),
            (&mut self.grad_backward, &other.grad_backward),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.u_mut().iter_mut().zip(src.u()) {
                *d += weight * s;
            }
            for (d, s) in dst.v_mut().iter_mut().zip(src.v()) {
                *d += weight * s;
            }
        }
    }

    pub fn max_abs_gradient(&self) -> f64 {
        [&self.grad_forward, &self.grad_backward]
            .iter()
            .flat_map(|g| g.u().iter().chain(g.v()))
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn check_flows(flow_f: &FlowField, flow_b: &FlowField) -> Result<(usize, usize)> {
    check_dims(flow_f.dims(), flow_b.dims())?;
    Ok(flow_f.dims())
}

/// One direction of the photometric term: `sum rho(i1(x) - i2(x + flow(x)))`
/// over pixels whose sample lands inside `i2`, writing the gradient into
/// `grad`.
fn photometric_half(
    i1: &GrayImage,
    i2: &GrayImage,
    flow: &FlowField,
    rho: &Charbonnier,
    grad: &mut FlowField,
) -> Result<f64> {
    let res = photometric_residual(i1, i2, flow)?;
    let mut value = 0.0;
    for i in 0..res.residual.len() {
        if !res.valid_mask[i] {
            continue;
        }
        let (r, dr) = rho.value_deriv(res.residual[i]);
        value += r;
        grad.u_mut()[i] = dr * res.d_res_du[i];
        grad.v_mut()[i] = dr * res.d_res_dv[i];
    }
    Ok(value)
}

/// Bidirectional photometric loss. Pixels whose warped sample leaves the
/// image contribute neither value nor gradient: reading them as zero would
/// charge any outward motion at the border a full-intensity residual and pin
/// the flow there.
pub fn photometric_loss(
    i1: &GrayImage,
    i2: &GrayImage,
    flow_f: &FlowField,
    flow_b: &FlowField,
    params: &LossParams,
) -> Result<LossValueGrad> {
    let (w, h) = check_flows(flow_f, flow_b)?;
    check_dims(i1.dims(), i2.dims())?;
    check_dims(i1.dims(), (w, h))?;
    let rho = params.charbonnier();
    let mut out = LossValueGrad::zero(w, h);
    let forward = photometric_half(i1, i2, flow_f, &rho, &mut out.grad_forward)?;
    let backward = photometric_half(i2, i1, flow_b, &rho, &mut out.grad_backward)?;
    out.value = forward + backward;
    Ok(out)
}

/// Stencil offsets `(dx, dy)`: horizontal, vertical, and the two diagonals.
/// For offset `d`, the stencil at `x` is `(x - d, x, x + d)`.
pub const SMOOTHNESS_DIRECTIONS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// Number of complete second-difference stencils summed by
/// [`smoothness_loss`]: 4 directions x 2 components x 2 fields.
pub fn smoothness_stencil_count(width: usize, height: usize) -> usize {
    if width < 3 || height < 3 {
        return 0;
    }
    let (w, h) = (width, height);
    let per_component = (w - 2) * h + w * (h - 2) + 2 * (w - 2) * (h - 2);
    per_component * 4
}

fn second_difference_sum(
    field: &[f64],
    grad: &mut [f64],
    width: usize,
    height: usize,
    rho: &Charbonnier,
) -> f64 {
    let mut value = 0.0;
    for &(dx, dy) in &SMOOTHNESS_DIRECTIONS {
        let x_lo = dx.unsigned_abs();
        let y_lo = dy.unsigned_abs();
        let step = dy * width as isize + dx;
        for y in y_lo..height - y_lo {
            for x in x_lo..width - x_lo {
                let c = y * width + x;
                let s = (c as isize - step) as usize;
                let r = (c as isize + step) as usize;
                let (p, dp) = rho.value_deriv(field[s] - 2.0 * field[c] + field[r]);
                value += p;
                grad[s] += dp;
                grad[c] -= 2.0 * dp;
                grad[r] += dp;
            }
        }
    }
    value
}

/// Second-order smoothness loss over both flows. Stencils reaching outside
/// the grid are skipped.
pub fn smoothness_loss(
    flow_f: &FlowField,
    flow_b: &FlowField,
    params: &LossParams,
) -> Result<LossValueGrad> {
    let (w, h) = check_flows(flow_f, flow_b)?;
    if w < 3 || h < 3 {
        return Err(Error::TooSmall(format!(
            "smoothness needs at least 3x3, got {w}x{h}"
        )));
    }
    let rho = params.charbonnier();
    let mut out = LossValueGrad::zero(w, h);
    let mut value = 0.0;
    for (flow, grad) in [
        (flow_f, &mut out.grad_forward),
        (flow_b, &mut out.grad_backward),
    ] {
        value += second_difference_sum(flow.u(), grad.u_mut(), w, h, &rho);
        value += second_difference_sum(flow.v(), grad.v_mut(), w, h, &rho);
    }
    out.value = value;
    Ok(out)
}

/// One direction of the consistency term:
/// `sum rho(a_u(x) + b_u(x + a(x))) + rho(a_v(x) + b_v(x + a(x)))`.
///
/// `b` is sampled with border clamping; along a clamped axis the sample does
/// not move with `a`.
fn consistency_half(
    a: &FlowField,
    b: &FlowField,
    rho: &Charbonnier,
    grad_a: &mut FlowField,
    grad_b: &mut FlowField,
) -> f64 {
    let (w, h) = a.dims();
    let mut value = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (au, av) = (a.u()[i], a.v()[i]);
            let (cell, clamped_x, clamped_y) =
                BilinearCell::clamped(x as f64 + au, y as f64 + av, w, h);
            let (bu, mut bu_dx, mut bu_dy) = cell.sample_with_gradient(b.u(), w);
            let (bv, mut bv_dx, mut bv_dy) = cell.sample_with_gradient(b.v(), w);
            if clamped_x {
                bu_dx = 0.0;
                bv_dx = 0.0;
            }
            if clamped_y {
                bu_dy = 0.0;
                bv_dy = 0.0;
            }
            let (pu, du) = rho.value_deriv(au + bu);
            let (pv, dv) = rho.value_deriv(av + bv);
            value += pu + pv;
            grad_a.u_mut()[i] += du * (1.0 + bu_dx) + dv * bv_dx;
            grad_a.v_mut()[i] += du * bu_dy + dv * (1.0 + bv_dy);
            let weights = cell.weights();
            for (k, idx) in cell.indices(w).into_iter().enumerate() {
                grad_b.u_mut()[idx] += du * weights[k];
                grad_b.v_mut()[idx] += dv * weights[k];
            }
        }
    }
    value
}

/// Forward/backward consistency loss. The penalty is applied to the u-sum
/// and the v-sum separately and the two are added.
pub fn consistency_loss(
    flow_f: &FlowField,
    flow_b: &FlowField,
    params: &LossParams,
) -> Result<LossValueGrad> {
    let (w, h) = check_flows(flow_f, flow_b)?;
    let rho = params.charbonnier();
    let mut out = LossValueGrad::zero(w, h);
    let forward = consistency_half(
        flow_f,
        flow_b,
        &rho,
        &mut out.grad_forward,
        &mut out.grad_backward,
    );
    let backward = consistency_half(
        flow_b,
        flow_f,
        &rho,
        &mut out.grad_backward,
        &mut out.grad_forward,
    );
    out.value = forward + backward;
    Ok(out)
}

/// Unweighted per-term values; `None` for terms skipped by a zero weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermValues {
    pub photometric: Option<f64>,
    pub smoothness: Option<f64>,
    pub consistency: Option<f64>,
}

impl TermValues {
    /// Recombines the terms with the weights of `params`.
    pub fn weighted_total(&self, params: &LossParams) -> f64 {
        params.lambda_p * self.photometric.unwrap_or(0.0)
            + params.lambda_s * self.smoothness.unwrap_or(0.0)
            + params.lambda_c * self.consistency.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub combined: LossValueGrad,
    pub terms: TermValues,
}

/// Weighted sum of the three terms. A term whose weight is zero is not
/// evaluated at all.
pub fn total_loss(
    i1: &GrayImage,
    i2: &GrayImage,
    flow_f: &FlowField,
    flow_b: &FlowField,
    params: &LossParams,
) -> Result<TotalLoss> {
    params.validate()?;
    let (w, h) = check_flows(flow_f, flow_b)?;
    check_dims(i1.dims(), i2.dims())?;
    check_dims(i1.dims(), (w, h))?;
    let mut combined = LossValueGrad::zero(w, h);
    let mut terms = TermValues::default();
    if params.lambda_p > 0.0 {
        let l = photometric_loss(i1, i2, flow_f, flow_b, params)?;
        combined.add_scaled(&l, params.lambda_p);
        terms.photometric = Some(l.value);
    }
    if params.lambda_s > 0.0 {
        let l = smoothness_loss(flow_f, flow_b, params)?;
        combined.add_scaled(&l, params.lambda_s);
        terms.smoothness = Some(l.value);
    }
    if params.lambda_c > 0.0 {
        let l = consistency_loss(flow_f, flow_b, params)?;
        combined.add_scaled(&l, params.lambda_c);
        terms.consistency = Some(l.value);
    }
    Ok(TotalLoss { combined, terms })
}

/// `sum_i weights[i] * values[i]`, accumulated from full resolution down.
pub fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    assert_eq!(weights.len(), values.len());
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleLoss {
    /// `sum_i w_i * L_i`.
    pub value: f64,
    /// Unweighted per-level losses, full resolution first. The gradient of
    /// `value` w.r.t. level `i` flows is `w_i` times the level gradient.
    pub levels: Vec<TotalLoss>,
}

/// Multi-scale objective: the images are pooled to the depth of the flow
/// pyramids and each level's total loss is weighted by `layer_weights[i]`.
/// Flow pyramids must already be in per-level pixel units.
pub fn multiscale_loss(
    i1: &GrayImage,
    i2: &GrayImage,
    flow_pyramid_f: &Pyramid<FlowField>,
    flow_pyramid_b: &Pyramid<FlowField>,
    params: &LossParams,
) -> Result<MultiscaleLoss> {
    let depth = flow_pyramid_f.len();
    if flow_pyramid_b.len() != depth {
        return Err(Error::InvalidInput(format!(
            "flow pyramid depths differ: {depth} vs {}",
            flow_pyramid_b.len()
        )));
    }
    if depth > MAX_PYRAMID_LEVELS {
        return Err(Error::InvalidInput(format!(
            "at most {MAX_PYRAMID_LEVELS} levels supported, got {depth}"
        )));
    }
    let p1 = Pyramid::build(i1, depth)?;
    let p2 = Pyramid::build(i2, depth)?;
    let mut levels = Vec::with_capacity(depth);
    for i in 0..depth {
        levels.push(total_loss(
            p1.level(i),
            p2.level(i),
            flow_pyramid_f.level(i),
            flow_pyramid_b.level(i),
            params,
        )?);
    }
    let values: Vec<f64> = levels.iter().map(|l| l.combined.value).collect();
    let value = weighted_sum(&params.layer_weights[..depth], &values);
    Ok(MultiscaleLoss { value, levels })
}
