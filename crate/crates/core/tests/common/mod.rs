#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unpiv_core::{FlowField, GrayImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen::<f64>())
}

/// Moves `c` at least `gap` away from the nearest integer so bilinear
/// derivatives are continuous around it.
fn off_lattice(c: f64, gap: f64) -> f64 {
    let frac = c - c.floor();
    if frac < gap {
        c + gap
    } else if frac > 1.0 - gap {
        c - gap
    } else {
        c
    }
}

/// Random flow in `[-scale, scale]` whose sample coordinates `x + flow(x)`
/// all avoid integer lattice lines by at least 1e-3.
pub fn random_flow(w: usize, h: usize, scale: f64, rng: &mut impl Rng) -> FlowField {
    FlowField::from_fn(w, h, |x, y| {
        let u = rng.gen_range(-scale..scale);
        let v = rng.gen_range(-scale..scale);
        (
            off_lattice(x as f64 + u, 1e-3) - x as f64,
            off_lattice(y as f64 + v, 1e-3) - y as f64,
        )
    })
}

pub fn max_abs(f: &FlowField) -> f64 {
    f.u().iter().chain(f.v()).fold(0.0, |m, g| m.max(g.abs()))
}

fn perturbed(f: &FlowField, i: usize, du: f64) -> FlowField {
    let (w, h) = f.dims();
    let (mut u, mut v) = (f.u().to_vec(), f.v().to_vec());
    if i < u.len() {
        u[i] += du;
    } else {
        v[i - u.len()] += du;
    }
    FlowField::new(w, h, u, v).unwrap()
}

/// Fourth-order central difference `(8(g(h) - g(-h)) - (g(2h) - g(-2h))) / 12h`.
/// The Charbonnier penalty has third derivatives of order 1e6 within ε of
/// zero, which the second-order stencil does not resolve at h = 1e-5.
fn central(g: impl Fn(f64) -> f64, h: f64) -> f64 {
    (8.0 * (g(h) - g(-h)) - (g(2.0 * h) - g(-2.0 * h))) / (12.0 * h)
}

/// Central-difference gradient of `loss` w.r.t. both flows, step `h`.
pub fn numeric_gradient(
    f: &FlowField,
    b: &FlowField,
    h: f64,
    loss: impl Fn(&FlowField, &FlowField) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = 2 * f.len();
    let gf = (0..n)
        .map(|i| central(|d| loss(&perturbed(f, i, d), b), h))
        .collect();
    let gb = (0..n)
        .map(|i| central(|d| loss(f, &perturbed(b, i, d)), h))
        .collect();
    (gf, gb)
}

/// Central-difference gradients of `K` scalar functions evaluated together,
/// e.g. every term of the total loss from one evaluation.
pub fn numeric_gradients<const K: usize>(
    f: &FlowField,
    b: &FlowField,
    h: f64,
    loss: impl Fn(&FlowField, &FlowField) -> [f64; K],
) -> [(Vec<f64>, Vec<f64>); K] {
    let n = 2 * f.len();
    let mut out: [(Vec<f64>, Vec<f64>); K] =
        std::array::from_fn(|_| (Vec::with_capacity(n), Vec::with_capacity(n)));
    let stencil = |g: &dyn Fn(f64) -> [f64; K]| {
        let (p1, m1, p2, m2) = (g(h), g(-h), g(2.0 * h), g(-2.0 * h));
        std::array::from_fn::<f64, K, _>(|k| {
            (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * h)
        })
    };
    for i in 0..n {
        let d = stencil(&|d| loss(&perturbed(f, i, d), b));
        for k in 0..K {
            out[k].0.push(d[k]);
        }
    }
    for i in 0..n {
        let d = stencil(&|d| loss(f, &perturbed(b, i, d)));
        for k in 0..K {
            out[k].1.push(d[k]);
        }
    }
    out
}

pub fn flat(f: &FlowField) -> Vec<f64> {
    f.u().iter().chain(f.v()).copied().collect()
}

/// Relative error of an analytic gradient vector against a numeric one:
/// `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, g| m.max(g.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
