//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails. Pass criterion numbers as arguments to
//! run a subset: `cargo test --test acceptance -- 4 5`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use unpiv_core::eval::{
    aee, per_100px, plan_jobs, run_benchmark, synthetic_suite, BenchSettings, DatasetEntry,
    EvalReport, Method, ALL_KINDS,
};
use unpiv_core::io::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
use unpiv_core::loss::{
    charbonnier, consistency_loss, photometric_loss, smoothness_loss, smoothness_stencil_count,
    total_loss, weighted_sum, DEFAULT_LAYER_WEIGHTS,
};
use unpiv_core::synth::{render_pair, AnalyticFlow, ParticleConfig, SyntheticPair};
use unpiv_core::variational::{
    estimate_horn_schunck, estimate_unsupervised, solve_trace_report, HsConfig, SolverConfig,
};
use unpiv_core::warp::{backwarp, bilinear_weights};
use unpiv_core::xcorr::{estimate_multipass, XcorrConfig};
use unpiv_core::{FlowField, LossParams};

/// Outcome detail on success, reason on failure.
type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pair(spec: &str, size: usize, seed: u64) -> SyntheticPair {
    let flow = AnalyticFlow::parse_spec(spec, size).unwrap();
    render_pair(&flow, &ParticleConfig::new(size, seed)).unwrap()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// 1. Analytic gradients of all four losses against central differences.
fn gradient_suite() -> Outcome {
    const INSTANCES: u64 = 50;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let p = LossParams::default();
    let mut worst = [0.0f64; 4];
    for seed in 0..INSTANCES {
        let mut r = rng(10_000 + seed);
        let i1 = random_image(16, 16, &mut r);
        let i2 = random_image(16, 16, &mut r);
        let f = random_flow(16, 16, 2.0, &mut r);
        let b = random_flow(16, 16, 2.0, &mut r);
        let analytic = [
            photometric_loss(&i1, &i2, &f, &b, &p).unwrap(),
            smoothness_loss(&f, &b, &p).unwrap(),
            consistency_loss(&f, &b, &p).unwrap(),
            total_loss(&i1, &i2, &f, &b, &p).unwrap().combined,
        ];
        let numeric = numeric_gradients(&f, &b, 1e-5, |f, b| {
            let t = total_loss(&i1, &i2, f, b, &p).unwrap();
            [
                t.terms.photometric.unwrap(),
                t.terms.smoothness.unwrap(),
                t.terms.consistency.unwrap(),
                t.combined.value,
            ]
        });
        for (k, (a, (nf, nb))) in analytic.iter().zip(&numeric).enumerate() {
            let e = relative_error(&flat(&a.grad_forward), nf)
                .max(relative_error(&flat(&a.grad_backward), nb));
            worst[k] = worst[k].max(e);
        }
    }
    let elapsed = start.elapsed();
    let names = ["photometric", "smoothness", "consistency", "total"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst.iter().all(|&e| e < TOL), || format!("max relative error: {detail}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {:.1} s", secs(elapsed)))?;
    Ok(format!(
        "{INSTANCES} instances, max relative error {detail}; {:.1} s",
        secs(elapsed)
    ))
}

// 2. Smoothness and consistency minima.
fn loss_minima() -> Outcome {
    let p = LossParams::default();
    let rho0 = (1e-6f64).powf(0.45);
    ensure((charbonnier(0.0, &p) - rho0).abs() <= 1e-15 * rho0, || "rho(0)".into())?;
    let mut worst_rel = 0.0f64;
    let mut worst_grad = 0.0f64;
    for (w, h) in [(16, 16), (23, 9), (64, 48)] {
        let expected = smoothness_stencil_count(w, h) as f64 * rho0;
        let mut r = rng(w as u64 * 31 + h as u64);
        for _ in 0..4 {
            let (a, b, c, d) = (
                r.gen_range(-4.0..4.0),
                r.gen_range(-4.0..4.0),
                r.gen_range(-0.1..0.1),
                r.gen_range(-0.1..0.1),
            );
            let constant = FlowField::constant(w, h, a, b);
            let affine = FlowField::from_fn(w, h, |x, y| {
                let (x, y) = (x as f64, y as f64);
                (a + c * x - d * y, b + d * x + c * y)
            });
            for (f, bw) in [(&constant, &affine), (&affine, &constant.negated())] {
                let s = smoothness_loss(f, bw, &p).unwrap().value;
                worst_rel = worst_rel.max((s - expected).abs() / expected);
            }
            let c = consistency_loss(&constant, &constant.negated(), &p).unwrap();
            let c_expected = 4.0 * (w * h) as f64 * rho0;
            worst_rel = worst_rel.max((c.value - c_expected).abs() / c_expected);
            worst_grad = worst_grad.max(max_abs(&c.grad_forward)).max(max_abs(&c.grad_backward));
        }
    }
    ensure(worst_rel < 1e-9, || format!("relative deviation {worst_rel:e}"))?;
    ensure(worst_grad < 1e-10, || format!("consistency gradient {worst_grad:e}"))?;
    Ok(format!(
        "rho(0) = {rho0:.16e}; worst relative deviation {worst_rel:.1e}; consistency |grad| {worst_grad:.1e}"
    ))
}

// 3. Warp oracle.
fn warp_oracle() -> Outcome {
    let mut r = rng(3);
    let (w, h) = (21, 17);
    let img = random_image(w, h, &mut r);
    let identity = backwarp(&img, &FlowField::zeros(w, h)).unwrap();
    ensure(identity.warped == img, || "zero flow is not the identity".into())?;
    ensure(identity.valid_mask.iter().all(|&m| m), || "zero flow masked pixels".into())?;

    for _ in 0..20 {
        let flow = FlowField::from_fn(w, h, |x, y| {
            let tx = r.gen_range(0..w) as f64;
            let ty = r.gen_range(0..h) as f64;
            (tx - x as f64, ty - y as f64)
        });
        let warped = backwarp(&img, &flow).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (u, v) = flow.get(x, y);
                let gathered = img.get((x as f64 + u) as usize, (y as f64 + v) as usize);
                let got = warped.warped.get(x, y);
                ensure(got.to_bits() == gathered.to_bits(), || {
                    format!("({x}, {y}) + ({u}, {v}): {got} != {gathered}")
                })?;
            }
        }
    }

    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let ws = bilinear_weights(r.gen::<f64>(), r.gen::<f64>());
        worst = worst.max((ws.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= 1e-12, || format!("weights sum off by {worst:e}"))?;
    Ok(format!(
        "integer gathers bit-identical, zero flow identity, weight-sum error {worst:.1e}"
    ))
}

// 4. Recovery of uniform shifts at 256x256.
fn uniform_recovery() -> Outcome {
    let shifts = [(0.6, -0.3), (1.7, 2.2), (-2.9, 1.1), (3.8, -3.4), (4.9, 0.5)];
    let start = Instant::now();
    let mut errors = [Vec::new(), Vec::new(), Vec::new()];
    for (seed, (dx, dy)) in shifts.iter().enumerate() {
        let p = pair(&format!("uniform:{dx},{dy}"), 256, 40 + seed as u64);
        let x = estimate_multipass(&p.image_a, &p.image_b, &XcorrConfig::default()).unwrap();
        errors[0].push(aee(&x.dense, &p.truth).unwrap());
        let u = estimate_unsupervised(
            &p.image_a,
            &p.image_b,
            &LossParams::default(),
            &SolverConfig::default(),
        )
        .unwrap();
        errors[1].push(aee(&u.forward, &p.truth).unwrap());
        let h = estimate_horn_schunck(&p.image_a, &p.image_b, &HsConfig::default()).unwrap();
        errors[2].push(aee(&h, &p.truth).unwrap());
    }
    let elapsed = start.elapsed();
    let limits = [0.2, 0.3, 0.5];
    let names = ["xcorr", "unsup", "hs"];
    let worst: Vec<f64> = errors.iter().map(|e| e.iter().cloned().fold(0.0, f64::max)).collect();
    let detail = names
        .iter()
        .zip(&worst)
        .zip(limits)
        .map(|((n, w), l)| format!("{n} max {w:.3} (< {l})"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst.iter().zip(limits).all(|(w, l)| *w < l), || format!("AEE px: {detail}"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {:.0} s", secs(elapsed)))?;
    Ok(format!(
        "{} seeds, AEE px: {detail}; {:.0} s",
        shifts.len(),
        secs(elapsed)
    ))
}

// 5. Rotation and vortex recovery, max displacement <= 3 px.
fn rotation_vortex_recovery() -> Outcome {
    let cases = [("rotation:0.015", 50), ("rotation:0.015", 51), ("vortex:550,20", 52), ("vortex:550,20", 53)];
    let mut lines = Vec::new();
    let mut ok = true;
    for (spec, seed) in cases {
        let p = pair(spec, 256, seed);
        let max_disp = p.truth.magnitudes().into_iter().fold(0.0, f64::max);
        ensure(max_disp <= 3.0, || format!("{spec}: max displacement {max_disp:.2} px"))?;
        let cfg = XcorrConfig {
            passes: 3,
            ..XcorrConfig::default()
        };
        let x = aee(&estimate_multipass(&p.image_a, &p.image_b, &cfg).unwrap().dense, &p.truth)
            .unwrap();
        let u = estimate_unsupervised(
            &p.image_a,
            &p.image_b,
            &LossParams::default(),
            &SolverConfig::default(),
        )
        .unwrap();
        let u = aee(&u.forward, &p.truth).unwrap();
        ok &= x < 0.5 && u < 0.5;
        lines.push(format!("{spec} s{seed} (max {max_disp:.2} px): xcorr {x:.3}, unsup {u:.3}"));
    }
    let detail = lines.join("; ");
    ensure(ok, || format!("AEE px over 0.5: {detail}"))?;
    Ok(format!("AEE px: {detail}"))
}

// 6. Loss ablation ordering on a vortex + shear suite.
fn ablation_ordering() -> Outcome {
    const SIZE: usize = 128;
    let mut dataset: Vec<DatasetEntry> = Vec::new();
    for i in 0..10u64 {
        let vortex = format!("vortex:{},{}", 150 + 20 * i, 8 + i % 5);
        let shear = format!("shear:{}", 0.01 + 0.004 * i as f64);
        for (k, spec) in [vortex, shear].iter().enumerate() {
            let flow = AnalyticFlow::parse_spec(spec, SIZE).unwrap();
            dataset.extend(synthetic_suite(&[flow], SIZE, &[600 + 2 * i + k as u64]).unwrap());
        }
    }
    let settings = BenchSettings {
        strict: true,
        ..BenchSettings::default()
    };
    let jobs = plan_jobs(&[Method::Unsup], true, &settings.loss);
    let start = Instant::now();
    let report = run_benchmark(&dataset, &jobs, &settings, None).unwrap();
    let mean = |tag: &str| -> Result<f64, String> {
        let agg = report
            .aggregate_for("unsup", tag, ALL_KINDS)
            .ok_or_else(|| format!("no {tag} aggregate"))?;
        ensure(agg.scored == dataset.len(), || format!("{tag}: {} scored", agg.scored))?;
        Ok(agg.mean_aee_px.unwrap())
    };
    let (psc, ps, pc) = (mean("P+S+C")?, mean("P+S")?, mean("P+C")?);
    let detail = format!(
        "{} pairs, mean AEE px P+S+C {psc:.4}, P+S {ps:.4}, P+C {pc:.4}; {:.0} s",
        dataset.len(),
        secs(start.elapsed())
    );
    ensure(psc <= ps && psc <= pc, || detail.clone())?;
    Ok(detail)
}

// 7. AEE metric.
fn aee_metric() -> Outcome {
    let t = random_flow(32, 24, 3.0, &mut rng(7));
    let same = aee(&t, &t).unwrap();
    ensure(same == 0.0, || format!("identical fields: {same}"))?;
    let zero = FlowField::zeros(32, 24);
    let offset = FlowField::constant(32, 24, 3.0, 4.0);
    let px = aee(&offset, &zero).unwrap();
    let per100 = per_100px(px);
    ensure(px == 5.0 && per100 == 500.0, || format!("(3, 4) offset: {px} px, {per100}"))?;
    Ok(format!("identical 0, (3, 4) offset {px} px = {per100} per 100 px"))
}

// 8. Multi-scale weighting with identical per-level losses.
fn multiscale_weights() -> Outcome {
    let expected_sum = 32.95;
    let mut worst = 0.0f64;
    let mut got_sum = 0.0;
    for c in [1.0, 0.37, 12.5, 1e-3, 4.2e4] {
        let got = weighted_sum(&DEFAULT_LAYER_WEIGHTS, &[c; 6]);
        got_sum = got / c;
        worst = worst.max((got - expected_sum * c).abs() / (expected_sum * c));
    }
    let weights = LossParams::default().layer_weights;
    ensure(weights == DEFAULT_LAYER_WEIGHTS, || "default weights differ".into())?;
    ensure(worst < 1e-9, || {
        format!(
            "weights {DEFAULT_LAYER_WEIGHTS:?} give {got_sum:.2}·c, expected {expected_sum}·c \
             (relative error {worst:.2e})"
        )
    })?;
    Ok(format!("weighted sum {got_sum}·c"))
}

fn determinism_run(dir: &std::path::Path) -> [Vec<u8>; 4] {
    let p = pair("vortex:200,10", 64, 9);
    let params = LossParams::default();
    let trace =
        estimate_unsupervised(&p.image_a, &p.image_b, &params, &SolverConfig::default()).unwrap();
    let flo = dir.join("flow.flo");
    write_flo(&flo, &trace.forward).unwrap();
    let trace_json = solve_trace_report(&trace, &params, Some("flow.flo")).to_json();

    let settings = BenchSettings {
        strict: true,
        ..BenchSettings::default()
    };
    let dataset = synthetic_suite(
        &[AnalyticFlow::parse_spec("uniform:1.3,-0.4", 64).unwrap()],
        64,
        &[1, 2],
    )
    .unwrap();
    let jobs = plan_jobs(&Method::ALL, false, &settings.loss);
    let report_path = dir.join("report.json");
    let report: EvalReport = run_benchmark(&dataset, &jobs, &settings, Some(&report_path)).unwrap();
    let csv_path = unpiv_core::eval::csv_path_for(&report_path);
    assert_eq!(report.records.len(), 2 * jobs.len());
    [
        std::fs::read(flo).unwrap(),
        trace_json.into_bytes(),
        std::fs::read(report_path).unwrap(),
        std::fs::read(csv_path).unwrap(),
    ]
}

// 9. Determinism under strict mode.
fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = determinism_run(a.path());
    let second = determinism_run(b.path());
    let names = [".flo", "trace JSON", "report JSON", "report CSV"];
    for ((x, y), name) in first.iter().zip(&second).zip(names) {
        ensure(!x.is_empty() && x == y, || format!("{name} differs between runs"))?;
    }
    let sizes: Vec<String> = first
        .iter()
        .zip(names)
        .map(|(x, n)| format!("{n} {} B", x.len()))
        .collect();
    Ok(format!("byte-identical across two runs: {}", sizes.join(", ")))
}

// 10. .flo format fidelity.
fn flo_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(10);
    for (w, h) in [(1, 1), (7, 3), (64, 48)] {
        // Values representable in f32 survive exactly.
        let f = FlowField::from_fn(w, h, |_, _| {
            (r.gen_range(-50.0f32..50.0) as f64, r.gen_range(-50.0f32..50.0) as f64)
        });
        let path = dir.path().join(format!("f{w}x{h}.flo"));
        write_flo(&path, &f).unwrap();
        let back = read_flo(&path).unwrap();
        let exact = back.u().iter().zip(f.u()).chain(back.v().iter().zip(f.v()))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(back.dims() == (w, h) && exact, || format!("{w}x{h} round trip differs"))?;
        let bytes = std::fs::read(&path).unwrap();
        ensure(encode_flo(&decode_flo(&bytes).unwrap()) == bytes, || "re-encode differs".into())?;
    }

    // Reference file: "PIEH" magic (202021.25 as little-endian f32), width 5,
    // height 2, then interleaved (u, v) pairs in row-major order.
    let mut reference = vec![0x50, 0x49, 0x45, 0x48, 5, 0, 0, 0, 2, 0, 0, 0];
    for i in 0..10 {
        reference.extend_from_slice(&(i as f32 * 0.25).to_le_bytes());
        reference.extend_from_slice(&(-(i as f32)).to_le_bytes());
    }
    ensure(reference[..4] == FLO_MAGIC.to_le_bytes(), || "magic bytes".into())?;
    ensure(f32::from_le_bytes([0x50, 0x49, 0x45, 0x48]) == 202021.25, || "magic value".into())?;
    let path = dir.path().join("reference.flo");
    std::fs::write(&path, &reference).unwrap();
    let f = read_flo(&path).unwrap();
    ensure(f.dims() == (5, 2), || format!("dims {:?}", f.dims()))?;
    ensure(f.get(3, 1) == (2.0, -8.0), || format!("(3, 1) = {:?}", f.get(3, 1)))?;
    ensure(encode_flo(&f) == reference, || "reference re-encode differs".into())?;
    Ok("round trips bit-exact; reference header parses to 5x2".into())
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", gradient_suite),
        (2, "loss minima", loss_minima),
        (3, "warp oracle", warp_oracle),
        (4, "uniform shift recovery", uniform_recovery),
        (5, "rotation/vortex recovery", rotation_vortex_recovery),
        (6, "ablation ordering", ablation_ordering),
        (7, "AEE metric", aee_metric),
        (8, "multi-scale weights", multiscale_weights),
        (9, "determinism", determinism),
        (10, "format fidelity", flo_fidelity),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(reason) => {
                println!("criterion {id:>2} FAIL  {name}: {reason}");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
