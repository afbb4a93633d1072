//! `unpiv`: estimate, generate, benchmark and visualize particle-image flow.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use unpiv_core::config::{strict_from_env, KeyValueConfig};
use unpiv_core::eval::{
    error_map, flow_to_color, load_dataset_dir, plan_jobs, run_benchmark, BenchSettings,
    MaxMagnitude, Method,
};
use unpiv_core::io::{read_flo, read_gray_image, write_atomic, write_flo, write_rgb_png};
use unpiv_core::loss::{LossParams, LOSS_CONFIG_KEYS};
use unpiv_core::synth::{
    flow_stats, render_pair, write_pair_dir, AnalyticFlow, PairMetadata, ParticleConfig,
    FLOW_GRAMMAR, TYPICAL_MAX_DISPLACEMENT,
};
use unpiv_core::variational::{
    estimate_horn_schunck, estimate_unsupervised, solve_trace_report, HsConfig, SolverConfig,
    HS_CONFIG_KEYS, SOLVER_CONFIG_KEYS,
};
use unpiv_core::xcorr::{estimate_multipass, XcorrConfig, XCORR_CONFIG_KEYS};

#[derive(Parser)]
#[command(name = "unpiv", version, about = "Dense flow estimation for particle image velocimetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the flow from image A to image B and write it as .flo.
    Estimate(EstimateArgs),
    /// Render a synthetic particle image pair with exact ground truth.
    Generate(GenerateArgs),
    /// Score estimators on a dataset directory; writes JSON and CSV reports.
    Bench(BenchArgs),
    /// Color-code a flow field, or its endpoint error against a truth field.
    Viz(VizArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Unsupervised loss minimized coarse to fine with Adam.
    Unsup,
    /// Horn–Schunck.
    Hs,
    /// Multi-pass window-deformation cross-correlation.
    Xcorr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Unsup => Method::Unsup,
            MethodArg::Hs => Method::Hs,
            MethodArg::Xcorr => Method::Xcorr,
        }
    }
}

#[derive(Args)]
struct ParamArgs {
    /// key = value parameter file (loss, solver, hs_*, and correlation keys).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one parameter, e.g. `--set step_size=1.5`; repeatable, wins
    /// over --config.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    overrides: Vec<(String, String)>,
}

#[derive(Args)]
struct EstimateArgs {
    /// First frame (PNG, PGM or TIFF).
    #[arg(long, value_name = "IMAGE")]
    a: PathBuf,
    /// Second frame.
    #[arg(long, value_name = "IMAGE")]
    b: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Output .flo path.
    #[arg(long, value_name = "FLO")]
    out: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    /// Solver trace JSON (unsup only).
    #[arg(long, value_name = "JSON")]
    trace: Option<PathBuf>,
    /// Color-coded PNG of the estimate.
    #[arg(long, value_name = "PNG")]
    viz: Option<PathBuf>,
    /// Sparse window vectors as CSV (xcorr only).
    #[arg(long, value_name = "CSV")]
    sparse: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Flow spec: uniform:DX,DY | rotation:OMEGA | vortex:CIRCULATION,CORE_RADIUS
    /// | shear:RATE | sinusoid:AMPLITUDE,WAVELENGTH. Centers are the image middle.
    #[arg(long, value_name = "SPEC", value_parser = parse_flow_spec)]
    flow: String,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// RNG seed for particle placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Particles per image; defaults to 0.05 per pixel.
    #[arg(long)]
    particles: Option<usize>,
    /// Particle Gaussian sigma in pixels.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Output directory for pair_a.png, pair_b.png, truth.flo, metadata.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of `<id>_img1/_img2/_flow.flo` files or generated pair
    /// subdirectories.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Comma-separated methods.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "unsup,hs,xcorr")]
    methods: Vec<MethodArg>,
    /// Run unsup with each loss ablation: P+S+C, P+S, P+C.
    #[arg(long)]
    ablation: bool,
    /// JSON report path; the CSV is written alongside with a .csv extension.
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct VizArgs {
    /// Flow to visualize.
    #[arg(long, value_name = "FLO")]
    flow: PathBuf,
    /// Ground truth; switches to an endpoint-error map (white = zero error).
    #[arg(long, value_name = "FLO")]
    truth: Option<PathBuf>,
    /// Output PNG.
    #[arg(long, value_name = "PNG")]
    out: PathBuf,
    /// Saturation scale: `auto` (99th percentile) or a value in pixels.
    #[arg(long, value_name = "auto|X", default_value = "auto", value_parser = parse_max_mag)]
    max_mag: MaxMagnitude,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected KEY=VALUE, got {s:?}")),
    }
}

fn parse_flow_spec(s: &str) -> std::result::Result<String, String> {
    AnalyticFlow::parse_spec(s, 256)
        .map(|_| s.to_string())
        .map_err(|_| format!("unparseable flow spec; grammar: {FLOW_GRAMMAR}"))
}

fn parse_max_mag(s: &str) -> std::result::Result<MaxMagnitude, String> {
    s.parse().map_err(|e: unpiv_core::Error| e.to_string())
}

/// Estimator parameters from defaults, then the config file, then `--set`.
struct Params {
    loss: LossParams,
    solver: SolverConfig,
    hs: HsConfig,
    xcorr: XcorrConfig,
}

fn load_params(args: &ParamArgs) -> Result<Params> {
    let mut cfg = match &args.config {
        Some(path) => KeyValueConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => KeyValueConfig::default(),
    };
    for (k, v) in &args.overrides {
        cfg.set(k, v);
    }
    let known: Vec<&str> = [LOSS_CONFIG_KEYS, SOLVER_CONFIG_KEYS, HS_CONFIG_KEYS, XCORR_CONFIG_KEYS]
        .concat();
    cfg.reject_unknown(&known)?;
    Ok(Params {
        loss: LossParams::default().apply_config(&cfg)?,
        solver: SolverConfig::default().apply_config(&cfg)?,
        hs: HsConfig::default().apply_config(&cfg)?,
        xcorr: XcorrConfig::default().apply_config(&cfg)?,
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let method = Method::from(args.method);
    if args.trace.is_some() && method != Method::Unsup {
        bail!("--trace is only available with --method unsup");
    }
    if args.sparse.is_some() && method != Method::Xcorr {
        bail!("--sparse is only available with --method xcorr");
    }
    let params = load_params(&args.params)?;
    let a = read_gray_image(&args.a)?;
    let b = read_gray_image(&args.b)?;
    if a.dims() != b.dims() {
        bail!(
            "image sizes differ: {} is {}x{}, {} is {}x{}",
            args.a.display(),
            a.width(),
            a.height(),
            args.b.display(),
            b.width(),
            b.height()
        );
    }
    let flow = match method {
        Method::Unsup => {
            let trace = estimate_unsupervised(&a, &b, &params.loss, &params.solver)?;
            if let Some(path) = &args.trace {
                let report = solve_trace_report(&trace, &params.loss, Some(&path_str(&args.out)));
                let mut json = report.to_json();
                json.push('\n');
                write_atomic(path, json.as_bytes())?;
            }
            trace.forward
        }
        Method::Hs => estimate_horn_schunck(&a, &b, &params.hs)?,
        Method::Xcorr => {
            let result = estimate_multipass(&a, &b, &params.xcorr)?;
            if let Some(path) = &args.sparse {
                write_atomic(path, result.sparse.to_csv().as_bytes())?;
            }
            result.dense
        }
    };
    write_flo(&args.out, &flow)?;
    if let Some(path) = &args.viz {
        write_rgb_png(path, &flow_to_color(&flow, MaxMagnitude::Auto))?;
    }
    log::info!(
        "{} flow written to {} (mean |flow| {:.4} px)",
        method,
        args.out.display(),
        flow.mean_magnitude()
    );
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let flow = AnalyticFlow::parse_spec(&args.flow, args.size)?;
    let mut config = ParticleConfig::new(args.size, args.seed);
    if let Some(n) = args.particles {
        config.particle_count = n;
    }
    config.particle_sigma = args.sigma;
    let stats = flow_stats(&flow, args.size);
    if stats.max_magnitude > TYPICAL_MAX_DISPLACEMENT {
        log::warn!(
            "max displacement {:.3} px exceeds the typical regime |dx| in [0, {}] px; generating anyway",
            stats.max_magnitude,
            TYPICAL_MAX_DISPLACEMENT
        );
    }
    let pair = render_pair(&flow, &config)?;
    write_pair_dir(&args.out, &pair, &PairMetadata::new(&flow, &config))?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let params = load_params(&args.params)?;
    let dataset = load_dataset_dir(&args.dataset)?;
    if dataset.is_empty() {
        bail!(
            "no image pairs found in {} (expected <id>_img1.*/<id>_img2.* files or pair_a.png/pair_b.png subdirectories)",
            args.dataset.display()
        );
    }
    let mut methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    methods.dedup();
    let jobs = plan_jobs(&methods, args.ablation, &params.loss);
    let settings = BenchSettings {
        loss: params.loss,
        solver: params.solver,
        hs: params.hs,
        xcorr: params.xcorr,
        strict: strict_from_env(),
    };
    let report = run_benchmark(&dataset, &jobs, &settings, Some(&args.out))?;
    for a in report.aggregates.iter().filter(|a| a.flow_kind == "all") {
        let aee = a
            .mean_aee_px
            .map_or("n/a".to_string(), |v| format!("{v:.4} px ({:.2} per 100 px)", 100.0 * v));
        println!(
            "{:<6} {:<6} {} scored / {} rows, mean AEE {}",
            a.method, a.loss_config, a.scored, a.rows, aee
        );
    }
    let failed = report.records.iter().filter(|r| r.is_failed()).count();
    if failed > 0 {
        log::warn!("{failed} row(s) failed; see the report status column");
    }
    Ok(())
}

fn cmd_viz(args: VizArgs) -> Result<()> {
    let flow = read_flo(&args.flow)?;
    let image = match &args.truth {
        Some(path) => error_map(&flow, &read_flo(path)?, args.max_mag)?,
        None => flow_to_color(&flow, args.max_mag),
    };
    write_rgb_png(&args.out, &image)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Viz(a) => cmd_viz(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
