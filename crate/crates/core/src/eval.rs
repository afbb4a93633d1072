//! Flow evaluation: endpoint error, dataset discovery, the benchmark and
//! loss-ablation harness, and HSV color coding of flows and error maps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::field::{FlowField, GrayImage};
use crate::io::{read_flo, read_gray_image, write_atomic, RgbImage};
use crate::loss::LossParams;
use crate::synth::{
    render_pair, AnalyticFlow, PairMetadata, ParticleConfig, METADATA_FILE, PAIR_A_FILE,
    PAIR_B_FILE, TRUTH_FILE,
};
use crate::variational::{
    estimate_horn_schunck, estimate_unsupervised, HsConfig, SolverConfig,
};
use crate::xcorr::{estimate_multipass, XcorrConfig};

/// Per-pixel Euclidean distance between estimated and true displacement.
pub fn endpoint_errors(estimate: &FlowField, truth: &FlowField) -> Result<Vec<f64>> {
    check_dims(truth.dims(), estimate.dims())?;
    Ok(estimate
        .u()
        .iter()
        .zip(estimate.v())
        .zip(truth.u().iter().zip(truth.v()))
        .map(|((ue, ve), (ug, vg))| (ue - ug).hypot(ve - vg))
        .collect())
}

/// Average endpoint error in pixels: the mean over pixels of the endpoint
/// distance.
pub fn aee(estimate: &FlowField, truth: &FlowField) -> Result<f64> {
    let errors = endpoint_errors(estimate, truth)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// AEE expressed in pixels per 100 pixels.
pub fn per_100px(aee_px: f64) -> f64 {
    100.0 * aee_px
}

/// One image pair of a dataset; `truth` is absent for estimation-only pairs.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub flow_kind: String,
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub truth: Option<FlowField>,
}

#[derive(Debug, Default)]
struct PairFiles {
    image_a: Option<PathBuf>,
    image_b: Option<PathBuf>,
    truth: Option<PathBuf>,
    metadata: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err(dir))?;
    paths.sort();
    Ok(paths)
}

fn kind_from_id(id: &str) -> String {
    match id.split_once('_') {
        Some((kind, _)) if !kind.is_empty() => kind.to_string(),
        _ => "unknown".to_string(),
    }
}

fn load_entry(id: &str, files: &PairFiles) -> Result<DatasetEntry> {
    let (Some(a), Some(b)) = (&files.image_a, &files.image_b) else {
        return Err(Error::InvalidInput(format!("pair {id} is missing an image")));
    };
    let image_a = read_gray_image(a)?;
    let image_b = read_gray_image(b)?;
    check_dims(image_a.dims(), image_b.dims())?;
    let truth = match &files.truth {
        Some(path) => {
            let flow = read_flo(path)?;
            check_dims(image_a.dims(), flow.dims())?;
            Some(flow)
        }
        None => None,
    };
    let flow_kind = match &files.metadata {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<PairMetadata>(&text)?.flow_kind
        }
        None => kind_from_id(id),
    };
    Ok(DatasetEntry {
        id: id.to_string(),
        flow_kind,
        image_a,
        image_b,
        truth,
    })
}

/// Discovers image pairs under `root`, in lexicographic id order.
///
/// Two layouts are recognized: flat files `<id>_img1.<ext>`,
/// `<id>_img2.<ext>` and optional `<id>_flow.flo`; and subdirectories
/// holding `pair_a.png`, `pair_b.png`, optional `truth.flo` and
/// `metadata.json` (as written by the generator), where the id is the
/// directory name. Entries that fail to load are skipped with a warning.
pub fn load_dataset_dir(root: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::InvalidInput(format!(
            "dataset directory {} does not exist",
            root.display()
        )));
    }
    let mut pairs: BTreeMap<String, PairFiles> = BTreeMap::new();
    for path in sorted_dir(root)? {
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n.to_string(),
            None => continue,
        };
        if path.is_dir() {
            let a = path.join(PAIR_A_FILE);
            if !a.is_file() {
                continue;
            }
            let exists = |f: &str| Some(path.join(f)).filter(|p| p.is_file());
            pairs.insert(
                name,
                PairFiles {
                    image_a: Some(a),
                    image_b: exists(PAIR_B_FILE),
                    truth: exists(TRUTH_FILE),
                    metadata: exists(METADATA_FILE),
                },
            );
            continue;
        }
        let stem = match name.rsplit_once('.') {
            Some((stem, _)) => stem,
            None => continue,
        };
        let slot = if let Some(id) = stem.strip_suffix("_img1") {
            (id, 0)
        } else if let Some(id) = stem.strip_suffix("_img2") {
            (id, 1)
        } else if let Some(id) = name.strip_suffix("_flow.flo") {
            (id, 2)
        } else {
            continue;
        };
        let files = pairs.entry(slot.0.to_string()).or_default();
        let target = match slot.1 {
            0 => &mut files.image_a,
            1 => &mut files.image_b,
            _ => &mut files.truth,
        };
        if target.is_some() {
            log::warn!("{}: duplicate file for pair {}, ignored", path.display(), slot.0);
        } else {
            *target = Some(path.clone());
        }
    }

    let mut entries = Vec::with_capacity(pairs.len());
    for (id, files) in &pairs {
        match load_entry(id, files) {
            Ok(entry) => entries.push(entry),
            Err(e) => log::warn!("skipping pair {id}: {e}"),
        }
    }
    Ok(entries)
}

/// Renders one in-memory entry per (flow, seed), with exact ground truth.
pub fn synthetic_suite(
    flows: &[AnalyticFlow],
    image_size: usize,
    seeds: &[u64],
) -> Result<Vec<DatasetEntry>> {
    let mut entries = Vec::with_capacity(flows.len() * seeds.len());
    for (i, flow) in flows.iter().enumerate() {
        for &seed in seeds {
            let pair = render_pair(flow, &ParticleConfig::new(image_size, seed))?;
            entries.push(DatasetEntry {
                id: format!("{}_{i:03}_s{seed}", flow.kind_name()),
                flow_kind: flow.kind_name().to_string(),
                image_a: pair.image_a,
                image_b: pair.image_b,
                truth: Some(pair.truth),
            });
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unsup,
    Hs,
    Xcorr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Unsup, Method::Hs, Method::Xcorr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unsup => "unsup",
            Method::Hs => "hs",
            Method::Xcorr => "xcorr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unsup" => Ok(Method::Unsup),
            "hs" => Ok(Method::Hs),
            "xcorr" => Ok(Method::Xcorr),
            other => Err(Error::Config(format!(
                "unknown method {other:?}; expected unsup, hs or xcorr"
            ))),
        }
    }
}

/// Tag written in the `loss_config` column for estimators that do not use
/// the unsupervised loss.
pub const NO_LOSS_CONFIG: &str = "-";

/// Term weights for one unsupervised run, tagged by the active terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossConfig {
    pub tag: String,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_c: f64,
}

impl LossConfig {
    /// Tag such as `P+S+C` listing the terms with non-zero weight.
    pub fn from_lambdas(lambda_p: f64, lambda_s: f64, lambda_c: f64) -> Self {
        let tag = [(lambda_p, "P"), (lambda_s, "S"), (lambda_c, "C")]
            .iter()
            .filter(|(l, _)| *l != 0.0)
            .map(|(_, t)| *t)
            .collect::<Vec<_>>()
            .join("+");
        Self {
            tag,
            lambda_p,
            lambda_s,
            lambda_c,
        }
    }

    pub fn from_params(params: &LossParams) -> Self {
        Self::from_lambdas(params.lambda_p, params.lambda_s, params.lambda_c)
    }

    pub fn apply(&self, base: &LossParams) -> LossParams {
        base.with_lambdas(self.lambda_p, self.lambda_s, self.lambda_c)
    }
}

/// The loss-term ablation set: all terms, without consistency, and without
/// smoothness, obtained by zeroing weights of `base`.
pub fn ablation_configs(base: &LossParams) -> Vec<LossConfig> {
    vec![
        LossConfig::from_lambdas(base.lambda_p, base.lambda_s, base.lambda_c),
        LossConfig::from_lambdas(base.lambda_p, base.lambda_s, 0.0),
        LossConfig::from_lambdas(base.lambda_p, 0.0, base.lambda_c),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchJob {
    pub method: Method,
    /// Only set for the unsupervised estimator.
    pub loss_config: Option<LossConfig>,
}

impl BenchJob {
    pub fn loss_tag(&self) -> &str {
        self.loss_config.as_ref().map_or(NO_LOSS_CONFIG, |c| &c.tag)
    }
}

/// One job per method; with `ablation`, the unsupervised method expands into
/// the three ablation configs, otherwise it runs with `base` as is.
pub fn plan_jobs(methods: &[Method], ablation: bool, base: &LossParams) -> Vec<BenchJob> {
    let mut jobs = Vec::new();
    for &method in methods {
        match method {
            Method::Unsup if ablation => {
                jobs.extend(ablation_configs(base).into_iter().map(|c| BenchJob {
                    method,
                    loss_config: Some(c),
                }))
            }
            Method::Unsup => jobs.push(BenchJob {
                method,
                loss_config: Some(LossConfig::from_params(base)),
            }),
            _ => jobs.push(BenchJob {
                method,
                loss_config: None,
            }),
        }
    }
    jobs
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchSettings {
    pub loss: LossParams,
    pub solver: SolverConfig,
    pub hs: HsConfig,
    pub xcorr: XcorrConfig,
    /// Zero all wall-clock fields so reports are byte-reproducible.
    pub strict: bool,
}

/// Runs one estimator on one pair.
pub fn run_method(
    entry: &DatasetEntry,
    job: &BenchJob,
    settings: &BenchSettings,
) -> Result<FlowField> {
    let (a, b) = (&entry.image_a, &entry.image_b);
    match job.method {
        Method::Unsup => {
            let params = match &job.loss_config {
                Some(c) => c.apply(&settings.loss),
                None => settings.loss.clone(),
            };
            Ok(estimate_unsupervised(a, b, &params, &settings.solver)?.forward)
        }
        Method::Hs => estimate_horn_schunck(a, b, &settings.hs),
        Method::Xcorr => Ok(estimate_multipass(a, b, &settings.xcorr)?.dense),
    }
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_NO_TRUTH: &str = "no_truth";

/// One (method, loss config, pair) row. `status` is `ok`, `no_truth`, or
/// `failed: <reason>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub pair_id: String,
    pub flow_kind: String,
    pub method: String,
    pub loss_config: String,
    pub aee_px: Option<f64>,
    pub aee_per100px: Option<f64>,
    pub seconds: f64,
    pub status: String,
}

impl BenchRecord {
    pub fn is_failed(&self) -> bool {
        self.status.starts_with("failed")
    }
}

/// Mean AEE of the scored rows in one (method, loss config, flow kind)
/// group; flow kind `all` pools every kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub loss_config: String,
    pub flow_kind: String,
    pub rows: usize,
    pub scored: usize,
    pub mean_aee_px: Option<f64>,
    pub mean_aee_per100px: Option<f64>,
    pub mean_seconds: f64,
}

pub const ALL_KINDS: &str = "all";

fn aggregate(records: &[BenchRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, String, String), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        for kind in [r.flow_kind.as_str(), ALL_KINDS] {
            groups
                .entry((r.method.clone(), r.loss_config.clone(), kind.to_string()))
                .or_default()
                .push(r);
        }
    }
    groups
        .into_iter()
        .map(|((method, loss_config, flow_kind), rows)| {
            let scored: Vec<f64> = rows.iter().filter_map(|r| r.aee_px).collect();
            let mean_aee_px =
                (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
            Aggregate {
                method,
                loss_config,
                flow_kind,
                rows: rows.len(),
                scored: scored.len(),
                mean_aee_px,
                mean_aee_per100px: mean_aee_px.map(per_100px),
                mean_seconds: rows.iter().map(|r| r.seconds).sum::<f64>() / rows.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Echo of the settings and jobs the report was produced with.
    pub config: serde_json::Value,
    pub records: Vec<BenchRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl EvalReport {
    pub fn from_records(config: serde_json::Value, records: Vec<BenchRecord>) -> Self {
        let aggregates = aggregate(&records);
        Self {
            config,
            records,
            aggregates,
        }
    }

    pub fn aggregate_for(&self, method: &str, loss_config: &str, flow_kind: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.loss_config == loss_config && a.flow_kind == flow_kind)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes the JSON report to `json_path` and the CSV rows next to it.
    pub fn write(&self, json_path: impl AsRef<Path>) -> Result<PathBuf> {
        let json_path = json_path.as_ref();
        let csv_path = csv_path_for(json_path);
        write_atomic(json_path, self.to_json().as_bytes())?;
        write_atomic(&csv_path, self.to_csv()?.as_bytes())?;
        Ok(csv_path)
    }
}

/// `report.json` → `report.csv`.
pub fn csv_path_for(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

pub fn parse_csv_records(text: &str) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

fn score(entry: &DatasetEntry, job: &BenchJob, settings: &BenchSettings) -> BenchRecord {
    let start = Instant::now();
    let outcome = run_method(entry, job, settings);
    let seconds = if settings.strict {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    let (aee_px, status) = match outcome {
        Ok(flow) => match &entry.truth {
            Some(truth) => match aee(&flow, truth) {
                Ok(e) => (Some(e), STATUS_OK.to_string()),
                Err(e) => (None, format!("failed: {e}")),
            },
            None => (None, STATUS_NO_TRUTH.to_string()),
        },
        Err(e) => {
            log::warn!("{} on {} failed: {e}", job.method, entry.id);
            (None, format!("failed: {e}"))
        }
    };
    BenchRecord {
        pair_id: entry.id.clone(),
        flow_kind: entry.flow_kind.clone(),
        method: job.method.name().to_string(),
        loss_config: job.loss_tag().to_string(),
        aee_px,
        aee_per100px: aee_px.map(per_100px),
        seconds,
        status,
    }
}

/// Scores every job on every pair. Rows are ordered job-major, then by
/// dataset order. A failing estimator yields a failed row; the run goes on.
/// Pairs are processed concurrently; each row depends only on its inputs.
pub fn run_benchmark(
    dataset: &[DatasetEntry],
    jobs: &[BenchJob],
    settings: &BenchSettings,
    out: Option<&Path>,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset contains no image pairs".into()));
    }
    if jobs.is_empty() {
        return Err(Error::InvalidInput("no methods selected".into()));
    }
    let work: Vec<(&BenchJob, &DatasetEntry)> = jobs
        .iter()
        .flat_map(|j| dataset.iter().map(move |e| (j, e)))
        .collect();
    let records: Vec<BenchRecord> = work
        .par_iter()
        .map(|(job, entry)| score(entry, job, settings))
        .collect();
    let config = serde_json::json!({
        "settings": settings,
        "jobs": jobs,
        "pairs": dataset.len(),
    });
    let report = EvalReport::from_records(config, records);
    if let Some(path) = out {
        report.write(path)?;
    }
    Ok(report)
}

/// Saturation scale for color coding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxMagnitude {
    /// 99th percentile of the magnitudes being coded.
    Auto,
    Fixed(f64),
}

impl FromStr for MaxMagnitude {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "auto" {
            return Ok(MaxMagnitude::Auto);
        }
        match s.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(MaxMagnitude::Fixed(v)),
            _ => Err(Error::Config(format!(
                "max magnitude must be \"auto\" or a positive number, got {s:?}"
            ))),
        }
    }
}

/// Nearest-rank 99th percentile; 0 for an empty slice.
pub fn percentile99(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.99 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn resolve_max(max: MaxMagnitude, magnitudes: &[f64]) -> f64 {
    match max {
        MaxMagnitude::Auto => percentile99(magnitudes),
        MaxMagnitude::Fixed(m) => m,
    }
}

/// Direction of `(u, v)` in degrees on `[0, 360)`. Vectors in the lower
/// half-plane are folded onto the upper one and offset by 180°, so negating
/// a vector shifts its hue by exactly 180°.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    let upper = |u: f64, v: f64| v.atan2(u).to_degrees().min(180f64.next_down());
    if v > 0.0 || (v == 0.0 && u >= 0.0) {
        upper(u, v)
    } else {
        180.0 + upper(-u, -v)
    }
}

/// HSV (hue in degrees, saturation and value on `[0, 1]`) to RGB.
pub fn hsv_to_rgb(hue: f64, saturation: f64, value: f64) -> [f64; 3] {
    let c = value * saturation;
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = value - c;
    [r + m, g + m, b + m]
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn saturation(magnitude: f64, max: f64) -> f64 {
    if max > 0.0 {
        (magnitude / max).min(1.0)
    } else {
        0.0
    }
}

/// Color wheel coding: hue from direction, saturation from magnitude relative
/// to `max_magnitude`, full value. Zero flow is white.
pub fn flow_to_color(flow: &FlowField, max_magnitude: MaxMagnitude) -> RgbImage {
    let magnitudes = flow.magnitudes();
    let max = resolve_max(max_magnitude, &magnitudes);
    let mut data = Vec::with_capacity(3 * flow.len());
    for ((&u, &v), &m) in flow.u().iter().zip(flow.v()).zip(&magnitudes) {
        data.extend(hsv_to_rgb(flow_hue(u, v), saturation(m, max), 1.0).map(to_u8));
    }
    RgbImage {
        width: flow.width(),
        height: flow.height(),
        data,
    }
}

/// Endpoint-error map: white where the error is zero, saturating to red as
/// the error reaches `max_error`.
pub fn error_map(estimate: &FlowField, truth: &FlowField, max_error: MaxMagnitude) -> Result<RgbImage> {
    let errors = endpoint_errors(estimate, truth)?;
    let max = resolve_max(max_error, &errors);
    let mut data = Vec::with_capacity(3 * errors.len());
    for &e in &errors {
        data.extend(hsv_to_rgb(0.0, saturation(e, max), 1.0).map(to_u8));
    }
    Ok(RgbImage {
        width: truth.width(),
        height: truth.height(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aee_examples() {
        let t = FlowField::from_fn(8, 6, |x, y| (x as f64 * 0.3, -(y as f64)));
        assert_eq!(aee(&t, &t).unwrap(), 0.0);
        let shifted = t.add(&FlowField::constant(8, 6, 1.0, 0.0)).unwrap();
        let e = aee(&shifted, &t).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        assert!((per_100px(e) - 100.0).abs() < 1e-10);
        let z = FlowField::zeros(4, 4);
        assert_eq!(aee(&FlowField::constant(4, 4, 3.0, 4.0), &z).unwrap(), 5.0);
        assert!(aee(&z, &FlowField::zeros(4, 5)).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile99(&v), 99.0);
        assert_eq!(percentile99(&[3.0]), 3.0);
        assert_eq!(percentile99(&[]), 0.0);
    }

    #[test]
    fn hue_examples() {
        assert_eq!(flow_hue(1.0, 0.0), 0.0);
        assert_eq!(flow_hue(-1.0, 0.0), 180.0);
        assert!((flow_hue(0.0, 2.0) - 90.0).abs() < 1e-12);
        assert!((flow_hue(0.0, -2.0) - 270.0).abs() < 1e-12);
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(123.0, 0.0, 1.0), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_flow_is_white_and_full_saturation_is_red() {
        let img = flow_to_color(&FlowField::zeros(5, 3), MaxMagnitude::Auto);
        assert!(img.data.iter().all(|&c| c == 255));
        let img = flow_to_color(&FlowField::constant(5, 3, 2.0, 0.0), MaxMagnitude::Fixed(2.0));
        assert_eq!(img.pixel(4, 2), [255, 0, 0]);
    }

    #[test]
    fn loss_config_tags() {
        let p = LossParams::default();
        let tags: Vec<String> = ablation_configs(&p).into_iter().map(|c| c.tag).collect();
        assert_eq!(tags, ["P+S+C", "P+S", "P+C"]);
        let jobs = plan_jobs(&Method::ALL, true, &p);
        assert_eq!(jobs.len(), 5);
        assert_eq!(plan_jobs(&Method::ALL, false, &p).len(), 3);
        assert_eq!(plan_jobs(&[Method::Hs], true, &p)[0].loss_tag(), NO_LOSS_CONFIG);
    }

    #[test]
    fn methods_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("lk".parse::<Method>().is_err());
    }
}
