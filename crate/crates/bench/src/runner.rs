//! Runs experiments: one optimization per config, metrics at every
//! checkpoint, artifacts on disk, and an [`ExperimentRecord`] per run.
//!
//! A batch runs on a fixed-size worker pool. Workers pull config indices
//! from a shared counter and send finished records over a channel to the
//! calling thread, which puts them back in config order. A run that fails
//! (diverges, runs out of budget, panics, or hits bad input) still yields a
//! record; only an unusable output directory aborts the batch.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nst_core::arch::{
    build_arch, decode_weight_file, init_weights, weights_from_entries, ArchName, WeightScheme, WeightedGraph,
};
use nst_core::metrics::{mse, perceptual_distance, psnr_from_mse, ssim, PerceptualConfig, PsnrParams, SsimParams};
use nst_core::nst::{optimize, Clock, TraceRow};
use nst_core::tensor::ImageTensor;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ImageSource, Tag, WeightSource};
use crate::error::{BenchError, Result};
use crate::image_io::{load_image, save_png, save_raw};
use crate::patterns::render;
use crate::profile::{machine_fingerprint, MachineFingerprint};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "NST_BENCH_THREADS";

/// How SSIM collapses RGB; recorded with every run.
pub const SSIM_MODE: &str = "luma_bt601";

/// File listing one JSON record per line, in config order.
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Run artifacts go to `out_dir/runs/<index>-<name>/`.
    pub out_dir: PathBuf,
    /// Requested workers; capped by [`THREADS_ENV`] and the batch size.
    pub parallel: usize,
    /// Wall-clock budget per run; an exhausted budget fails that run only.
    pub budget_seconds: Option<f64>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            parallel: 1,
            budget_seconds: None,
        }
    }
}

/// `requested` workers (at least one), capped by `NST_BENCH_THREADS` when it
/// holds a positive integer.
pub fn worker_count(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let n = requested.max(1);
    cap.map_or(n, |c| n.min(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// The loss or its gradient became non-finite.
    Diverged,
    /// Bad input, exhausted budget, or a crash.
    Failed,
}

/// Output-vs-content quality of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub ssim: f64,
    /// `None` when the output equals the content exactly (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub mse: f64,
    pub deep_feature_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    /// Loss measured before this epoch's update.
    pub total_loss: f64,
    pub content_loss: f64,
    pub style_loss: f64,
    pub metrics: ImageMetrics,
    /// PNG and raw f32 images, relative to the batch output directory.
    pub png: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub index: usize,
    pub name: String,
    pub fingerprint: String,
    pub arch: ArchName,
    pub tag: Tag,
    pub status: RunStatus,
    /// Set for diverged runs.
    pub diverged_at_epoch: Option<usize>,
    pub failure: Option<String>,
    /// Tap ordinals actually used after projection onto `arch`'s registry.
    pub content_tap: Option<usize>,
    pub style_taps: Vec<usize>,
    /// Final image vs content; `None` when the run did not finish.
    pub metrics: Option<ImageMetrics>,
    pub checkpoints: Vec<CheckpointRecord>,
    /// Why any metric above is null.
    pub null_reasons: BTreeMap<String, String>,
    /// Loss at the first and the last logged epoch.
    pub first_logged_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// Optimization wall time; excludes image loading and metric evaluation.
    pub training_seconds: f64,
    pub started_at_unix_s: f64,
    pub finished_at_unix_s: f64,
    /// Loss trace and per-epoch wall times, relative to the batch output
    /// directory.
    pub trace_csv: Option<String>,
    pub trace_timing_csv: Option<String>,
    pub ssim_mode: String,
    pub machine: MachineFingerprint,
    pub config: ExperimentConfig,
}

impl ExperimentRecord {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// The record with wall-clock fields zeroed; equal across reruns of the
    /// same config on the same build.
    pub fn without_timing(&self) -> Self {
        ExperimentRecord {
            training_seconds: 0.0,
            started_at_unix_s: 0.0,
            finished_at_unix_s: 0.0,
            ..self.clone()
        }
    }
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

struct WallClock {
    start: Instant,
    budget: Option<f64>,
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn budget_exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.seconds() > b)
    }
}

pub fn load_source(source: &ImageSource, size: usize) -> Result<ImageTensor<f32>> {
    match source {
        ImageSource::File(path) => load_image(path, size),
        ImageSource::Pattern { pattern, seed } => Ok(render(*pattern, *seed, size)),
    }
}

pub fn load_weighted(arch: ArchName, source: &WeightSource) -> Result<WeightedGraph> {
    let graph = build_arch(arch)?;
    match source {
        WeightSource::Random(seed) => Ok(init_weights(graph, WeightScheme::Random { seed: *seed })?),
        WeightSource::File(path) => {
            let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
            let entries = decode_weight_file(&bytes)?;
            let set = weights_from_entries(&graph, entries)?;
            Ok(WeightedGraph::new(graph, set)?)
        }
    }
}

/// Deep-feature distance backbone plus its tap configuration.
pub struct PerceptualModel {
    graph: WeightedGraph,
    config: PerceptualConfig,
}

impl PerceptualModel {
    pub fn load(spec: &crate::config::PerceptualSpec) -> Result<Self> {
        let graph = load_weighted(spec.arch, &spec.weights)?;
        let mut config = PerceptualConfig::all_taps(spec.arch, graph.graph().taps().len());
        if !spec.taps.is_empty() {
            config.taps = spec.taps.clone();
            config.weights = vec![1.0 / spec.taps.len() as f64; spec.taps.len()];
        }
        if !spec.tap_weights.is_empty() {
            config.weights = spec.tap_weights.clone();
        }
        config.validate(&graph)?;
        Ok(PerceptualModel { graph, config })
    }

    pub fn distance(&self, x: &ImageTensor<f32>, y: &ImageTensor<f32>) -> Result<f64> {
        Ok(perceptual_distance(x, y, &self.config, &self.graph)?)
    }
}

pub fn image_metrics(
    output: &ImageTensor<f32>,
    content: &ImageTensor<f32>,
    perceptual: &PerceptualModel,
) -> Result<ImageMetrics> {
    let m = mse(output, content)?;
    let p = psnr_from_mse(m, &PsnrParams::default());
    Ok(ImageMetrics {
        ssim: ssim(output, content, &SsimParams::default())?,
        psnr_db: p.is_finite().then_some(p),
        mse: m,
        deep_feature_distance: perceptual.distance(output, content)?,
    })
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    total_loss: f64,
    content_loss: f64,
    style_loss: f64,
}

#[derive(Serialize)]
struct WallRow {
    epoch: usize,
    wall_seconds: f64,
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let fail = |e: csv::Error| BenchError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

/// Writes the loss trace (deterministic) and the wall times (not) as two
/// CSV files.
pub fn write_trace(loss_path: &Path, wall_path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_csv(
        loss_path,
        rows.iter().map(|r| LossRow {
            epoch: r.epoch,
            total_loss: r.total_loss,
            content_loss: r.content_loss,
            style_loss: r.style_loss,
        }),
    )?;
    write_csv(
        wall_path,
        rows.iter().map(|r| WallRow {
            epoch: r.epoch,
            wall_seconds: r.wall_seconds,
        }),
    )
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}

/// Runs one experiment. Never fails: problems end up in the record.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    index: usize,
    opts: &RunOptions,
    machine: &MachineFingerprint,
) -> ExperimentRecord {
    let mut record = ExperimentRecord {
        index,
        name: cfg.name.clone(),
        fingerprint: cfg.fingerprint(),
        arch: cfg.arch,
        tag: cfg.tag,
        status: RunStatus::Ok,
        diverged_at_epoch: None,
        failure: None,
        content_tap: None,
        style_taps: Vec::new(),
        metrics: None,
        checkpoints: Vec::new(),
        null_reasons: BTreeMap::new(),
        first_logged_loss: None,
        final_loss: None,
        training_seconds: 0.0,
        started_at_unix_s: unix_seconds(),
        finished_at_unix_s: 0.0,
        trace_csv: None,
        trace_timing_csv: None,
        ssim_mode: SSIM_MODE.into(),
        machine: machine.clone(),
        config: cfg.clone(),
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| execute(cfg, index, opts, &mut record)));
    let failure = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(BenchError::Core(nst_core::Error::Divergence { epoch, loss }))) => {
            record.status = RunStatus::Diverged;
            record.diverged_at_epoch = Some(epoch);
            Some(format!("diverged at epoch {epoch} (loss = {loss})"))
        }
        Ok(Err(e)) => {
            record.status = RunStatus::Failed;
            Some(e.to_string())
        }
        Err(panic) => {
            record.status = RunStatus::Failed;
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Some(format!("panicked: {msg}"))
        }
    };
    if let Some(reason) = &failure {
        if record.metrics.is_none() {
            record.null_reasons.insert("metrics".into(), reason.clone());
        }
    }
    record.failure = failure;
    record.finished_at_unix_s = unix_seconds().max(record.started_at_unix_s);
    record
}

fn execute(cfg: &ExperimentConfig, index: usize, opts: &RunOptions, record: &mut ExperimentRecord) -> Result<()> {
    let content = load_source(&cfg.content, cfg.image_size)?;
    let style = load_source(&cfg.style, cfg.image_size)?;
    let graph = load_weighted(cfg.arch, &cfg.weights)?;
    let perceptual = PerceptualModel::load(&cfg.perceptual)?;

    let taps = graph.graph().taps();
    let content_tap = taps.project(cfg.content_layer);
    let style_taps: Vec<usize> = cfg.style_layers.iter().map(|&l| taps.project(l)).collect();
    record.content_tap = Some(content_tap);
    record.style_taps = style_taps.clone();
    let weights = cfg.loss_weights_for(&style_taps);
    let optim = cfg.optim_config(content_tap, style_taps);

    let run_dir = opts.out_dir.join("runs").join(format!("{index:03}-{}", slug(&cfg.name)));
    fs::create_dir_all(&run_dir).map_err(|e| BenchError::io(&run_dir, e))?;

    let clock = WallClock {
        start: Instant::now(),
        budget: opts.budget_seconds,
    };
    let result = optimize(&content, &style, &graph, &weights, &optim, &clock);
    record.training_seconds = clock.seconds();
    let result = result?;

    let rows = &result.trace.rows;
    record.first_logged_loss = rows.first().map(|r| r.total_loss);
    record.final_loss = rows.last().map(|r| r.total_loss);
    let (loss_csv, wall_csv) = (run_dir.join("trace.csv"), run_dir.join("trace_timing.csv"));
    write_trace(&loss_csv, &wall_csv, rows)?;
    record.trace_csv = Some(relative(&loss_csv, &opts.out_dir));
    record.trace_timing_csv = Some(relative(&wall_csv, &opts.out_dir));

    for cp in &result.trace.checkpoints {
        let row = rows
            .iter()
            .find(|r| r.epoch == cp.epoch)
            .ok_or_else(|| nst_core::Error::Internal(format!("no trace row for checkpoint {}", cp.epoch)))?;
        let png = run_dir.join(format!("epoch_{:05}.png", cp.epoch));
        let raw = run_dir.join(format!("epoch_{:05}.raw", cp.epoch));
        save_png(&png, &cp.image)?;
        save_raw(&raw, &cp.image)?;
        record.checkpoints.push(CheckpointRecord {
            epoch: cp.epoch,
            total_loss: row.total_loss,
            content_loss: row.content_loss,
            style_loss: row.style_loss,
            metrics: image_metrics(&cp.image, &content, &perceptual)?,
            png: relative(&png, &opts.out_dir),
            raw: relative(&raw, &opts.out_dir),
        });
    }
    save_png(&run_dir.join("output.png"), &result.image)?;
    let metrics = image_metrics(&result.image, &content, &perceptual)?;
    if metrics.psnr_db.is_none() {
        record
            .null_reasons
            .insert("psnr_db".into(), "infinite: output identical to content".into());
    }
    record.metrics = Some(metrics);
    Ok(())
}

/// Runs `configs` on a worker pool and returns their records in config
/// order. Fails only when the output directory cannot be written.
pub fn run_batch(configs: &[ExperimentConfig], opts: &RunOptions) -> Result<Vec<ExperimentRecord>> {
    let runs = opts.out_dir.join("runs");
    fs::create_dir_all(&runs).map_err(|e| BenchError::io(&runs, e))?;
    tempfile::tempfile_in(&runs).map_err(|e| BenchError::io(&runs, e))?;

    let workers = worker_count(opts.parallel).min(configs.len()).max(1);
    let machine = machine_fingerprint(workers);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, ExperimentRecord)>();
    let mut slots: Vec<Option<ExperimentRecord>> = vec![None; configs.len()];
    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, machine) = (&next, &machine);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                if tx.send((i, run_experiment(cfg, i, opts, machine))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, record) in rx {
            slots[i] = Some(record);
        }
    });
    Ok(slots.into_iter().map(|r| r.expect("every config yields a record")).collect())
}

/// Writes records as JSON lines.
pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| BenchError::format(path, e.to_string()))?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// Reads `dir/records.jsonl`, or `dir` itself when it is a file.
pub fn read_records(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let path = if dir.is_dir() { dir.join(RECORDS_FILE) } else { dir.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| BenchError::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BenchError::format(&path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}
