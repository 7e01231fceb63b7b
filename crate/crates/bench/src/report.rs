//! Report bundle: per-group summary, ANOVA and pairwise tests per metric,
//! the cost table, box plots, and a manifest tying the files together.
//!
//! CSV and SVG outputs depend only on the records' deterministic fields.
//! Wall-clock data goes to `training_time.csv` and `forward_time.csv`, and
//! the generation time only to `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nst_core::cost::CostReport;
use nst_core::stats::{eta_squared, one_way_anova, pairwise_tests, SampleGroup};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};
use crate::runner::{ExperimentRecord, RunStatus, SSIM_MODE};
use crate::svg::box_plot;

/// Which record field splits the groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Arch,
    Tag,
}

/// The four quality metrics, in report column order.
pub const METRICS: [&str; 4] = ["ssim", "psnr_db", "deep_feature_distance", "mse"];

fn metric_value(r: &ExperimentRecord, metric: &str) -> Option<f64> {
    let m = r.metrics?;
    match metric {
        "ssim" => Some(m.ssim),
        "psnr_db" => m.psnr_db,
        "deep_feature_distance" => Some(m.deep_feature_distance),
        "mse" => Some(m.mse),
        _ => None,
    }
}

fn group_key(r: &ExperimentRecord, by: GroupBy) -> (usize, String) {
    match by {
        GroupBy::Arch => (r.arch as usize, r.arch.to_string()),
        GroupBy::Tag => (r.tag as usize, r.tag.as_str().to_string()),
    }
}

/// Records split by group, in the group enum's declaration order.
fn grouped(records: &[ExperimentRecord], by: GroupBy) -> Vec<(String, Vec<&ExperimentRecord>)> {
    let mut map: BTreeMap<(usize, String), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        map.entry(group_key(r, by)).or_default().push(r);
    }
    map.into_iter().map(|((_, label), rs)| (label, rs)).collect()
}

/// Values of `metric` per group, successful runs only, in record order.
pub fn metric_groups(records: &[ExperimentRecord], by: GroupBy, metric: &str) -> Vec<SampleGroup> {
    grouped(records, by)
        .into_iter()
        .map(|(label, rs)| {
            let values = rs
                .iter()
                .filter(|r| r.status == RunStatus::Ok)
                .filter_map(|r| metric_value(r, metric))
                .collect();
            SampleGroup::new(label, values)
        })
        .collect()
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    (Some(mean), sd)
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    group: String,
    n: usize,
    n_failed: usize,
    ssim_mean: Option<f64>,
    ssim_sd: Option<f64>,
    psnr_db_mean: Option<f64>,
    psnr_db_sd: Option<f64>,
    deep_feature_distance_mean: Option<f64>,
    deep_feature_distance_sd: Option<f64>,
    mse_mean: Option<f64>,
    mse_sd: Option<f64>,
}

#[derive(Debug, Serialize)]
struct AnovaRow {
    metric: &'static str,
    groups: usize,
    df_between: usize,
    df_within: usize,
    ss_between: f64,
    ss_within: f64,
    ss_total: f64,
    ms_between: f64,
    ms_within: f64,
    f: f64,
    p: f64,
    eta_squared: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PairwiseRow {
    metric: &'static str,
    group_a: String,
    group_b: String,
    mean_diff: f64,
    t: f64,
    df: usize,
    p: f64,
    cohens_d: Option<f64>,
    significant: bool,
    p_bonferroni: f64,
}

#[derive(Debug, Serialize)]
struct CostRow<'a> {
    arch: &'a str,
    input_size: usize,
    params_millions: f64,
    flops_giga: f64,
    up_to_tap: usize,
    flops_giga_up_to_tap: f64,
    activation_mem_gb: f64,
}

#[derive(Debug, Serialize)]
struct TrainingTimeRow<'a> {
    index: usize,
    name: &'a str,
    group: String,
    status: RunStatus,
    training_seconds: f64,
}

#[derive(Debug, Serialize)]
struct ForwardTimeRow<'a> {
    arch: &'a str,
    input_size: usize,
    forward_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub kind: String,
    pub sha256: String,
    /// Same bytes on every rerun of the same configs.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generated_at_unix_s: f64,
    pub group_by: GroupBy,
    pub records: usize,
    pub ok: usize,
    pub diverged: usize,
    pub failed: usize,
    pub files: Vec<ManifestFile>,
    /// Analyses that could not be computed, with the reason.
    pub skipped: Vec<String>,
    pub conventions: BTreeMap<String, String>,
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>, header: &[&str]) -> Result<Vec<u8>> {
    let fail = |e: csv::Error| BenchError::Format {
        path: PathBuf::from("<csv>"),
        message: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    // Headers are written explicitly so empty tables still have them.
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| BenchError::Format {
        path: PathBuf::from("<csv>"),
        message: e.to_string(),
    })
}

struct Bundle {
    files: Vec<(String, &'static str, bool, Vec<u8>)>,
    skipped: Vec<String>,
}

impl Bundle {
    fn add(&mut self, name: &str, kind: &'static str, deterministic: bool, bytes: Vec<u8>) {
        self.files.push((name.to_string(), kind, deterministic, bytes));
    }
}

fn build(records: &[ExperimentRecord], costs: &[CostReport], by: GroupBy) -> Result<Bundle> {
    let mut b = Bundle {
        files: Vec::new(),
        skipped: Vec::new(),
    };
    let groups = grouped(records, by);

    let summary = groups.iter().map(|(label, rs)| {
        let ok: Vec<&&ExperimentRecord> = rs.iter().filter(|r| r.status == RunStatus::Ok).collect();
        let stat = |m: &str| mean_sd(&ok.iter().filter_map(|r| metric_value(r, m)).collect::<Vec<_>>());
        let (ssim_mean, ssim_sd) = stat("ssim");
        let (psnr_db_mean, psnr_db_sd) = stat("psnr_db");
        let (dfd_mean, dfd_sd) = stat("deep_feature_distance");
        let (mse_mean, mse_sd) = stat("mse");
        SummaryRow {
            group: label.clone(),
            n: ok.len(),
            n_failed: rs.len() - ok.len(),
            ssim_mean,
            ssim_sd,
            psnr_db_mean,
            psnr_db_sd,
            deep_feature_distance_mean: dfd_mean,
            deep_feature_distance_sd: dfd_sd,
            mse_mean,
            mse_sd,
        }
    });
    let header = [
        "group", "n", "n_failed", "ssim_mean", "ssim_sd", "psnr_db_mean", "psnr_db_sd",
        "deep_feature_distance_mean", "deep_feature_distance_sd", "mse_mean", "mse_sd",
    ];
    b.add("summary.csv", "summary", true, csv_bytes(summary, &header)?);

    let mut anova = Vec::new();
    let mut pairwise = Vec::new();
    for metric in METRICS {
        let samples = metric_groups(records, by, metric);
        match one_way_anova(&samples) {
            Ok(t) => anova.push(AnovaRow {
                metric,
                groups: samples.len(),
                df_between: t.df_between,
                df_within: t.df_within,
                ss_between: t.ss_between,
                ss_within: t.ss_within,
                ss_total: t.ss_total,
                ms_between: t.ms_between,
                ms_within: t.ms_within,
                f: t.f,
                p: t.p,
                eta_squared: eta_squared(&t).ok(),
            }),
            Err(e) => b.skipped.push(format!("anova {metric}: {e}")),
        }
        match pairwise_tests(&samples) {
            Ok(tests) if samples.len() >= 2 => pairwise.extend(tests.into_iter().map(|t| PairwiseRow {
                metric,
                group_a: t.label_a,
                group_b: t.label_b,
                mean_diff: t.mean_diff,
                t: t.t,
                df: t.df,
                p: t.p,
                cohens_d: t.cohens_d,
                significant: t.significant,
                p_bonferroni: t.p_bonferroni,
            })),
            Ok(_) => b.skipped.push(format!("pairwise {metric}: fewer than 2 groups")),
            Err(e) => b.skipped.push(format!("pairwise {metric}: {e}")),
        }
    }
    let header = [
        "metric", "groups", "df_between", "df_within", "ss_between", "ss_within", "ss_total", "ms_between",
        "ms_within", "f", "p", "eta_squared",
    ];
    b.add("anova.csv", "anova", true, csv_bytes(anova, &header)?);
    let header = [
        "metric", "group_a", "group_b", "mean_diff", "t", "df", "p", "cohens_d", "significant", "p_bonferroni",
    ];
    b.add("pairwise.csv", "pairwise", true, csv_bytes(pairwise, &header)?);

    let cost_rows = costs.iter().map(|c| CostRow {
        arch: &c.arch,
        input_size: c.input_size,
        params_millions: c.params_millions,
        flops_giga: c.flops_giga,
        up_to_tap: c.up_to_tap,
        flops_giga_up_to_tap: c.flops_giga_up_to_tap,
        activation_mem_gb: c.activation_mem_gb,
    });
    let header = [
        "arch", "input_size", "params_millions", "flops_giga", "up_to_tap", "flops_giga_up_to_tap",
        "activation_mem_gb",
    ];
    b.add("cost.csv", "cost", true, csv_bytes(cost_rows, &header)?);
    let forward = costs.iter().filter_map(|c| {
        c.forward_ms.map(|ms| ForwardTimeRow {
            arch: &c.arch,
            input_size: c.input_size,
            forward_ms: ms,
        })
    });
    b.add("forward_time.csv", "timing", false, csv_bytes(forward, &["arch", "input_size", "forward_ms"])?);
    let training = records.iter().map(|r| TrainingTimeRow {
        index: r.index,
        name: &r.name,
        group: group_key(r, by).1,
        status: r.status,
        training_seconds: r.training_seconds,
    });
    let header = ["index", "name", "group", "status", "training_seconds"];
    b.add("training_time.csv", "timing", false, csv_bytes(training, &header)?);

    let plots = [
        ("ssim", "SSIM (output vs content)", true),
        ("psnr_db", "PSNR (dB)", true),
        ("deep_feature_distance", "Deep-feature distance", true),
        ("training_seconds", "Training time (s)", false),
    ];
    for (metric, label, deterministic) in plots {
        let data: Vec<(String, Vec<f64>)> = groups
            .iter()
            .map(|(g, rs)| {
                let values = rs
                    .iter()
                    .filter(|r| r.status == RunStatus::Ok)
                    .filter_map(|r| {
                        if metric == "training_seconds" {
                            Some(r.training_seconds)
                        } else {
                            metric_value(r, metric)
                        }
                    })
                    .collect();
                (g.clone(), values)
            })
            .collect();
        let title = format!("{label} by {}", if by == GroupBy::Arch { "architecture" } else { "variant" });
        b.add(&format!("{metric}.svg"), "plot", deterministic, box_plot(&title, label, &data).into_bytes());
    }
    Ok(b)
}

/// Writes the report bundle into `out_dir`, replacing any previous bundle
/// there. Files are staged in a sibling temporary directory that is renamed
/// into place at the end, so a failure leaves no partial bundle behind.
pub fn emit_report(
    records: &[ExperimentRecord],
    costs: &[CostReport],
    by: GroupBy,
    out_dir: &Path,
) -> Result<Manifest> {
    if records.is_empty() {
        return Err(nst_core::Error::Precondition("a report needs at least one record".into()).into());
    }
    let bundle = build(records, costs, by)?;

    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| BenchError::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".report-")
        .tempdir_in(&parent)
        .map_err(|e| BenchError::io(&parent, e))?;

    let mut files = Vec::new();
    for (name, kind, deterministic, bytes) in &bundle.files {
        let path = staging.path().join(name);
        fs::write(&path, bytes).map_err(|e| BenchError::io(&path, e))?;
        files.push(ManifestFile {
            path: name.clone(),
            kind: (*kind).into(),
            sha256: format!("{:x}", Sha256::digest(bytes)),
            deterministic: *deterministic,
        });
    }
    let count = |s: RunStatus| records.iter().filter(|r| r.status == s).count();
    let conventions = BTreeMap::from([
        ("ssim".to_string(), format!("{SSIM_MODE}, 11x11 gaussian window, sigma 1.5, valid region")),
        ("psnr_db".to_string(), "max value 1.0; null when output equals content".to_string()),
        ("flops".to_string(), "one multiply-accumulate = 2 FLOPs".to_string()),
        ("activation_mem_gb".to_string(), "peak live f32 activations, input excluded, 1e9 bytes".to_string()),
        ("sd".to_string(), "sample standard deviation (n - 1)".to_string()),
        ("pairwise".to_string(), "pooled-variance t-test; Bonferroni over each metric's family".to_string()),
    ]);
    let manifest = Manifest {
        generated_at_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64()),
        group_by: by,
        records: records.len(),
        ok: count(RunStatus::Ok),
        diverged: count(RunStatus::Diverged),
        failed: count(RunStatus::Failed),
        files,
        skipped: bundle.skipped,
        conventions,
    };
    let manifest_path = staging.path().join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| BenchError::format(&manifest_path, e.to_string()))?;
    fs::write(&manifest_path, json).map_err(|e| BenchError::io(&manifest_path, e))?;

    if out_dir.exists() {
        fs::remove_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, out_dir).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        BenchError::io(out_dir, e)
    })?;
    Ok(manifest)
}
