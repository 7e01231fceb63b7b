#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use nst_bench::config::{parse_config, ExperimentConfig};
use nst_bench::profile::machine_fingerprint;
use nst_bench::runner::{ExperimentRecord, ImageMetrics, RunStatus, SSIM_MODE};
use nst_core::arch::ArchName;

/// A resolved desk-preset config with extra JSON fields spliced in.
pub fn config(extra: &str) -> ExperimentConfig {
    let sep = if extra.is_empty() { "" } else { "," };
    let text = format!(
        r#"{{"experiments": [{{"content": {{"pattern": "kawung", "seed": 1}},
                              "style": {{"pattern": "parang", "seed": 2}}{sep}{extra}}}]}}"#
    );
    parse_config(&text, Path::new("."), None).unwrap().remove(0)
}

/// A small, fast config: 16×16 images, 20 epochs.
pub fn tiny(arch: &str, extra: &str) -> ExperimentConfig {
    let sep = if extra.is_empty() { "" } else { "," };
    config(&format!(
        r#""arch": "{arch}", "image_size": 16, "max_epochs": 20, "checkpoint_epochs": [10, 20]{sep}{extra}"#
    ))
}

/// A record with the given metrics, as if a run had produced it.
pub fn synthetic(index: usize, arch: ArchName, ssim: f64, psnr: f64, dfd: f64, mse: f64) -> ExperimentRecord {
    let cfg = tiny(arch.as_str(), &format!(r#""name": "r{index}""#));
    ExperimentRecord {
        index,
        name: cfg.name.clone(),
        fingerprint: cfg.fingerprint(),
        arch,
        tag: cfg.tag,
        status: RunStatus::Ok,
        diverged_at_epoch: None,
        failure: None,
        content_tap: Some(1),
        style_taps: vec![4],
        metrics: Some(ImageMetrics {
            ssim,
            psnr_db: Some(psnr),
            mse,
            deep_feature_distance: dfd,
        }),
        checkpoints: Vec::new(),
        null_reasons: BTreeMap::new(),
        first_logged_loss: Some(2.0),
        final_loss: Some(1.0),
        training_seconds: 1.0 + index as f64,
        started_at_unix_s: 0.0,
        finished_at_unix_s: 0.0,
        trace_csv: None,
        trace_timing_csv: None,
        ssim_mode: SSIM_MODE.into(),
        machine: machine_fingerprint(1),
        config: cfg,
    }
}

/// Rows of a CSV file as string maps keyed by header.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}
