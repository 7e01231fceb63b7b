//! Wall-clock timing of forward passes and the machine fingerprint recorded
//! next to every timing.

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use nst_core::arch::{build_arch, init_weights, ArchName, WeightScheme, WeightedGraph};
use nst_core::cost::{cost_report, CostReport};
use nst_core::tensor::{ImageTensor, Shape};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Serializes timing phases: while one forward pass is being timed nothing
/// else in this process that takes the lock runs alongside it.
static PHASE_LOCK: Mutex<()> = Mutex::new(());

/// Takes the exclusive timing phase.
pub fn timing_phase() -> MutexGuard<'static, ()> {
    PHASE_LOCK.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Minimum timed repetitions; fewer make the median meaningless.
pub const MIN_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTiming {
    pub warmup: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median wall time of `repeats` full forward passes on a mid-gray
/// `size`×`size` image, after `warmup` untimed passes.
pub fn time_forward(graph: &WeightedGraph, size: usize, repeats: usize, warmup: usize) -> Result<ForwardTiming> {
    if repeats < MIN_REPEATS {
        return Err(nst_core::Error::Precondition(format!(
            "forward timing needs at least {MIN_REPEATS} repeats, got {repeats}"
        ))
        .into());
    }
    let image = ImageTensor::<f32>::filled(Shape::new(3, size, size), 0.0);
    let _phase = timing_phase();
    for _ in 0..warmup {
        graph.forward(&image)?;
    }
    let mut samples_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = graph.forward(&image)?;
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(ForwardTiming {
        warmup,
        median_ms: median(&samples_ms),
        samples_ms,
    })
}

/// Analytic cost of `arch` at `size`, truncated at the projected style tap,
/// with the forward time filled in when `repeats` is given.
pub fn profile_arch(arch: ArchName, size: usize, repeats: Option<usize>, warmup: usize) -> Result<CostReport> {
    let graph = build_arch(arch)?;
    let style_tap = graph.taps().style_default();
    let mut report = cost_report(&graph, size, style_tap)?;
    if let Some(r) = repeats {
        let weighted = init_weights(graph, WeightScheme::Random { seed: 0 })?;
        report.forward_ms = Some(time_forward(&weighted, size, r, warmup)?.median_ms);
    }
    Ok(report)
}

/// Cost rows for every distinct (arch, size) pair in `pairs`, in first-seen
/// order, timed when `repeats` is given.
pub fn cost_table(
    pairs: impl IntoIterator<Item = (ArchName, usize)>,
    repeats: Option<usize>,
    warmup: usize,
) -> Result<Vec<CostReport>> {
    let mut seen = Vec::new();
    for p in pairs {
        if !seen.contains(&p) {
            seen.push(p);
        }
    }
    seen.into_iter().map(|(a, s)| profile_arch(a, s, repeats, warmup)).collect()
}

/// Hardware and build context attached to every timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineFingerprint {
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub os: String,
    pub arch: String,
    pub worker_threads: usize,
    pub build_profile: String,
}

pub fn machine_fingerprint(worker_threads: usize) -> MachineFingerprint {
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    MachineFingerprint {
        cpu_model,
        logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        os: std::env::consts::OS.into(),
        arch: std::env::consts::ARCH.into(),
        worker_threads,
        build_profile: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_repeats_rejected() {
        let g = init_weights(build_arch(ArchName::TinyVgg).unwrap(), WeightScheme::Random { seed: 0 }).unwrap();
        let err = time_forward(&g, 16, 2, 0).unwrap_err();
        assert!(err.to_string().contains("at least 3"), "{err}");
        let t = time_forward(&g, 16, 3, 1).unwrap();
        assert_eq!(t.samples_ms.len(), 3);
        assert!(t.median_ms >= 0.0);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn profile_fills_timing_only_on_request() {
        assert_eq!(profile_arch(ArchName::TinyVgg, 32, None, 0).unwrap().forward_ms, None);
        assert!(profile_arch(ArchName::TinyVgg, 32, Some(3), 0).unwrap().forward_ms.is_some());
    }

    #[test]
    fn fingerprint_has_cpu_count() {
        let m = machine_fingerprint(2);
        assert!(m.logical_cpus >= 1);
        assert_eq!(m.worker_threads, 2);
    }
}
