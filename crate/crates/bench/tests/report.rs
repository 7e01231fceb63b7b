mod common;

use common::{read_csv, synthetic};
use nst_bench::report::{emit_report, metric_groups, GroupBy, Manifest};
use nst_bench::runner::RunStatus;
use nst_core::arch::ArchName;
use nst_core::stats::one_way_anova;

fn six_records() -> Vec<nst_bench::runner::ExperimentRecord> {
    let ssim = [0.30, 0.25, 0.35, 0.40, 0.20, 0.33];
    (0..6)
        .map(|i| {
            let arch = if i % 2 == 0 { ArchName::TinyVgg } else { ArchName::TinyResnet };
            synthetic(i, arch, ssim[i], 10.0 + i as f64, 0.5 + 0.01 * i as f64, 0.1 * (i + 1) as f64)
        })
        .collect()
}

#[test]
fn summary_has_one_row_per_arch_with_hand_computed_means() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    emit_report(&six_records(), &[], GroupBy::Arch, &out).unwrap();
    let rows = read_csv(&out.join("summary.csv"));
    assert_eq!(rows.len(), 2);
    let metric_means = rows[0].keys().filter(|k| k.ends_with("_mean")).count();
    assert_eq!(metric_means, 4);

    // tiny_vgg holds records 0, 2, 4; tiny_resnet 1, 3, 5.
    let vgg = rows.iter().find(|r| r["group"] == "tiny_vgg").unwrap();
    let resnet = rows.iter().find(|r| r["group"] == "tiny_resnet").unwrap();
    let num = |r: &std::collections::BTreeMap<String, String>, k: &str| r[k].parse::<f64>().unwrap();
    assert!((num(vgg, "ssim_mean") - (0.30 + 0.35 + 0.20) / 3.0).abs() < 1e-12);
    assert!((num(resnet, "psnr_db_mean") - 13.0).abs() < 1e-12);
    assert!((num(resnet, "mse_mean") - 0.4).abs() < 1e-12);
    // Sample sd of 11, 13, 15 is 2.
    assert!((num(resnet, "psnr_db_sd") - 2.0).abs() < 1e-12);
    assert_eq!(vgg["n"], "3");
}

#[test]
fn anova_row_recomputes_from_record_values() {
    let records = six_records();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    emit_report(&records, &[], GroupBy::Arch, &out).unwrap();
    let anova = read_csv(&out.join("anova.csv"));
    let row = anova.iter().find(|r| r["metric"] == "ssim").unwrap();
    let direct = one_way_anova(&metric_groups(&records, GroupBy::Arch, "ssim")).unwrap();
    assert_eq!(row["f"].parse::<f64>().unwrap(), direct.f);
    assert_eq!(row["p"].parse::<f64>().unwrap(), direct.p);
    assert_eq!(row["ss_between"].parse::<f64>().unwrap(), direct.ss_between);
    let pairwise = read_csv(&out.join("pairwise.csv"));
    assert_eq!(pairwise.iter().filter(|r| r["metric"] == "ssim").count(), 1);
    assert!(pairwise[0].contains_key("p_bonferroni"));
}

#[test]
fn box_plots_have_one_group_per_arch() {
    let mut records = six_records();
    records.push(synthetic(6, ArchName::TinyInception, 0.3, 12.0, 0.4, 0.2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let manifest = emit_report(&records, &[], GroupBy::Arch, &out).unwrap();
    for plot in ["ssim.svg", "psnr_db.svg", "deep_feature_distance.svg", "training_seconds.svg"] {
        let svg = std::fs::read_to_string(out.join(plot)).unwrap();
        assert_eq!(svg.matches(r#"class="box-group""#).count(), 3, "{plot}");
        assert!(manifest.files.iter().any(|f| f.path == plot));
    }
    let on_disk: Manifest = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk.files, manifest.files);
    assert!(on_disk.skipped.iter().any(|s| s.contains("tiny_inception")), "{:?}", on_disk.skipped);
}

#[test]
fn failed_runs_are_counted_but_excluded_from_statistics() {
    let mut records = six_records();
    records[0].status = RunStatus::Diverged;
    records[0].metrics = None;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let manifest = emit_report(&records, &[], GroupBy::Arch, &out).unwrap();
    assert_eq!((manifest.ok, manifest.diverged), (5, 1));
    let rows = read_csv(&out.join("summary.csv"));
    let vgg = rows.iter().find(|r| r["group"] == "tiny_vgg").unwrap();
    assert_eq!((vgg["n"].as_str(), vgg["n_failed"].as_str()), ("2", "1"));
}

#[test]
fn reports_are_byte_identical_and_replace_old_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    emit_report(&six_records(), &[], GroupBy::Arch, &a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    std::fs::write(b.join("stale.txt"), "old").unwrap();
    emit_report(&six_records(), &[], GroupBy::Arch, &b).unwrap();
    assert!(!b.join("stale.txt").exists());
    for f in ["summary.csv", "anova.csv", "pairwise.csv", "cost.csv", "ssim.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unwritable_destination_fails_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, "file").unwrap();
    let out = blocker.join("report");
    assert!(emit_report(&six_records(), &[], GroupBy::Arch, &out).is_err());
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn empty_record_list_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&[], &[], GroupBy::Arch, &dir.path().join("r")).is_err());
}
