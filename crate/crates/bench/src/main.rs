use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nst_bench::ablation::make_ablation_set;
use nst_bench::config::{load_config, ExperimentConfig, Preset};
use nst_bench::error::BenchError;
use nst_bench::profile::{cost_table, machine_fingerprint, profile_arch};
use nst_bench::report::{emit_report, GroupBy};
use nst_bench::runner::{read_records, run_batch, write_records, ExperimentRecord, RunOptions, RECORDS_FILE};
use nst_core::arch::ArchName;

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "nst-bench", version, about = "Neural style transfer backbone benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct BatchArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for runs, records, and the report.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (capped by NST_BENCH_THREADS).
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Overrides the config file's preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Wall-clock budget per experiment; runs over budget are recorded as failed.
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Timed forward passes per architecture for the cost table.
    #[arg(long, default_value_t = 5)]
    forward_repeats: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a config file and write the report.
    Run(BatchArgs),
    /// Run one ablation set for every experiment of a config file.
    Ablate {
        /// 1: loss weights, 2: layers, 3: learning rate.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        set: u8,
        #[command(flatten)]
        batch: BatchArgs,
    },
    /// Print the cost model and forward timing of one architecture.
    Profile {
        #[arg(long)]
        arch: ArchName,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
    },
    /// Rebuild the report from a directory of records.
    Stats {
        /// Directory holding records.jsonl (or the file itself).
        #[arg(long)]
        records: PathBuf,
        /// Report directory; defaults to `<records>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GroupBy::Arch)]
        group_by: GroupBy,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config = err.downcast_ref::<BenchError>().is_some_and(BenchError::is_config);
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let configs = load_config(&args.config, args.preset)?;
            batch(&configs, &args, GroupBy::Arch)
        }
        Command::Ablate { set, batch: args } => {
            let bases = load_config(&args.config, args.preset)?;
            let mut configs = Vec::new();
            for base in &bases {
                configs.extend(make_ablation_set(base, set)?);
            }
            batch(&configs, &args, GroupBy::Tag)
        }
        Command::Profile {
            arch,
            size,
            repeats,
            warmup,
        } => {
            let report = profile_arch(arch, size, Some(repeats), warmup)?;
            let out = serde_json::json!({ "cost": report, "machine": machine_fingerprint(1) });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { records, out, group_by } => {
            let recs = read_records(&records)?;
            let base = if records.is_dir() { records.clone() } else { records.parent().unwrap_or(Path::new(".")).into() };
            let out = out.unwrap_or_else(|| base.join("report"));
            let costs = cost_table(recs.iter().map(|r| (r.arch, r.config.image_size)), None, 0)?;
            let manifest = emit_report(&recs, &costs, group_by, &out)?;
            println!("report: {} ({} records)", out.display(), manifest.records);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn batch(configs: &[ExperimentConfig], args: &BatchArgs, by: GroupBy) -> anyhow::Result<ExitCode> {
    let opts = RunOptions {
        out_dir: args.out.clone(),
        parallel: args.parallel,
        budget_seconds: args.budget_seconds,
    };
    let records = run_batch(configs, &opts)?;
    let records_path = args.out.join(RECORDS_FILE);
    write_records(&records_path, &records)?;
    let repeats = (args.forward_repeats > 0).then_some(args.forward_repeats);
    let costs = cost_table(configs.iter().map(|c| (c.arch, c.image_size)), repeats, 1)
        .context("profiling architectures")?;
    let report = args.out.join("report");
    emit_report(&records, &costs, by, &report)?;
    print_summary(&records);
    println!("records: {}\nreport: {}", records_path.display(), report.display());
    let partial = records.iter().any(|r| !r.succeeded());
    Ok(if partial { ExitCode::from(EXIT_PARTIAL) } else { ExitCode::SUCCESS })
}

fn print_summary(records: &[ExperimentRecord]) {
    for r in records {
        match (&r.metrics, &r.failure) {
            (Some(m), _) => println!(
                "{:<40} ok        ssim {:.4}  psnr {}  dfd {:.4}  {:.1}s",
                r.name,
                m.ssim,
                m.psnr_db.map_or("inf".into(), |p| format!("{p:.2}")),
                m.deep_feature_distance,
                r.training_seconds
            ),
            (None, reason) => println!(
                "{:<40} {:<9} {}",
                r.name,
                format!("{:?}", r.status).to_lowercase(),
                reason.as_deref().unwrap_or("")
            ),
        }
    }
}
