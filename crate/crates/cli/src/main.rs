//! `slagnet` command-line tool.

mod config;
mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use slagnet::dataset::{generate_synthetic, load_manifest, validate_dataset, write_dataset, DatasetError, SyntheticSpec};
use slagnet::experiments::{
    aggregate_path, checkpoint_path, config_aggregate_path, load_run_records, prepare_fold, run_path, run_repeat,
    write_json, AggregateResult, ExperimentConfig, RunSummary,
};
use slagnet::models::save_checkpoint;
use slagnet::Real;

use config::CliConfig;

#[derive(Parser)]
#[command(name = "slagnet", version, about = "Slag-flow stage classification from vibration recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset manifest for missing cells and anomalies.
    Validate {
        manifest: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic dataset (CSV recordings plus manifest).
    Synth {
        /// JSON generator spec; defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate the configs selected by a run file.
    Run {
        config: PathBuf,
        #[arg(long, env = "SLAGNET_OUTPUT_ROOT")]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel (fold, repeat) jobs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        full_protocol: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Tables, box-plot data and confusion matrices from a results directory.
    Report {
        results: PathBuf,
        /// Defaults to `<results>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status 1: the data or results are at fault. Status 2: the invocation
/// or config is.
enum Failure {
    Domain(anyhow::Error),
    Usage(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn domain<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Domain(e.into())
}

fn dataset_failure(e: DatasetError) -> Failure {
    match e {
        DatasetError::MalformedManifest(_) | DatasetError::DuplicateEntry { .. } | DatasetError::InvalidSpec(_) => {
            usage(e)
        }
        _ => domain(e),
    }
}

fn cmd_validate(manifest: &Path, json: bool) -> CmdResult {
    if !manifest.is_file() {
        return Err(usage(anyhow!("manifest {} not found", manifest.display())));
    }
    let index = load_manifest(manifest).map_err(dataset_failure)?;
    let report = validate_dataset(&index);
    if json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(domain)?);
    } else {
        print!("{report}");
    }
    if report.is_complete {
        Ok(())
    } else {
        Err(domain(anyhow!("dataset incomplete")))
    }
}

fn cmd_synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut spec: SyntheticSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(usage)?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let index = generate_synthetic(&spec).map_err(dataset_failure)?;
    let manifest = write_dataset(&index, out).map_err(domain)?;
    let report = validate_dataset(&load_manifest(&manifest).map_err(domain)?);
    eprintln!("wrote {} recordings; manifest {}", report.entries_checked, manifest.display());
    if report.is_complete {
        Ok(())
    } else {
        print!("{report}");
        Err(domain(anyhow!("written dataset does not validate")))
    }
}

/// One (config, fold) with the repeats still to run.
struct Job {
    config: ExperimentConfig,
    pending: Vec<usize>,
}

fn run_job(job: &Job, root: &Path, save_checkpoints: bool, index: &slagnet::dataset::DatasetIndex) -> Vec<String> {
    let c = &job.config;
    let fold = c.fold.test_domain;
    let data = match prepare_fold::<Real>(c, index) {
        Ok(d) => d,
        Err(e) => return vec![format!("{} fold {fold}: {e}", c.id)],
    };
    job.pending
        .par_iter()
        .filter_map(|&repeat| {
            let tag = format!("{} fold {fold} repeat {repeat}", c.id);
            let (record, model) = match run_repeat(c, &data, repeat) {
                Ok(r) => r,
                Err(e) => return Some(format!("{tag}: {e}")),
            };
            if save_checkpoints {
                let meta = serde_json::json!({
                    "config_id": c.id,
                    "test_domain": fold,
                    "repeat": repeat,
                    "best_epoch": record.result.best_epoch,
                });
                let ck = checkpoint_path(root, &c.id, fold, repeat);
                if let Err(e) = ck.parent().map_or(Ok(()), std::fs::create_dir_all) {
                    return Some(format!("{tag}: {e}"));
                }
                if let Err(e) = save_checkpoint(&model, &ck, meta) {
                    return Some(format!("{tag}: {e}"));
                }
            }
            if let Err(e) = write_json(&run_path(root, &c.id, fold, repeat), &record) {
                return Some(format!("{tag}: {e}"));
            }
            eprintln!(
                "{tag}: test accuracy {:.4} at epoch {}",
                record.result.test_acc_at_best, record.result.best_epoch
            );
            None
        })
        .collect()
}

/// Rewrites fold and config aggregates from the run files on disk.
fn write_aggregates(root: &Path, jobs: &[Job]) -> anyhow::Result<Vec<AggregateResult>> {
    let (records, _) = load_run_records(root);
    let ids: BTreeSet<&str> = jobs.iter().map(|j| j.config.id.as_str()).collect();
    let mut pooled = Vec::new();
    for id in ids {
        let target = jobs.iter().find(|j| j.config.id == id).and_then(|j| j.config.target);
        let mine: Vec<RunSummary> = records.iter().filter(|r| r.config_id == id).map(RunSummary::from).collect();
        if mine.is_empty() {
            continue;
        }
        for fold in jobs.iter().filter(|j| j.config.id == id).map(|j| j.config.fold.test_domain) {
            let runs: Vec<RunSummary> = mine.iter().filter(|r| r.test_domain == fold).cloned().collect();
            if !runs.is_empty() {
                write_json(&aggregate_path(root, id, fold), &AggregateResult::from_runs(id, runs, target))?;
            }
        }
        let agg = AggregateResult::from_runs(id, mine, target);
        write_json(&config_aggregate_path(root, id), &agg)?;
        pooled.push(agg);
    }
    Ok(pooled)
}

struct RunFlags {
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    workers: usize,
    full_protocol: bool,
    epochs: Option<usize>,
    repeats: Option<usize>,
}

fn cmd_run(path: &Path, flags: RunFlags) -> CmdResult {
    let mut cfg = CliConfig::load(path).map_err(usage)?;
    if let Some(d) = flags.output_dir {
        cfg.output_dir = d;
    }
    if let Some(s) = flags.seed {
        cfg.base_seed = s;
    }
    cfg.full_protocol |= flags.full_protocol;
    cfg.epochs = flags.epochs.or(cfg.epochs);
    cfg.repeats = flags.repeats.or(cfg.repeats);
    if flags.workers == 0 {
        return Err(usage(anyhow!("--workers must be at least 1")));
    }
    cfg.check().map_err(usage)?;
    let configs = cfg.configs().map_err(usage)?;
    let index = match cfg.dataset() {
        Ok(i) => i,
        Err(e) => {
            return Err(match e.downcast::<DatasetError>() {
                Ok(d) => dataset_failure(d),
                Err(e) => domain(e),
            })
        }
    };
    let domains: BTreeSet<u32> = index.domains().into_iter().collect();
    let expanded = cfg.expand(&configs, &domains).map_err(usage)?;
    let root = cfg.output_dir.clone();
    std::fs::create_dir_all(&root)
        .with_context(|| format!("creating {}", root.display()))
        .map_err(usage)?;
    write_json(&root.join("run_config.json"), &cfg).map_err(usage)?;

    let jobs: Vec<Job> = expanded
        .into_iter()
        .map(|config| {
            let pending = (0..config.repeats)
                .filter(|&r| !run_path(&root, &config.id, config.fold.test_domain, r).is_file())
                .collect();
            Job { config, pending }
        })
        .collect();
    let total: usize = jobs.iter().map(|j| j.config.repeats).sum();
    let todo: usize = jobs.iter().map(|j| j.pending.len()).sum();
    eprintln!("{} configs x folds, {todo} of {total} runs to train", jobs.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(flags.workers)
        .build()
        .map_err(domain)?;
    let errors: Vec<String> = pool.install(|| {
        jobs.par_iter()
            .filter(|j| !j.pending.is_empty())
            .flat_map(|j| run_job(j, &root, cfg.save_checkpoints, &index))
            .collect()
    });
    let pooled = write_aggregates(&root, &jobs).map_err(domain)?;
    for a in &pooled {
        println!("{}: {:.2} ± {:.2} over {} runs", a.config_id, a.mean * 100.0, a.std * 100.0, a.runs.len());
    }
    if errors.is_empty() {
        Ok(())
    } else {
        for e in &errors {
            eprintln!("error: {e}");
        }
        Err(domain(anyhow!("{} runs failed", errors.len())))
    }
}

fn cmd_report(results: &Path, out: Option<PathBuf>) -> CmdResult {
    if !results.is_dir() {
        return Err(usage(anyhow!("results directory {} not found", results.display())));
    }
    let out = out.unwrap_or_else(|| results.join("report"));
    let outcome = report::write_report(results, &out).map_err(domain)?;
    for (path, why) in &outcome.failures {
        eprintln!("error: unreadable run record {}: {why}", path.display());
    }
    println!(
        "{} configs, {} runs, {} files written under {}",
        outcome.configs,
        outcome.runs,
        outcome.written.len(),
        out.display()
    );
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(domain(anyhow!("{} run records could not be read", outcome.failures.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { manifest, json } => cmd_validate(&manifest, json),
        Command::Synth { spec, out, seed } => cmd_synth(spec.as_deref(), &out, seed),
        Command::Run {
            config,
            output_dir,
            seed,
            workers,
            full_protocol,
            epochs,
            repeats,
        } => cmd_run(
            &config,
            RunFlags {
                output_dir,
                seed,
                workers,
                full_protocol,
                epochs,
                repeats,
            },
        ),
        Command::Report { results, out } => cmd_report(&results, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
