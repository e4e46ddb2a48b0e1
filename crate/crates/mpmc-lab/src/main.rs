//! Command-line entry point for the segmentation lab.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mpmc_lab::ablate::run_ablation;
use mpmc_lab::checkpoint::Checkpoint;
use mpmc_lab::config::ExperimentConfig;
use mpmc_lab::dataset_io::{generate_dataset, save_dataset};
use mpmc_lab::plots::emit_run_plots;
use mpmc_lab::trainer::{eval_checkpoint, train_run, RunRecord};

#[derive(Parser)]
#[command(name = "mpmc-lab", about = "Patch-classifier segmentation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset management.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train a model from a config file or a named preset.
    Train {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Named run preset (mpmc_off, mpmc_on) instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        /// Dotted-path overrides, e.g. --override pseudo.alpha=0.25
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Resume from a checkpoint produced by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run an ablation preset.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: String,
        /// Comma-separated seeds shared across the preset's rows.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Output directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit charts for run records found under a directory.
    Plots {
        /// Directory scanned recursively for run_record.json files.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a synthetic corpus and save it as PNGs plus a manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn collect_run_records(dir: &PathBuf) -> Result<Vec<(String, RunRecord)>> {
    let mut records = Vec::new();
    let mut stack = vec![dir.clone()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "run_record.json") {
                let text = std::fs::read_to_string(&path)?;
                let record: RunRecord = serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
                let name = path
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into());
                records.push((name, record));
            }
        }
    }
    records.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(records)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Dataset {
            command: DatasetCommand::Generate { config, out },
        } => {
            let cfg = ExperimentConfig::load(&config, &[])?;
            let dataset = generate_dataset(&cfg.dataset)?;
            let manifest = save_dataset(&dataset, &out)?;
            println!(
                "wrote {} train + {} val scenes ({} classes) to {}",
                manifest.train_ids.len(),
                manifest.val_ids.len(),
                manifest.num_classes,
                out.display()
            );
        }
        Command::Train {
            config,
            preset,
            overrides,
            resume,
        } => {
            let cfg = match (&config, &preset) {
                (Some(path), None) => ExperimentConfig::load(path, &overrides)?,
                (None, Some(name)) => {
                    let base = ExperimentConfig::named_preset(name)?;
                    let mut value = toml::Value::try_from(&base)?;
                    for spec in &overrides {
                        mpmc_lab::config::apply_override(&mut value, spec)?;
                    }
                    let cfg: ExperimentConfig = value.try_into()?;
                    cfg.validate()?;
                    cfg
                }
                _ => unreachable!("clap enforces exactly one of --config/--preset"),
            };
            let outcome = train_run(&cfg, resume.as_deref())?;
            let last = outcome.record.epochs.last();
            println!(
                "finished {} steps in {:.1}s; final val mIoU {}",
                outcome.record.steps.last().map_or(0, |s| s.step),
                outcome.record.wall_time_secs,
                last.map_or("n/a".into(), |e| format!("{:.4}", e.val_miou)),
            );
            println!("checkpoint: {}", outcome.checkpoint_path.display());
        }
        Command::Ablate {
            config,
            preset,
            seeds,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let (table, csv_path) = run_ablation(&cfg, &preset, &seeds)?;
            println!("{:<24} {:>10} {:>10}", "row", "mIoU", "DSC");
            for row in &table {
                println!(
                    "{:<24} {:>10.4} {:>10.4}",
                    row.row, row.mean_val_miou, row.mean_val_dice
                );
            }
            println!("table: {}", csv_path.display());
        }
        Command::Eval {
            checkpoint,
            config,
            split,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config, &[])?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let out_dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let summary = eval_checkpoint(&cfg, &ckpt, &split, &out_dir)?;
            println!(
                "{split}: mIoU {:.4}, DSC {:.4}, mean hamming {:.4}, TP>FN energy fraction {:.2}",
                summary.miou, summary.dice, summary.mean_hamming, summary.tp_above_fn_fraction
            );
            println!("details under {}", out_dir.display());
        }
        Command::Plots { runs, out } => {
            let records = collect_run_records(&runs)?;
            let out_dir = out.unwrap_or_else(|| runs.join("plots"));
            let report = emit_run_plots(&records, &out_dir)?;
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            for path in &report.written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
