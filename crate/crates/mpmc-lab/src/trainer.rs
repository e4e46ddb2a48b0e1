//! The training loop: batch sampling, view construction, per-step logging,
//! periodic evaluation and checkpointing, NaN abort with the last good
//! checkpoint retained, and exact resume.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mpmc_core::augment::{strong_augment, weak_augment};
use mpmc_core::grid::{ImageGrid, LabelGrid};
use mpmc_core::metrics::ConfusionAccumulator;
use mpmc_core::mpmc::MpmcHead;
use mpmc_core::pseudo::pseudo_from_logits;
use mpmc_core::rng::{Purpose, Stream};
use mpmc_core::segmodel::Segmentor;
use mpmc_core::split::make_splits;
use mpmc_core::train::{train_step, StepStats, TrainState};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset_io::{generate_dataset, load_dataset, Dataset};

/// Metrics computed at an evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub step: usize,
    pub val_miou: f64,
    pub val_dice: f64,
}

/// Append-only account of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub steps: Vec<StepStats>,
    pub epochs: Vec<EpochMetrics>,
    pub wall_time_secs: f64,
}

/// Everything a caller needs after a run.
pub struct RunOutcome {
    pub record: RunRecord,
    pub checkpoint_path: PathBuf,
    pub final_state: TrainState,
    pub dataset: Dataset,
}

/// Evaluate mean IoU and Dice of argmax predictions.
pub fn evaluate(
    segmentor: &Segmentor,
    params: &[f64],
    examples: &[(ImageGrid, LabelGrid)],
    num_classes: usize,
) -> Result<(f64, f64)> {
    let mut acc = ConfusionAccumulator::new(num_classes);
    for (image, label) in examples {
        let (logits, _, _) = segmentor.forward_image(params, image)?;
        let pred = pseudo_from_logits(&logits, 0.0)?.hard_labels;
        acc.update(&pred, label)?;
    }
    Ok((acc.mean_iou(), acc.mean_dice()))
}

/// Run training to `total_steps`, resuming from a checkpoint when given.
pub fn train_run(config: &ExperimentConfig, resume: Option<&Path>) -> Result<RunOutcome> {
    train_run_until(config, resume, None)
}

/// Like [`train_run`] but optionally stopping before `total_steps` (the
/// learning-rate schedule still follows `total_steps`). Used to exercise
/// interrupted-run resume.
pub fn train_run_until(
    config: &ExperimentConfig,
    resume: Option<&Path>,
    stop_at: Option<usize>,
) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    let out_dir = &config.out_dir;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), toml::to_string_pretty(config)?)?;

    let dataset = match &config.dataset.path {
        Some(path) => {
            let (dataset, _) = load_dataset(path)?;
            if dataset.num_classes != config.dataset.num_classes {
                bail!(
                    "dataset on disk has {} classes, config says {}",
                    dataset.num_classes,
                    config.dataset.num_classes
                );
            }
            dataset
        }
        None => generate_dataset(&config.dataset)?,
    };

    // The labeled/unlabeled partition is part of the dataset definition:
    // it follows the dataset seed, so different run seeds compare models on
    // the same split (as fixed split lists do on the public benchmarks).
    let manifest = make_splits(
        dataset.train.len(),
        config.split.label_fraction,
        config.dataset.seed,
    )?;
    let labeled_pool: Vec<usize> = manifest.labeled_ids.iter().map(|&n| n as usize).collect();
    let unlabeled_pool: Vec<usize> = manifest
        .unlabeled_ids
        .iter()
        .map(|&n| n as usize)
        .collect();

    let segmentor = Segmentor::new(config.segmentor_spec())?;
    let head = MpmcHead::new(config.mpmc_spec())?;
    let hyper = config.hyper();
    let config_hash = config.hash();

    let mut state = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config_hash != config_hash {
                bail!(
                    "checkpoint {} was produced by a different config (hash {} vs {})",
                    path.display(),
                    ckpt.config_hash,
                    config_hash
                );
            }
            ckpt.state
        }
        None => TrainState::new(&segmentor, &head, config.seed),
    };

    let checkpoint_path = out_dir.join("checkpoint.json");
    let steps_path = out_dir.join("steps.jsonl");
    let metrics_path = out_dir.join("metrics.csv");
    let resuming = resume.is_some();
    let mut steps_file = if resuming {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&steps_path)?
    } else {
        std::fs::File::create(&steps_path)?
    };
    let mut metrics_writer = if resuming && metrics_path.exists() {
        csv::WriterBuilder::new().has_headers(false).from_writer(
            std::fs::OpenOptions::new()
                .append(true)
                .open(&metrics_path)?,
        )
    } else {
        let mut w = csv::Writer::from_path(&metrics_path)?;
        w.write_record(["step", "val_miou", "val_dice"])?;
        w
    };

    let save_checkpoint = |state: &TrainState| -> Result<()> {
        Checkpoint {
            config_hash: config_hash.clone(),
            segmentor: config.segmentor_spec(),
            mpmc: config.mpmc_spec(),
            hyper: hyper.clone(),
            state: state.clone(),
        }
        .save(&checkpoint_path)
    };

    let mut record = RunRecord {
        config_hash: config_hash.clone(),
        steps: Vec::new(),
        epochs: Vec::new(),
        wall_time_secs: 0.0,
    };

    let use_unlabeled =
        config.optimizer.unlabeled_batch > 0 && (hyper.alpha > 0.0 || hyper.beta > 0.0);

    let stop = stop_at
        .unwrap_or(config.optimizer.total_steps)
        .min(config.optimizer.total_steps);
    while state.step < stop {
        let step = state.step;
        let mut sampler = Stream::new(config.seed, Purpose::BatchSampling, step as u64);

        // Labeled batch: sample with replacement, weak views only.
        let mut labeled_views = Vec::with_capacity(config.optimizer.labeled_batch);
        for _ in 0..config.optimizer.labeled_batch {
            let id = labeled_pool[sampler.below(labeled_pool.len())];
            let (image, label) = &dataset.train[id];
            let seed = sampler.next_u64();
            let (view, view_label, _) =
                weak_augment(image, Some(label), &config.augment.weak, seed)?;
            labeled_views.push((view, view_label.expect("label passed in")));
        }

        // Unlabeled batch: a weak view for the teacher and a photometric
        // strong view of the same geometry for the student.
        let mut unlabeled_views = Vec::new();
        if use_unlabeled && !unlabeled_pool.is_empty() {
            for _ in 0..config.optimizer.unlabeled_batch {
                let id = unlabeled_pool[sampler.below(unlabeled_pool.len())];
                let (image, _) = &dataset.train[id];
                let weak_seed = sampler.next_u64();
                let strong_seed = sampler.next_u64();
                let (weak, _, _) = weak_augment(image, None, &config.augment.weak, weak_seed)?;
                let (strong, _) = strong_augment(&weak, &config.augment.strong, strong_seed)?;
                unlabeled_views.push((weak, strong));
            }
        }

        let labeled_refs: Vec<(&ImageGrid, &LabelGrid)> =
            labeled_views.iter().map(|(i, l)| (i, l)).collect();
        let unlabeled_refs: Vec<(&ImageGrid, &ImageGrid)> =
            unlabeled_views.iter().map(|(w, s)| (w, s)).collect();

        let stats = match train_step(
            &mut state,
            &segmentor,
            &head,
            &hyper,
            &labeled_refs,
            &unlabeled_refs,
        ) {
            Ok(stats) => stats,
            Err(err) => {
                // The last good checkpoint stays on disk for post-mortems.
                bail!(
                    "training aborted at step {step}: {err}; last checkpoint: {}",
                    checkpoint_path.display()
                );
            }
        };
        serde_json::to_writer(&mut steps_file, &stats)?;
        steps_file.write_all(b"\n")?;
        record.steps.push(stats);

        let at_eval =
            state.step % config.optimizer.eval_every == 0 || state.step == config.optimizer.total_steps;
        if at_eval {
            let (val_miou, val_dice) = evaluate(
                &segmentor,
                &state.student_seg,
                &dataset.val,
                dataset.num_classes,
            )?;
            metrics_writer.write_record([
                state.step.to_string(),
                format!("{val_miou:.6}"),
                format!("{val_dice:.6}"),
            ])?;
            metrics_writer.flush()?;
            record.epochs.push(EpochMetrics {
                step: state.step,
                val_miou,
                val_dice,
            });
            save_checkpoint(&state)?;
        }
    }
    save_checkpoint(&state)?;

    record.wall_time_secs = started.elapsed().as_secs_f64();
    std::fs::write(
        out_dir.join("run_record.json"),
        serde_json::to_string(&record)?,
    )
    .context("writing run record")?;

    Ok(RunOutcome {
        record,
        checkpoint_path,
        final_state: state,
        dataset,
    })
}

/// Detailed evaluation of a checkpoint on one split.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub split: String,
    pub miou: f64,
    pub dice: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_hamming: f64,
    /// Fraction of classes whose true-positive mean energy exceeds the
    /// false-negative mean energy.
    pub tp_above_fn_fraction: f64,
}

/// Evaluate a checkpoint's student on `split` ("val" or "train"), write
/// `eval_<split>.json`, an energy CSV and the raw feature export under
/// `out_dir`, and return the summary.
pub fn eval_checkpoint(
    config: &ExperimentConfig,
    checkpoint: &Checkpoint,
    split: &str,
    out_dir: &Path,
) -> Result<EvalSummary> {
    let dataset = match &config.dataset.path {
        Some(path) => load_dataset(path)?.0,
        None => generate_dataset(&config.dataset)?,
    };
    let examples = match split {
        "val" => &dataset.val,
        "train" => &dataset.train,
        other => bail!("unknown split {other:?}; expected \"val\" or \"train\""),
    };
    let segmentor = Segmentor::new(checkpoint.segmentor.clone())?;
    let head = MpmcHead::new(checkpoint.mpmc.clone())?;
    let params = &checkpoint.state.student_seg;
    let head_params = &checkpoint.state.student_head;

    let mut acc = ConfusionAccumulator::new(dataset.num_classes);
    let mut hamming_sum = 0.0;
    let mut hamming_n = 0usize;
    let mut outputs = Vec::new();
    let mut targets_store = Vec::new();
    for (image, label) in examples {
        let (logits, feature, _) = segmentor.forward_image(params, image)?;
        let pred = pseudo_from_logits(&logits, 0.0)?.hard_labels;
        acc.update(&pred, label)?;
        let geometry = segmentor.spec.patch_geometry(image.height, image.width);
        let targets =
            mpmc_core::patches::patch_targets(label, &geometry, dataset.num_classes)?;
        let (output, _) = head.forward(head_params, &feature.values)?;
        let bits = mpmc_core::metrics::mpmc_pred_bits(&output);
        for (r, h) in mpmc_core::metrics::hamming_accuracy(&bits, &targets)?
            .iter()
            .enumerate()
        {
            if !targets.excluded[r] {
                hamming_sum += h;
                hamming_n += 1;
            }
        }
        outputs.push(output);
        targets_store.push(targets);
    }
    let pairs: Vec<_> = outputs.iter().zip(&targets_store).collect();
    let energy = mpmc_core::metrics::tp_fn_energy_summary_many(&pairs)?;

    std::fs::create_dir_all(out_dir)?;
    let summary = EvalSummary {
        split: split.to_string(),
        miou: acc.mean_iou(),
        dice: acc.mean_dice(),
        per_class_iou: acc.per_class_iou(),
        mean_hamming: if hamming_n == 0 {
            0.0
        } else {
            hamming_sum / hamming_n as f64
        },
        tp_above_fn_fraction: energy.tp_above_fn_fraction(),
    };
    std::fs::write(
        out_dir.join(format!("eval_{split}.json")),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut w = csv::Writer::from_path(out_dir.join(format!("energy_{split}.csv")))?;
    w.write_record(["class", "tp_mean", "tp_count", "fn_mean", "fn_count"])?;
    for c in 0..energy.num_classes {
        w.write_record([
            c.to_string(),
            format!("{}", energy.tp_mean[c]),
            energy.tp_count[c].to_string(),
            format!("{}", energy.fn_mean[c]),
            energy.fn_count[c].to_string(),
        ])?;
    }
    w.flush()?;
    crate::features::export_features(&segmentor, params, examples, out_dir)?;
    Ok(summary)
}
