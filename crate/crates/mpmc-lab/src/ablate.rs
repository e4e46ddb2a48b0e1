//! Ablation presets: each preset expands a base config into a matrix of
//! runs sharing seeds, executes them, and emits a comparison CSV.

use std::path::PathBuf;

use anyhow::{bail, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::trainer::train_run;

pub const PRESETS: [&str; 6] = [
    "components",
    "scales",
    "tap_position",
    "alpha_sweep",
    "beta_sweep",
    "label_fraction",
];

/// One row of an ablation table, averaged over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub row: String,
    pub mean_val_miou: f64,
    pub mean_val_dice: f64,
    pub seeds: usize,
}

/// Expand a preset into named config variants of `base`.
pub fn expand_preset(base: &ExperimentConfig, preset: &str) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut rows = Vec::new();
    match preset {
        "components" => {
            for (name, labeled, unlabeled) in [
                ("neither", false, false),
                ("mpmcl", true, false),
                ("mpmcul", false, true),
                ("both", true, true),
            ] {
                let mut cfg = base.clone();
                cfg.mpmc.enabled = labeled || unlabeled;
                cfg.mpmc.labeled_loss = labeled;
                cfg.mpmc.unlabeled_loss = unlabeled;
                rows.push((name.to_string(), cfg));
            }
        }
        "scales" => {
            // Every subset of {original features, small pool, large pool};
            // the empty subset degenerates to no MPMC at all.
            for bits in 0..8u8 {
                let branches = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
                let mut cfg = base.clone();
                let mut parts = Vec::new();
                if branches.0 {
                    parts.push("original".to_string());
                }
                if branches.1 {
                    parts.push(format!("{0}x{0}", cfg.mpmc.scales.0));
                }
                if branches.2 {
                    parts.push(format!("{0}x{0}", cfg.mpmc.scales.1));
                }
                let name = if parts.is_empty() {
                    "none".to_string()
                } else {
                    parts.join("+")
                };
                if parts.is_empty() {
                    cfg.mpmc.enabled = false;
                    // Keep the head constructible.
                    cfg.mpmc.branches = (true, true, true);
                } else {
                    cfg.mpmc.branches = branches;
                }
                rows.push((name, cfg));
            }
        }
        "tap_position" => {
            for tap in 0..base.model.stage_channels.len() {
                let mut cfg = base.clone();
                cfg.model.tap_layer = tap;
                rows.push((format!("tap{tap}"), cfg));
            }
        }
        "alpha_sweep" => {
            for alpha in [0.05, 0.1, 0.25, 0.5] {
                let mut cfg = base.clone();
                cfg.pseudo.alpha = alpha;
                rows.push((format!("alpha{alpha}"), cfg));
            }
        }
        "beta_sweep" => {
            for beta in [0.05, 0.15, 0.25, 0.5] {
                let mut cfg = base.clone();
                cfg.pseudo.beta = beta;
                rows.push((format!("beta{beta}"), cfg));
            }
        }
        "label_fraction" => {
            for denom in [16u32, 8, 4] {
                let mut cfg = base.clone();
                cfg.split.label_fraction = (1, denom);
                rows.push((format!("1_{denom}"), cfg));
            }
        }
        other => bail!(
            "unknown ablation preset {other:?}; available presets: {}",
            PRESETS.join(", ")
        ),
    }
    Ok(rows)
}

/// Run a preset's config matrix over the given seeds and write
/// `ablation_<preset>.csv` under the base out_dir. Returns the table.
pub fn run_ablation(
    base: &ExperimentConfig,
    preset: &str,
    seeds: &[u64],
) -> Result<(Vec<AblationRow>, PathBuf)> {
    if seeds.is_empty() {
        bail!("ablation needs at least one seed");
    }
    let variants = expand_preset(base, preset)?;
    let mut table = Vec::new();
    for (name, cfg) in &variants {
        let mut miou_sum = 0.0;
        let mut dice_sum = 0.0;
        for &seed in seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = seed;
            run_cfg.out_dir = base.out_dir.join(preset).join(name).join(format!("seed{seed}"));
            let outcome = train_run(&run_cfg, None)?;
            let last = outcome
                .record
                .epochs
                .last()
                .expect("train_run always evaluates at the final step");
            miou_sum += last.val_miou;
            dice_sum += last.val_dice;
        }
        table.push(AblationRow {
            row: name.clone(),
            mean_val_miou: miou_sum / seeds.len() as f64,
            mean_val_dice: dice_sum / seeds.len() as f64,
            seeds: seeds.len(),
        });
    }

    std::fs::create_dir_all(&base.out_dir)?;
    let csv_path = base.out_dir.join(format!("ablation_{preset}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &table {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok((table, csv_path))
}
