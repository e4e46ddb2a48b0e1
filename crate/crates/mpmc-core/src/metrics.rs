//! Segmentation and multi-label evaluation plus the diagnostic analyses:
//! label-wise energy scores and the hamming-accuracy binning of patch-level
//! mIoU deltas.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::grid::{LabelGrid, IGNORE};
use crate::losses::softplus;
use crate::mpmc::MpmcOutput;
use crate::patches::PatchLabelMatrix;

/// Per-class TP/FP/FN pixel counts; mergeable across shards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    pub num_classes: usize,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize) -> Self {
        ConfusionAccumulator {
            num_classes,
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    /// Accumulate one prediction/ground-truth pair; ignore pixels skipped.
    pub fn update(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        if pred.height != gt.height || pred.width != gt.width {
            return Err(contract_err!("prediction/ground-truth shape mismatch"));
        }
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == IGNORE {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= self.num_classes || g >= self.num_classes {
                return Err(contract_err!("class index out of range"));
            }
            if p == g {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        for c in 0..self.num_classes {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
    }

    /// Per-class IoU; classes absent from both prediction and ground truth
    /// yield `None` and are excluded from the mean.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                if union == 0 {
                    None
                } else {
                    Some(self.tp[c] as f64 / union as f64)
                }
            })
            .collect()
    }

    pub fn per_class_dice(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let denom = 2 * self.tp[c] + self.fp[c] + self.fn_[c];
                if denom == 0 {
                    None
                } else {
                    Some(2.0 * self.tp[c] as f64 / denom as f64)
                }
            })
            .collect()
    }

    pub fn mean_iou(&self) -> f64 {
        mean_present(&self.per_class_iou())
    }

    pub fn mean_dice(&self) -> f64 {
        mean_present(&self.per_class_dice())
    }
}

fn mean_present(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Mean IoU of a single prediction/ground-truth pair.
pub fn miou(pred: &LabelGrid, gt: &LabelGrid, num_classes: usize) -> Result<f64> {
    let mut acc = ConfusionAccumulator::new(num_classes);
    acc.update(pred, gt)?;
    Ok(acc.mean_iou())
}

/// Mean Dice coefficient of a single pair.
pub fn dice(pred: &LabelGrid, gt: &LabelGrid, num_classes: usize) -> Result<f64> {
    let mut acc = ConfusionAccumulator::new(num_classes);
    acc.update(pred, gt)?;
    Ok(acc.mean_dice())
}

/// Per-patch `1 - hamming loss` between thresholded predictions and targets.
pub fn hamming_accuracy(pred_bits: &[u8], targets: &PatchLabelMatrix) -> Result<Vec<f64>> {
    if pred_bits.len() != targets.targets.len() {
        return Err(contract_err!("prediction bit matrix shape mismatch"));
    }
    let c_n = targets.num_classes;
    Ok((0..targets.num_patches)
        .map(|r| {
            let mismatches = (0..c_n)
                .filter(|&c| (pred_bits[r * c_n + c] != 0) != targets.get(r, c))
                .count();
            1.0 - mismatches as f64 / c_n as f64
        })
        .collect())
}

/// Threshold MPMC probabilities at 0.5 into a bit matrix.
pub fn mpmc_pred_bits(output: &MpmcOutput) -> Vec<u8> {
    output.probs.iter().map(|&p| (p >= 0.5) as u8).collect()
}

/// Label-wise energy `E_i = log(1 + e^{f_i})` for every patch and class.
pub fn energy_scores(output: &MpmcOutput) -> Vec<f64> {
    output.logits.iter().map(|&l| softplus(l)).collect()
}

/// One row of the hamming-accuracy binning table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchBin {
    /// Inclusive lower bound of the bin in percent (90 means "90+").
    pub lower_pct: u32,
    pub patch_fraction: f64,
    pub mean_miou_delta: Option<f64>,
}

/// Bin per-patch hamming accuracies into deciles (90+, 80-90, ..., 0-10)
/// and average the paired per-patch mIoU deltas in each bin. Bins are
/// listed top-down; empty bins carry fraction 0 and no delta.
pub fn patch_bin_analysis(hamming: &[f64], miou_delta: &[f64]) -> Result<Vec<PatchBin>> {
    if hamming.len() != miou_delta.len() {
        return Err(contract_err!("hamming/delta length mismatch"));
    }
    if hamming.is_empty() {
        return Err(contract_err!("patch bin analysis needs at least one patch"));
    }
    let mut counts = [0usize; 10];
    let mut sums = [0.0f64; 10];
    for (&h, &d) in hamming.iter().zip(miou_delta) {
        // 0.90.. -> bin 0 ("90+"), 0.80..0.90 -> bin 1, ..., below 0.10 -> bin 9.
        let bin = if h >= 0.9 {
            0
        } else {
            9 - (h.clamp(0.0, 1.0) * 10.0) as usize
        };
        let bin = bin.min(9);
        counts[bin] += 1;
        sums[bin] += d;
    }
    let total = hamming.len() as f64;
    Ok((0..10)
        .map(|b| PatchBin {
            lower_pct: (90 - 10 * b) as u32,
            patch_fraction: counts[b] as f64 / total,
            mean_miou_delta: if counts[b] == 0 {
                None
            } else {
                Some(sums[b] / counts[b] as f64)
            },
        })
        .collect())
}

/// Mean label-wise energies of true positives and false negatives per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub num_classes: usize,
    pub tp_mean: Vec<f64>,
    pub tp_count: Vec<u64>,
    pub fn_mean: Vec<f64>,
    pub fn_count: Vec<u64>,
}

impl EnergyReport {
    /// Fraction of classes (with samples in both groups) where the TP mean
    /// energy exceeds the FN mean energy.
    pub fn tp_above_fn_fraction(&self) -> f64 {
        let mut considered = 0usize;
        let mut above = 0usize;
        for c in 0..self.num_classes {
            if self.tp_count[c] > 0 && self.fn_count[c] > 0 {
                considered += 1;
                if self.tp_mean[c] > self.fn_mean[c] {
                    above += 1;
                }
            }
        }
        if considered == 0 {
            0.0
        } else {
            above as f64 / considered as f64
        }
    }
}

/// Classify each (patch, class) as TP (predicted and present) or FN
/// (present but missed) against the patch targets, and average energies.
pub fn tp_fn_energy_summary(
    output: &MpmcOutput,
    targets: &PatchLabelMatrix,
) -> Result<EnergyReport> {
    tp_fn_energy_summary_many(&[(output, targets)])
}

/// [`tp_fn_energy_summary`] aggregated over several images.
pub fn tp_fn_energy_summary_many(
    items: &[(&MpmcOutput, &PatchLabelMatrix)],
) -> Result<EnergyReport> {
    let c_n = match items.first() {
        Some((output, _)) => output.num_classes,
        None => return Err(contract_err!("energy summary needs at least one image")),
    };
    let mut tp_sum = vec![0.0; c_n];
    let mut tp_count = vec![0u64; c_n];
    let mut fn_sum = vec![0.0; c_n];
    let mut fn_count = vec![0u64; c_n];
    for (output, targets) in items {
        if output.num_patches != targets.num_patches
            || output.num_classes != targets.num_classes
            || output.num_classes != c_n
        {
            return Err(contract_err!("output/target shape mismatch"));
        }
        let energies = energy_scores(output);
        let bits = mpmc_pred_bits(output);
        for r in 0..output.num_patches {
            if targets.excluded[r] {
                continue;
            }
            for c in 0..c_n {
                if !targets.get(r, c) {
                    continue;
                }
                let idx = r * c_n + c;
                if bits[idx] != 0 {
                    tp_sum[c] += energies[idx];
                    tp_count[c] += 1;
                } else {
                    fn_sum[c] += energies[idx];
                    fn_count[c] += 1;
                }
            }
        }
    }
    let mean = |sum: &[f64], count: &[u64]| -> Vec<f64> {
        sum.iter()
            .zip(count)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect()
    };
    Ok(EnergyReport {
        num_classes: c_n,
        tp_mean: mean(&tp_sum, &tp_count),
        tp_count,
        fn_mean: mean(&fn_sum, &fn_count),
        fn_count,
    })
}
