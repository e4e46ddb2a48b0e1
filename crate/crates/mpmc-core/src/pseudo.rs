//! Teacher inference, confidence masking, adaptive weight maps and the
//! unsupervised losses they modulate.
//!
//! The teacher's per-patch classifier confidence (a softmax over its
//! multi-label outputs) becomes two weight maps: `lambda_m` re-weights the
//! patch-class terms of the unsupervised multi-label loss, and `lambda_s`
//! assigns each pixel the confidence of its pseudo class in the owning
//! patch, down-weighting presumed-noisy pseudo-labels in the segmentation
//! consistency loss.

use alloc::vec;
use alloc::vec::Vec;
use libm::exp;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, CoreError, Result};
use crate::grid::{ImageGrid, LabelGrid};
use crate::losses::{pixel_cross_entropy, softmax_channels, PixelCeResult};
use crate::mpmc::{MpmcHead, MpmcOutput};
use crate::patches::pixel_to_patch;
use crate::rf::PatchGeometry;
use crate::segmodel::Segmentor;
use crate::tensor::Tensor3;

/// Hard pseudo-labels with per-pixel confidence and the threshold mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoBatch {
    pub hard_labels: LabelGrid,
    /// Max softmax probability per pixel, row-major.
    pub confidence: Vec<f64>,
    /// `confidence >= threshold`.
    pub mask: Vec<bool>,
    pub threshold: f64,
}

impl PseudoBatch {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Which teacher MPMC quantity the confidence softmax consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GammaSource {
    /// Softmax over raw pre-sigmoid logits.
    #[default]
    Logits,
    /// Softmax over sigmoid probabilities (compressed range).
    Probs,
}

/// Adaptive weights derived from teacher MPMC confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMaps {
    /// H x W pixel weights, row-major.
    pub lambda_s: Vec<f64>,
    /// R x C patch-class weights (equal to `gamma`).
    pub lambda_m: Vec<f64>,
    /// R x C per-patch confidence rows, each summing to 1.
    pub gamma: Vec<f64>,
    pub num_classes: usize,
}

/// Softmax over one logit row.
fn softmax_row(row: &[f64], out: &mut [f64]) {
    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = exp(v - maxv);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Derive hard labels, confidence and threshold mask from segmentation
/// logits.
pub fn pseudo_from_logits(seg_logits: &Tensor3, threshold: f64) -> Result<PseudoBatch> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(config_err!("confidence threshold must be in [0, 1], got {threshold}"));
    }
    let (c_n, h, w) = (seg_logits.channels, seg_logits.height, seg_logits.width);
    let probs = softmax_channels(seg_logits);
    let mut hard = LabelGrid::filled(h, w, 0);
    let mut confidence = vec![0.0; h * w];
    let mut mask = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut best = 0usize;
            let mut best_p = f64::NEG_INFINITY;
            for c in 0..c_n {
                let p = probs.get(c, i, j);
                if p > best_p {
                    best_p = p;
                    best = c;
                }
            }
            hard.set(i, j, best as u8);
            confidence[i * w + j] = best_p;
            mask[i * w + j] = best_p >= threshold;
        }
    }
    Ok(PseudoBatch {
        hard_labels: hard,
        confidence,
        mask,
        threshold,
    })
}

/// Run the frozen teacher on a weak view: segmentation softmax/argmax plus
/// the teacher MPMC output from the tap feature. No gradients are produced.
pub fn teacher_infer(
    segmentor: &Segmentor,
    seg_params: &[f64],
    head: &MpmcHead,
    head_params: &[f64],
    weak_view: &ImageGrid,
    threshold: f64,
) -> Result<(PseudoBatch, MpmcOutput)> {
    let (logits, feature, _) = segmentor.forward_image(seg_params, weak_view)?;
    let pseudo = pseudo_from_logits(&logits, threshold)?;
    let (teacher_q, _) = head.forward(head_params, &feature.values)?;
    Ok((pseudo, teacher_q))
}

/// Build `gamma`, `lambda_m` and `lambda_s` from teacher MPMC outputs.
pub fn build_weight_maps(
    pseudo: &PseudoBatch,
    teacher_q: &MpmcOutput,
    geometry: &PatchGeometry,
    source: GammaSource,
) -> Result<WeightMaps> {
    let c_n = teacher_q.num_classes;
    if teacher_q.num_patches != geometry.num_patches() {
        return Err(contract_err!(
            "teacher MPMC patches {} do not match geometry {}",
            teacher_q.num_patches,
            geometry.num_patches()
        ));
    }
    let (h, w) = (pseudo.hard_labels.height, pseudo.hard_labels.width);
    if h != geometry.image_h || w != geometry.image_w {
        return Err(contract_err!("pseudo batch shape does not match geometry"));
    }

    let rows = match source {
        GammaSource::Logits => &teacher_q.logits,
        GammaSource::Probs => &teacher_q.probs,
    };
    let mut gamma = vec![0.0; teacher_q.num_patches * c_n];
    for r in 0..teacher_q.num_patches {
        let row = &rows[r * c_n..(r + 1) * c_n];
        softmax_row(row, &mut gamma[r * c_n..(r + 1) * c_n]);
    }

    let mut lambda_s = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let r = pixel_to_patch(i, j, geometry)?;
            let class = pseudo.hard_labels.get(i, j) as usize;
            if class >= c_n {
                return Err(contract_err!("pseudo class {class} out of range"));
            }
            lambda_s[i * w + j] = gamma[r * c_n + class];
        }
    }

    Ok(WeightMaps {
        lambda_s,
        lambda_m: gamma.clone(),
        gamma,
        num_classes: c_n,
    })
}

/// Weighted, masked cross-entropy of the student's strong-view logits
/// against the teacher's hard pseudo-labels (one image).
pub fn unsup_seg_loss(
    student_logits: &Tensor3,
    pseudo: &PseudoBatch,
    lambda_s: Option<&[f64]>,
) -> Result<PixelCeResult> {
    pixel_cross_entropy(
        student_logits,
        &pseudo.hard_labels,
        lambda_s,
        Some(&pseudo.mask),
    )
}

/// Soft-target binary cross-entropy between student and (detached) teacher
/// MPMC outputs, weighted per patch and class, with the 1/C class average
/// and a sum over patches (one image). Returns the loss and the gradient
/// with respect to the student logits.
pub fn unsup_multilabel_loss(
    teacher_q: &MpmcOutput,
    student_q: &MpmcOutput,
    lambda_m: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    if teacher_q.num_patches != student_q.num_patches
        || teacher_q.num_classes != student_q.num_classes
    {
        return Err(contract_err!("teacher/student MPMC output shape mismatch"));
    }
    let c_n = teacher_q.num_classes;
    if let Some(lm) = lambda_m {
        if lm.len() != teacher_q.num_patches * c_n {
            return Err(contract_err!("lambda_m length mismatch"));
        }
    }
    let inv_c = 1.0 / c_n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; student_q.logits.len()];
    for r in 0..teacher_q.num_patches {
        for c in 0..c_n {
            let idx = r * c_n + c;
            let weight = lambda_m.map_or(1.0, |lm| lm[idx]);
            let target = teacher_q.probs[idx];
            let q = student_q.probs[idx];
            loss += weight * inv_c * crate::losses::soft_bce(q, target);
            let qc = q.clamp(crate::losses::EPS, 1.0 - crate::losses::EPS);
            if q == qc {
                grad[idx] = weight * inv_c * (q - target);
            }
        }
    }
    Ok((loss, grad))
}

/// Loss component names used in diagnostics.
pub const COMPONENTS: [&str; 4] = ["L_l", "L_l^M", "L_u", "L_u^M"];

/// Weighted overall objective; aborts with the offending component name on
/// non-finite input.
pub fn total_loss(
    supervised_seg: f64,
    supervised_multilabel: f64,
    unsup_seg: f64,
    unsup_multilabel: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let parts = [
        supervised_seg,
        supervised_multilabel,
        unsup_seg,
        unsup_multilabel,
    ];
    for (value, name) in parts.iter().zip(COMPONENTS) {
        if !value.is_finite() {
            return Err(CoreError::NonFinite { component: name });
        }
    }
    Ok(supervised_seg + supervised_multilabel + alpha * unsup_seg + beta * unsup_multilabel)
}
