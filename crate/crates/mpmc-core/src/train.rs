//! One optimization step of the teacher-student pipeline, plus the small
//! amount of optimizer state it needs.
//!
//! The student minimizes `L_l + L_l^M + alpha * L_u + beta * L_u^M`:
//! supervised pixel cross-entropy, supervised per-patch multi-label loss,
//! pseudo-label consistency on strong views, and soft multi-label
//! consistency against the teacher. The teacher is an exponential moving
//! average of the student and produces pseudo-labels and weight maps on
//! weak views only.

use alloc::vec;
use alloc::vec::Vec;
use libm::{pow, sqrt};
use serde::{Deserialize, Serialize};

use crate::ema::ema_update;
use crate::error::{config_err, contract_err, Result};
use crate::grid::{ImageGrid, LabelGrid};
use crate::losses::pixel_cross_entropy;
use crate::metrics::ConfusionAccumulator;
use crate::mpmc::{labeled_multilabel_loss, FocalParams, MpmcHead};
use crate::patches::patch_targets;
use crate::pseudo::{
    build_weight_maps, pseudo_from_logits, teacher_infer, total_loss, unsup_multilabel_loss,
    unsup_seg_loss, GammaSource,
};
use crate::segmodel::Segmentor;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    /// Weight on the pseudo-label segmentation consistency loss.
    pub alpha: f64,
    /// Weight on the soft multi-label consistency loss.
    pub beta: f64,
    pub confidence_threshold: f64,
    pub ema_momentum: f64,
    pub learning_rate: f64,
    pub sgd_momentum: f64,
    /// Total steps for the polynomial learning-rate decay.
    pub total_steps: usize,
    pub poly_power: f64,
    /// Global L2 norm cap on the joint gradient; 0 disables clipping. The
    /// per-patch sum in the multi-label loss makes raw gradients large, so
    /// unclipped steps can saturate the head's sigmoids early.
    pub grad_clip: f64,
    /// Per-image L2 norm cap on the gradient the patch head injects at the
    /// tap feature map; 0 disables. Balances the two objectives sharing the
    /// encoder: without it the patch-sum gradient drowns out the pixel
    /// cross-entropy signal under the global clip.
    pub tap_grad_clip: f64,
    /// Power of the polynomial decay applied to the tap injection over
    /// training; 0 keeps it constant. The auxiliary gradient accelerates
    /// early feature learning but competes with the pixel loss once the
    /// encoder is fit, so it ramps down like an auxiliary-head schedule.
    /// Head parameters keep training at full strength throughout.
    pub tap_grad_decay: f64,
    /// Steps over which the unsupervised weights ramp from 0 to full.
    pub warmup_steps: usize,
    /// Supervised per-patch multi-label loss on labeled images.
    pub enable_mpmc_labeled: bool,
    /// Soft multi-label consistency on unlabeled images.
    pub enable_mpmc_unlabeled: bool,
    /// Teacher-confidence pixel weights in the pseudo-label loss.
    pub use_lambda_s: bool,
    /// Teacher-confidence patch-class weights in the consistency loss.
    pub use_lambda_m: bool,
    pub gamma_source: GammaSource,
    pub focal: FocalParams,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            alpha: 0.1,
            beta: 0.25,
            confidence_threshold: 0.95,
            ema_momentum: 0.999,
            learning_rate: 0.05,
            sgd_momentum: 0.9,
            total_steps: 1000,
            poly_power: 0.9,
            grad_clip: 5.0,
            tap_grad_clip: 0.5,
            tap_grad_decay: 1.0,
            warmup_steps: 0,
            enable_mpmc_labeled: true,
            enable_mpmc_unlabeled: true,
            use_lambda_s: true,
            use_lambda_m: true,
            gamma_source: GammaSource::default(),
            focal: FocalParams::default(),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(config_err!("loss weights must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(config_err!("confidence threshold must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(config_err!(
                "EMA momentum must be in [0, 1); a frozen teacher never learns"
            ));
        }
        if self.learning_rate <= 0.0 || self.total_steps == 0 {
            return Err(config_err!("learning rate and total steps must be positive"));
        }
        if self.grad_clip < 0.0 || self.tap_grad_clip < 0.0 {
            return Err(config_err!("gradient clips must be non-negative"));
        }
        if self.tap_grad_decay < 0.0 {
            return Err(config_err!("tap gradient decay power must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(config_err!("SGD momentum must be in [0, 1)"));
        }
        self.focal.validate()
    }
}

/// Student/teacher parameters plus SGD momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub student_seg: Vec<f64>,
    pub student_head: Vec<f64>,
    pub teacher_seg: Vec<f64>,
    pub teacher_head: Vec<f64>,
    pub momentum_seg: Vec<f64>,
    pub momentum_head: Vec<f64>,
    pub step: usize,
    pub seed: u64,
}

impl TrainState {
    /// Fresh state: teacher starts as a copy of the student.
    pub fn new(segmentor: &Segmentor, head: &MpmcHead, seed: u64) -> Self {
        let student_seg = segmentor.init_params(seed);
        let student_head = head.init_params(seed);
        TrainState {
            teacher_seg: student_seg.clone(),
            teacher_head: student_head.clone(),
            momentum_seg: vec![0.0; student_seg.len()],
            momentum_head: vec![0.0; student_head.len()],
            student_seg,
            student_head,
            step: 0,
            seed,
        }
    }
}

/// Scalars logged per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub total: f64,
    pub supervised_seg: f64,
    pub supervised_multilabel: f64,
    pub unsup_seg: f64,
    pub unsup_multilabel: f64,
    pub learning_rate: f64,
    /// Fraction of unlabeled pixels passing the confidence threshold.
    pub masked_fraction: f64,
}

/// A labeled example: one weak view and its label grid.
pub type LabeledExample<'a> = (&'a ImageGrid, &'a LabelGrid);

/// An unlabeled example: the weak view the teacher sees and the strong
/// view the student sees. The two must be pixel-aligned.
pub type UnlabeledExample<'a> = (&'a ImageGrid, &'a ImageGrid);

/// One optimization step. Views are built by the caller so the step is a
/// pure function of `(state, batch)`.
pub fn train_step(
    state: &mut TrainState,
    segmentor: &Segmentor,
    head: &MpmcHead,
    hyper: &TrainHyper,
    labeled: &[LabeledExample<'_>],
    unlabeled: &[UnlabeledExample<'_>],
) -> Result<StepStats> {
    hyper.validate()?;
    if labeled.is_empty() {
        return Err(contract_err!("training step needs at least one labeled example"));
    }

    let ramp = if hyper.warmup_steps == 0 {
        1.0
    } else {
        (state.step as f64 / hyper.warmup_steps as f64).min(1.0)
    };
    let alpha = hyper.alpha * ramp;
    let beta = hyper.beta * ramp;
    let progress = (state.step as f64 / hyper.total_steps as f64).min(1.0);
    // Warm the injection up while the head is still random, then ramp it
    // down as the encoder converges.
    let tap_decay = ramp * pow(1.0 - progress, hyper.tap_grad_decay);

    let mut grads_seg = vec![0.0; state.student_seg.len()];
    let mut grads_head = vec![0.0; state.student_head.len()];

    // ---- Labeled branch -------------------------------------------------
    let inv_nl = 1.0 / labeled.len() as f64;
    let mut l_l = 0.0;
    let mut seg_passes = Vec::with_capacity(labeled.len());
    let mut head_passes = Vec::new();
    let mut target_store = Vec::new();
    for &(image, label) in labeled {
        if !label.matches_shape(image) {
            return Err(contract_err!("labeled image and label shapes differ"));
        }
        let (logits, feature, cache) = segmentor.forward_image(&state.student_seg, image)?;
        let ce = pixel_cross_entropy(&logits, label, None, None)?;
        l_l += ce.loss * inv_nl;
        let head_pass = if hyper.enable_mpmc_labeled {
            let geometry = segmentor.spec.patch_geometry(image.height, image.width);
            target_store.push(patch_targets(label, &geometry, head.spec.num_classes)?);
            Some(head.forward(&state.student_head, &feature.values)?)
        } else {
            None
        };
        seg_passes.push((ce.grad, cache));
        head_passes.push(head_pass);
    }

    let mut l_l_m = 0.0;
    let mut labeled_head_grads: Vec<Option<Vec<f64>>> = vec![None; labeled.len()];
    if hyper.enable_mpmc_labeled {
        let batch: Vec<_> = head_passes
            .iter()
            .zip(&target_store)
            .map(|(pass, targets)| (&pass.as_ref().expect("enabled branch").0, targets))
            .collect();
        let (loss, per_image) = labeled_multilabel_loss(&batch, &hyper.focal)?;
        l_l_m = loss;
        // The multi-label term sums over patches; update with the per-patch
        // mean gradient so the auxiliary signal stays commensurate with the
        // per-pixel CE term and anneals as the head fits, instead of being
        // pinned at the clip threshold every step.
        for (slot, mut g) in labeled_head_grads.iter_mut().zip(per_image) {
            let patches = (g.len() / head.spec.num_classes.max(1)).max(1);
            let scale = 1.0 / patches as f64;
            for v in &mut g {
                *v *= scale;
            }
            *slot = Some(g);
        }
    }

    for (n, (ce_grad, cache)) in seg_passes.iter().enumerate() {
        let mut d_logits = ce_grad.clone();
        for v in &mut d_logits.data {
            *v *= inv_nl;
        }
        let d_tap: Option<Tensor3> = match &labeled_head_grads[n] {
            Some(d_head_logits) => {
                let (_, head_cache) = head_passes[n].as_ref().expect("enabled branch");
                let mut g = head.backward(
                    &state.student_head,
                    &mut grads_head,
                    head_cache,
                    d_head_logits,
                );
                clip_tensor_norm(&mut g, hyper.tap_grad_clip);
                for v in &mut g.data {
                    *v *= tap_decay;
                }
                Some(g)
            }
            None => None,
        };
        let g = segmentor.backward(&state.student_seg, cache, Some(&d_logits), d_tap.as_ref());
        for (acc, v) in grads_seg.iter_mut().zip(&g) {
            *acc += v;
        }
    }

    // ---- Unlabeled branch -----------------------------------------------
    let mut l_u = 0.0;
    let mut l_u_m = 0.0;
    let mut masked = 0usize;
    let mut total_pixels = 0usize;
    let use_unsup = !unlabeled.is_empty() && (alpha > 0.0 || beta > 0.0);
    if use_unsup {
        let inv_nu = 1.0 / unlabeled.len() as f64;
        for &(weak, strong) in unlabeled {
            if weak.height != strong.height || weak.width != strong.width {
                return Err(contract_err!("weak and strong views must share a shape"));
            }
            let (pseudo, teacher_q) = teacher_infer(
                segmentor,
                &state.teacher_seg,
                head,
                &state.teacher_head,
                weak,
                hyper.confidence_threshold,
            )?;
            masked += pseudo.masked_count();
            total_pixels += weak.height * weak.width;
            let geometry = segmentor.spec.patch_geometry(weak.height, weak.width);
            let maps = build_weight_maps(&pseudo, &teacher_q, &geometry, hyper.gamma_source)?;

            let (logits, feature, cache) =
                segmentor.forward_image(&state.student_seg, strong)?;

            let mut d_logits = None;
            if alpha > 0.0 {
                let weights = hyper.use_lambda_s.then_some(maps.lambda_s.as_slice());
                let ce = unsup_seg_loss(&logits, &pseudo, weights)?;
                l_u += ce.loss * inv_nu;
                let mut g = ce.grad;
                for v in &mut g.data {
                    *v *= alpha * inv_nu;
                }
                d_logits = Some(g);
            }

            let mut d_tap = None;
            if beta > 0.0 && hyper.enable_mpmc_unlabeled {
                let (student_q, head_cache) =
                    head.forward(&state.student_head, &feature.values)?;
                let weights = hyper.use_lambda_m.then_some(maps.lambda_m.as_slice());
                let (loss, mut d_head_logits) =
                    unsup_multilabel_loss(&teacher_q, &student_q, weights)?;
                l_u_m += loss * inv_nu;
                // Per-patch mean direction, matching the labeled branch.
                let scale = beta * inv_nu / student_q.num_patches.max(1) as f64;
                for v in &mut d_head_logits {
                    *v *= scale;
                }
                let mut g = head.backward(
                    &state.student_head,
                    &mut grads_head,
                    &head_cache,
                    &d_head_logits,
                );
                clip_tensor_norm(&mut g, hyper.tap_grad_clip);
                for v in &mut g.data {
                    *v *= tap_decay;
                }
                d_tap = Some(g);
            }

            if d_logits.is_some() || d_tap.is_some() {
                let g = segmentor.backward(
                    &state.student_seg,
                    &cache,
                    d_logits.as_ref(),
                    d_tap.as_ref(),
                );
                for (acc, v) in grads_seg.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
        }
    }

    let total = total_loss(l_l, l_l_m, l_u, l_u_m, alpha, beta)?;

    // ---- SGD with momentum and polynomial decay --------------------------
    // Clip per parameter group: the patch head's gradient is much larger
    // than the segmentor's, and a joint norm would scale the segmentor's
    // signal down with it.
    clip_slice_norm(&mut grads_seg, hyper.grad_clip);
    clip_slice_norm(&mut grads_head, hyper.grad_clip);
    let lr = hyper.learning_rate * pow(1.0 - progress, hyper.poly_power).max(0.0);
    sgd_update(
        &mut state.student_seg,
        &mut state.momentum_seg,
        &grads_seg,
        hyper.sgd_momentum,
        lr,
    )?;
    sgd_update(
        &mut state.student_head,
        &mut state.momentum_head,
        &grads_head,
        hyper.sgd_momentum,
        lr,
    )?;

    ema_update(&mut state.teacher_seg, &state.student_seg, hyper.ema_momentum)?;
    ema_update(&mut state.teacher_head, &state.student_head, hyper.ema_momentum)?;
    state.step += 1;

    Ok(StepStats {
        step: state.step,
        total,
        supervised_seg: l_l,
        supervised_multilabel: l_l_m,
        unsup_seg: l_u,
        unsup_multilabel: l_u_m,
        learning_rate: lr,
        masked_fraction: if total_pixels == 0 {
            0.0
        } else {
            masked as f64 / total_pixels as f64
        },
    })
}

fn clip_slice_norm(grads: &mut [f64], cap: f64) {
    if cap <= 0.0 {
        return;
    }
    let norm = sqrt(grads.iter().map(|g| g * g).sum::<f64>());
    if norm > cap {
        let scale = cap / norm;
        for g in grads {
            *g *= scale;
        }
    }
}

fn clip_tensor_norm(t: &mut Tensor3, cap: f64) {
    clip_slice_norm(&mut t.data, cap);
}

fn sgd_update(
    params: &mut [f64],
    momentum: &mut [f64],
    grads: &[f64],
    mu: f64,
    lr: f64,
) -> Result<()> {
    for ((p, v), &g) in params.iter_mut().zip(momentum.iter_mut()).zip(grads) {
        if !g.is_finite() {
            return Err(contract_err!("non-finite gradient; aborting the step"));
        }
        *v = mu * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Mean IoU of argmax predictions on a set of labeled images.
pub fn evaluate_miou(
    segmentor: &Segmentor,
    params: &[f64],
    examples: &[(ImageGrid, LabelGrid)],
    num_classes: usize,
) -> Result<f64> {
    let mut acc = ConfusionAccumulator::new(num_classes);
    for (image, label) in examples {
        let (logits, _, _) = segmentor.forward_image(params, image)?;
        let pred = pseudo_from_logits(&logits, 0.0)?.hard_labels;
        acc.update(&pred, label)?;
    }
    Ok(acc.mean_iou())
}
