//! Finite-difference verification of every loss gradient, separately and
//! composed end-to-end through the segmentor and the patch head.

use mpmc_core::error::Result;
use mpmc_core::gradcheck::{finite_difference_check, spread_coords};
use mpmc_core::grid::{ImageGrid, LabelGrid};
use mpmc_core::losses::pixel_cross_entropy;
use mpmc_core::mpmc::{focal_loss_sum, labeled_multilabel_loss, FocalParams, MpmcHead, MpmcSpec};
use mpmc_core::patches::patch_targets;
use mpmc_core::pseudo::{
    build_weight_maps, teacher_infer, unsup_multilabel_loss, unsup_seg_loss, GammaSource,
};
use mpmc_core::segmodel::{Segmentor, SegmentorSpec};
use mpmc_core::synth::{generate_scene, DatasetSpec};

const RTOL: f64 = 1e-3;
const EPS: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

fn setup() -> (Segmentor, MpmcHead, ImageGrid, LabelGrid) {
    let segmentor = Segmentor::new(SegmentorSpec {
        stage_channels: vec![4],
        stage_strides: vec![2],
        tap_layer: 0,
        num_classes: 4,
    })
    .unwrap();
    let head = MpmcHead::new(MpmcSpec {
        scales: (3, 5),
        hidden: 4,
        num_classes: 4,
        in_channels: 4,
        branches: (true, true, true),
    })
    .unwrap();
    let data = DatasetSpec {
        num_classes: 4,
        image_size: (32, 32),
        ..DatasetSpec::default()
    };
    let (image, label) = generate_scene(&data, 5).unwrap();
    (segmentor, head, image, label)
}

/// Concatenate segmentor and head parameters into one probe vector.
///
/// Every parameter is nudged away from its init value so the probe point is
/// generic: biases start at exactly zero, which parks dead-input ReLU units
/// exactly on their kink and makes central differences report half the
/// one-sided slope there.
fn joint_params(segmentor: &Segmentor, head: &MpmcHead, seed: u64) -> (Vec<f64>, usize) {
    let seg = segmentor.init_params(seed);
    let split = seg.len();
    let mut joint = seg;
    joint.extend(head.init_params(seed));
    jitter(&mut joint, seed ^ 0xa5a5);
    (joint, split)
}

fn jitter(params: &mut [f64], seed: u64) {
    let mut rng = mpmc_core::rng::Stream::new(seed, mpmc_core::rng::Purpose::ParamInit, 1);
    for v in params.iter_mut() {
        *v += 0.02 * rng.normal();
    }
}

#[test]
fn focal_loss_gradient_wrt_logits() {
    let (segmentor, head, image, label) = setup();
    let seg_params = segmentor.init_params(3);
    let head_params = head.init_params(3);
    let (_, feature, _) = segmentor.forward_image(&seg_params, &image).unwrap();
    let geometry = segmentor.spec.patch_geometry(image.height, image.width);
    let targets = patch_targets(&label, &geometry, 4).unwrap();
    let (output, _) = head.forward(&head_params, &feature.values).unwrap();
    let fp = FocalParams {
        gamma_plus: 0.5,
        gamma_minus: 1.0,
    };
    let (_, analytic) = focal_loss_sum(&output, &targets, &fp).unwrap();

    // Probe the loss as a function of the raw logits.
    let loss_fn = |logits: &[f64]| -> Result<f64> {
        let mut probe = output.clone();
        probe.logits = logits.to_vec();
        probe.probs = logits.iter().map(|&l| mpmc_core::losses::sigmoid(l)).collect();
        Ok(focal_loss_sum(&probe, &targets, &fp).unwrap().0)
    };
    let coords = spread_coords(output.logits.len(), 64);
    let report =
        finite_difference_check(loss_fn, &output.logits, &analytic, &coords, EPS, FLOOR).unwrap();
    assert!(report.max_rel_error < RTOL, "{report:?}");
}

#[test]
fn labeled_multilabel_gradient_through_both_networks() {
    let (segmentor, head, image, label) = setup();
    let (params, split) = joint_params(&segmentor, &head, 7);
    let geometry = segmentor.spec.patch_geometry(image.height, image.width);
    let targets = patch_targets(&label, &geometry, 4).unwrap();
    let fp = FocalParams::default();

    let loss_fn = |p: &[f64]| -> Result<f64> {
        let (_, feature, _) = segmentor.forward_image(&p[..split], &image)?;
        let (output, _) = head.forward(&p[split..], &feature.values)?;
        let batch = [(&output, &targets)];
        Ok(labeled_multilabel_loss(&batch, &fp)?.0)
    };

    let (_, feature, cache) = segmentor.forward_image(&params[..split], &image).unwrap();
    let (output, head_cache) = head.forward(&params[split..], &feature.values).unwrap();
    let batch = [(&output, &targets)];
    let (_, per_image) = labeled_multilabel_loss(&batch, &fp).unwrap();
    let mut grads_head = vec![0.0; params.len() - split];
    let d_tap = head.backward(&params[split..], &mut grads_head, &head_cache, &per_image[0]);
    let grads_seg = segmentor.backward(&params[..split], &cache, None, Some(&d_tap));
    let analytic: Vec<f64> = grads_seg.into_iter().chain(grads_head).collect();

    let coords = spread_coords(params.len(), 80);
    let report = finite_difference_check(loss_fn, &params, &analytic, &coords, EPS, FLOOR).unwrap();
    assert!(report.max_rel_error < RTOL, "{report:?}");
}

#[test]
fn unsup_seg_gradient_through_the_segmentor() {
    let (segmentor, head, image, _) = setup();
    let data = DatasetSpec {
        num_classes: 4,
        image_size: (32, 32),
        ..DatasetSpec::default()
    };
    let (strong, _) = generate_scene(&data, 9).unwrap();
    let seg_params = segmentor.init_params(11);
    let head_params = head.init_params(11);
    // Frozen teacher provides pseudo-labels and weights; low threshold so
    // a healthy fraction of pixels contributes.
    let (pseudo, teacher_q) =
        teacher_infer(&segmentor, &seg_params, &head, &head_params, &image, 0.3).unwrap();
    let geometry = segmentor.spec.patch_geometry(image.height, image.width);
    let maps = build_weight_maps(&pseudo, &teacher_q, &geometry, GammaSource::Logits).unwrap();

    let mut student = segmentor.init_params(13);
    jitter(&mut student, 13 ^ 0xa5a5);
    let loss_fn = |p: &[f64]| -> Result<f64> {
        let (logits, _, _) = segmentor.forward_image(p, &strong)?;
        Ok(unsup_seg_loss(&logits, &pseudo, Some(&maps.lambda_s))?.loss)
    };
    let (logits, _, cache) = segmentor.forward_image(&student, &strong).unwrap();
    let ce = unsup_seg_loss(&logits, &pseudo, Some(&maps.lambda_s)).unwrap();
    let analytic = segmentor.backward(&student, &cache, Some(&ce.grad), None);

    let coords = spread_coords(student.len(), 60);
    let report = finite_difference_check(loss_fn, &student, &analytic, &coords, EPS, FLOOR).unwrap();
    assert!(report.max_rel_error < RTOL, "{report:?}");
}

#[test]
fn unsup_multilabel_gradient_through_both_networks() {
    let (segmentor, head, image, _) = setup();
    let teacher_seg = segmentor.init_params(17);
    let teacher_head = head.init_params(17);
    let (pseudo, teacher_q) =
        teacher_infer(&segmentor, &teacher_seg, &head, &teacher_head, &image, 0.3).unwrap();
    let geometry = segmentor.spec.patch_geometry(image.height, image.width);
    let maps = build_weight_maps(&pseudo, &teacher_q, &geometry, GammaSource::Logits).unwrap();

    let (params, split) = joint_params(&segmentor, &head, 19);
    let loss_fn = |p: &[f64]| -> Result<f64> {
        let (_, feature, _) = segmentor.forward_image(&p[..split], &image)?;
        let (student_q, _) = head.forward(&p[split..], &feature.values)?;
        Ok(unsup_multilabel_loss(&teacher_q, &student_q, Some(&maps.lambda_m))?.0)
    };
    let (_, feature, cache) = segmentor.forward_image(&params[..split], &image).unwrap();
    let (student_q, head_cache) = head.forward(&params[split..], &feature.values).unwrap();
    let (_, d_head_logits) =
        unsup_multilabel_loss(&teacher_q, &student_q, Some(&maps.lambda_m)).unwrap();
    let mut grads_head = vec![0.0; params.len() - split];
    let d_tap = head.backward(&params[split..], &mut grads_head, &head_cache, &d_head_logits);
    let grads_seg = segmentor.backward(&params[..split], &cache, None, Some(&d_tap));
    let analytic: Vec<f64> = grads_seg.into_iter().chain(grads_head).collect();

    let coords = spread_coords(params.len(), 80);
    let report = finite_difference_check(loss_fn, &params, &analytic, &coords, EPS, FLOOR).unwrap();
    assert!(report.max_rel_error < RTOL, "{report:?}");
}

#[test]
fn composed_objective_gradient_end_to_end() {
    let (segmentor, head, image, label) = setup();
    let data = DatasetSpec {
        num_classes: 4,
        image_size: (32, 32),
        ..DatasetSpec::default()
    };
    let (weak, _) = generate_scene(&data, 21).unwrap();
    let (strong, _) = generate_scene(&data, 22).unwrap();
    let teacher_seg = segmentor.init_params(23);
    let teacher_head = head.init_params(23);
    let (pseudo, teacher_q) =
        teacher_infer(&segmentor, &teacher_seg, &head, &teacher_head, &weak, 0.3).unwrap();
    let geometry = segmentor.spec.patch_geometry(image.height, image.width);
    let maps = build_weight_maps(&pseudo, &teacher_q, &geometry, GammaSource::Logits).unwrap();
    let targets = patch_targets(&label, &geometry, 4).unwrap();
    let fp = FocalParams::default();
    let (alpha, beta) = (0.1, 0.25);

    let (params, split) = joint_params(&segmentor, &head, 31);
    let loss_fn = |p: &[f64]| -> Result<f64> {
        // Supervised terms on the labeled image.
        let (logits, feature, _) = segmentor.forward_image(&p[..split], &image)?;
        let l_l = pixel_cross_entropy(&logits, &label, None, None)?.loss;
        let (output, _) = head.forward(&p[split..], &feature.values)?;
        let batch = [(&output, &targets)];
        let l_l_m = labeled_multilabel_loss(&batch, &fp)?.0;
        // Unsupervised terms on the strong view against the frozen teacher.
        let (u_logits, u_feature, _) = segmentor.forward_image(&p[..split], &strong)?;
        let l_u = unsup_seg_loss(&u_logits, &pseudo, Some(&maps.lambda_s))?.loss;
        let (student_q, _) = head.forward(&p[split..], &u_feature.values)?;
        let l_u_m = unsup_multilabel_loss(&teacher_q, &student_q, Some(&maps.lambda_m))?.0;
        Ok(l_l + l_l_m + alpha * l_u + beta * l_u_m)
    };

    let mut grads_seg = vec![0.0; split];
    let mut grads_head = vec![0.0; params.len() - split];
    {
        let (logits, feature, cache) = segmentor.forward_image(&params[..split], &image).unwrap();
        let ce = pixel_cross_entropy(&logits, &label, None, None).unwrap();
        let (output, head_cache) = head.forward(&params[split..], &feature.values).unwrap();
        let batch = [(&output, &targets)];
        let (_, per_image) = labeled_multilabel_loss(&batch, &fp).unwrap();
        let d_tap = head.backward(&params[split..], &mut grads_head, &head_cache, &per_image[0]);
        let g = segmentor.backward(&params[..split], &cache, Some(&ce.grad), Some(&d_tap));
        for (acc, v) in grads_seg.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    {
        let (u_logits, u_feature, cache) =
            segmentor.forward_image(&params[..split], &strong).unwrap();
        let ce = unsup_seg_loss(&u_logits, &pseudo, Some(&maps.lambda_s)).unwrap();
        let mut d_logits = ce.grad;
        for v in &mut d_logits.data {
            *v *= alpha;
        }
        let (student_q, head_cache) = head.forward(&params[split..], &u_feature.values).unwrap();
        let (_, mut d_head_logits) =
            unsup_multilabel_loss(&teacher_q, &student_q, Some(&maps.lambda_m)).unwrap();
        for v in &mut d_head_logits {
            *v *= beta;
        }
        let d_tap = head.backward(&params[split..], &mut grads_head, &head_cache, &d_head_logits);
        let g = segmentor.backward(&params[..split], &cache, Some(&d_logits), Some(&d_tap));
        for (acc, v) in grads_seg.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let analytic: Vec<f64> = grads_seg.into_iter().chain(grads_head).collect();

    let coords = spread_coords(params.len(), 100);
    let report = finite_difference_check(loss_fn, &params, &analytic, &coords, EPS, FLOOR).unwrap();
    assert!(report.max_rel_error < RTOL, "{report:?}");
}

