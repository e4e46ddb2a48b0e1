//! The multi-scale patch-based multi-label classifier head and its
//! supervised losses.
//!
//! The head pools the tap-layer feature map at two kernel sizes, stacks the
//! pooled maps with the original features, runs a small conv network and a
//! 1x1 linear head, and emits per-patch class logits. Training uses an
//! asymmetric focal loss with separate focusing exponents for positive and
//! negative classes.

use alloc::vec;
use alloc::vec::Vec;
use libm::{log, pow};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};
use crate::losses::{clamp_prob, sigmoid, EPS};
use crate::nn::{avgpool_same, avgpool_same_backward, relu_backward, relu_forward, Conv, LayoutBuilder};
use crate::patches::PatchLabelMatrix;
use crate::rng::{Purpose, Stream};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpmcSpec {
    /// Average-pool kernel sizes; odd so same-shape padding is symmetric.
    pub scales: (usize, usize),
    pub hidden: usize,
    pub num_classes: usize,
    /// Tap-layer feature channels (input width).
    pub in_channels: usize,
    /// Which inputs feed the conv stack: (original features, pool at
    /// `scales.0`, pool at `scales.1`). Exists for scale ablations.
    #[serde(default = "all_branches")]
    pub branches: (bool, bool, bool),
}

fn all_branches() -> (bool, bool, bool) {
    (true, true, true)
}

impl MpmcSpec {
    pub fn validate(&self) -> Result<()> {
        for s in [self.scales.0, self.scales.1] {
            if s % 2 == 0 {
                return Err(config_err!("pool scales must be odd, got {s}"));
            }
        }
        if self.hidden == 0 || self.in_channels == 0 || self.num_classes < 2 {
            return Err(config_err!("invalid MPMC widths"));
        }
        if self.branch_count() == 0 {
            return Err(config_err!("at least one MPMC input branch must be enabled"));
        }
        Ok(())
    }

    pub fn branch_count(&self) -> usize {
        [self.branches.0, self.branches.1, self.branches.2]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

impl Default for MpmcSpec {
    fn default() -> Self {
        MpmcSpec {
            scales: (7, 19),
            hidden: 32,
            num_classes: 5,
            in_channels: 8,
            branches: all_branches(),
        }
    }
}

/// Focusing exponents of the asymmetric focal loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            gamma_plus: 0.0,
            gamma_minus: 1.0,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_plus < 0.0 || self.gamma_minus < 0.0 {
            return Err(config_err!("focal exponents must be non-negative"));
        }
        Ok(())
    }
}

/// Per-patch class logits and sigmoid probabilities, row-major
/// (`r = cell_row * grid_w + cell_col`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpmcOutput {
    pub num_patches: usize,
    pub num_classes: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl MpmcOutput {
    #[inline]
    pub fn logit(&self, r: usize, c: usize) -> f64 {
        self.logits[r * self.num_classes + c]
    }

    #[inline]
    pub fn prob(&self, r: usize, c: usize) -> f64 {
        self.probs[r * self.num_classes + c]
    }
}

/// Activations retained for the backward pass.
pub struct MpmcCache {
    /// Per conv with ReLU: (input, post-ReLU output).
    conv_io: Vec<(Tensor3, Tensor3)>,
    head_in: Tensor3,
}

pub struct MpmcHead {
    pub spec: MpmcSpec,
    convs: Vec<Conv>,
    head: Conv,
    param_count: usize,
}

impl MpmcHead {
    pub fn new(spec: MpmcSpec) -> Result<Self> {
        spec.validate()?;
        let mut layout = LayoutBuilder::default();
        let mut convs = Vec::new();
        let mut in_c = spec.branch_count() * spec.in_channels;
        // Three blocks of [3x3, 3x3, 1x1], all ReLU.
        for _ in 0..3 {
            convs.push(Conv::new(&mut layout, in_c, spec.hidden, 3, 1, 1));
            convs.push(Conv::new(&mut layout, spec.hidden, spec.hidden, 3, 1, 1));
            convs.push(Conv::new(&mut layout, spec.hidden, spec.hidden, 1, 1, 0));
            in_c = spec.hidden;
        }
        let head = Conv::new(&mut layout, spec.hidden, spec.num_classes, 1, 1, 0);
        Ok(MpmcHead {
            spec,
            convs,
            head,
            param_count: layout.total(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count];
        let mut rng = Stream::new(seed, Purpose::ParamInit, 0x309c);
        for conv in &self.convs {
            conv.init(&mut params, &mut rng);
        }
        self.head.init(&mut params, &mut rng);
        params
    }

    pub fn forward(&self, params: &[f64], z: &Tensor3) -> Result<(MpmcOutput, MpmcCache)> {
        if params.len() != self.param_count {
            return Err(contract_err!("MPMC parameter vector length mismatch"));
        }
        if z.channels != self.spec.in_channels {
            return Err(contract_err!(
                "tap feature has {} channels, MPMC expects {}",
                z.channels,
                self.spec.in_channels
            ));
        }
        for (enabled, scale) in [
            (self.spec.branches.1, self.spec.scales.0),
            (self.spec.branches.2, self.spec.scales.1),
        ] {
            if enabled && (scale > z.height || scale > z.width) {
                return Err(config_err!(
                    "pool scale {scale} exceeds feature map {}x{}",
                    z.height,
                    z.width
                ));
            }
        }

        let p0 = self
            .spec
            .branches
            .1
            .then(|| avgpool_same(z, self.spec.scales.0));
        let p1 = self
            .spec
            .branches
            .2
            .then(|| avgpool_same(z, self.spec.scales.1));
        let mut parts: Vec<&Tensor3> = Vec::new();
        if self.spec.branches.0 {
            parts.push(z);
        }
        if let Some(p) = &p0 {
            parts.push(p);
        }
        if let Some(p) = &p1 {
            parts.push(p);
        }
        let concat = Tensor3::concat_channels(&parts);

        let mut conv_io = Vec::new();
        let mut x = concat.clone();
        for conv in &self.convs {
            let y = relu_forward(&conv.forward(params, &x));
            conv_io.push((x, y.clone()));
            x = y;
        }
        let head_in = x.clone();
        let out = self.head.forward(params, &x);

        let (grid_h, grid_w) = (out.height, out.width);
        let num_patches = grid_h * grid_w;
        let c_n = self.spec.num_classes;
        let mut logits = vec![0.0; num_patches * c_n];
        let mut probs = vec![0.0; num_patches * c_n];
        for c in 0..c_n {
            for i in 0..grid_h {
                for j in 0..grid_w {
                    let l = out.get(c, i, j);
                    let r = i * grid_w + j;
                    logits[r * c_n + c] = l;
                    probs[r * c_n + c] = sigmoid(l);
                }
            }
        }
        Ok((
            MpmcOutput {
                num_patches,
                num_classes: c_n,
                grid_h,
                grid_w,
                logits,
                probs,
            },
            MpmcCache { conv_io, head_in },
        ))
    }

    /// Backward from per-patch logit gradients; accumulates parameter
    /// gradients into `grads` and returns the gradient w.r.t. the tap
    /// feature map.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        cache: &MpmcCache,
        d_logits: &[f64],
    ) -> Tensor3 {
        let (grid_h, grid_w) = (cache.head_in.height, cache.head_in.width);
        let c_n = self.spec.num_classes;
        let mut g_out = Tensor3::zeros(c_n, grid_h, grid_w);
        for i in 0..grid_h {
            for j in 0..grid_w {
                let r = i * grid_w + j;
                for c in 0..c_n {
                    g_out.set(c, i, j, d_logits[r * c_n + c]);
                }
            }
        }

        let mut g = self.head.backward(params, grads, &cache.head_in, &g_out);
        for (conv, (x, y)) in self.convs.iter().zip(&cache.conv_io).rev() {
            let g_pre = relu_backward(y, &g);
            g = conv.backward(params, grads, x, &g_pre);
        }

        let d = self.spec.in_channels;
        let widths = vec![d; self.spec.branch_count()];
        let parts = g.split_channels(&widths);
        let mut part_iter = parts.into_iter();
        let mut g_z = Tensor3::zeros(d, cache.head_in.height, cache.head_in.width);
        if self.spec.branches.0 {
            g_z = part_iter.next().expect("branch gradient present");
        }
        if self.spec.branches.1 {
            let gp = avgpool_same_backward(
                &part_iter.next().expect("branch gradient present"),
                self.spec.scales.0,
            );
            for (a, b) in g_z.data.iter_mut().zip(&gp.data) {
                *a += b;
            }
        }
        if self.spec.branches.2 {
            let gp = avgpool_same_backward(
                &part_iter.next().expect("branch gradient present"),
                self.spec.scales.1,
            );
            for (a, b) in g_z.data.iter_mut().zip(&gp.data) {
                *a += b;
            }
        }
        g_z
    }
}

/// Negated asymmetric focal term for one (probability, target) pair,
/// already divided by nothing (callers handle the 1/C average).
#[inline]
fn focal_term(q: f64, positive: bool, fp: &FocalParams) -> f64 {
    let qc = clamp_prob(q);
    if positive {
        -pow(1.0 - qc, fp.gamma_plus) * log(qc)
    } else {
        -pow(qc, fp.gamma_minus) * log(1.0 - qc)
    }
}

/// d(focal_term)/d(logit) with `q = sigmoid(logit)`. The clamp is treated
/// as a plateau: inside the clamped region the forward value is constant,
/// so the gradient is zero there.
#[inline]
fn focal_term_dlogit(q: f64, positive: bool, fp: &FocalParams) -> f64 {
    if q < EPS || q > 1.0 - EPS {
        return 0.0;
    }
    let dq_dl = q * (1.0 - q);
    if positive {
        let mut d = pow(1.0 - q, fp.gamma_plus) / q;
        if fp.gamma_plus != 0.0 {
            d -= fp.gamma_plus * pow(1.0 - q, fp.gamma_plus - 1.0) * log(q);
        }
        -d * dq_dl
    } else {
        let mut d = -pow(q, fp.gamma_minus) / (1.0 - q);
        if fp.gamma_minus != 0.0 {
            d += fp.gamma_minus * pow(q, fp.gamma_minus - 1.0) * log(1.0 - q);
        }
        -d * dq_dl
    }
}

/// Per-patch focal loss of one image, `sum_r l_r` over non-excluded
/// patches, where `l_r` carries the 1/C class average. Also returns the
/// gradient with respect to the per-patch logits.
pub fn focal_loss_sum(
    output: &MpmcOutput,
    targets: &PatchLabelMatrix,
    fp: &FocalParams,
) -> Result<(f64, Vec<f64>)> {
    fp.validate()?;
    if output.num_patches != targets.num_patches || output.num_classes != targets.num_classes {
        return Err(contract_err!(
            "MPMC output {}x{} does not match targets {}x{}",
            output.num_patches,
            output.num_classes,
            targets.num_patches,
            targets.num_classes
        ));
    }
    let c_n = output.num_classes;
    let inv_c = 1.0 / c_n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; output.logits.len()];
    for r in 0..output.num_patches {
        if targets.excluded[r] {
            continue;
        }
        for c in 0..c_n {
            let q = output.prob(r, c);
            let positive = targets.get(r, c);
            loss += inv_c * focal_term(q, positive, fp);
            grad[r * c_n + c] = inv_c * focal_term_dlogit(q, positive, fp);
        }
    }
    Ok((loss, grad))
}

/// The focal loss averaged over non-excluded patches (scalar form used by
/// analyses; the training objective uses [`labeled_multilabel_loss`]).
pub fn asymmetric_focal_loss(
    output: &MpmcOutput,
    targets: &PatchLabelMatrix,
    fp: &FocalParams,
) -> Result<f64> {
    let (sum, _) = focal_loss_sum(output, targets, fp)?;
    let n = targets.included_count();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(sum / n as f64)
}

/// Mean over images of the per-image patch-sum focal loss, plus per-image
/// logit gradients.
pub fn labeled_multilabel_loss(
    batch: &[(&MpmcOutput, &PatchLabelMatrix)],
    fp: &FocalParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(contract_err!("labeled multi-label loss needs a non-empty batch"));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (output, targets) in batch {
        let (l, mut g) = focal_loss_sum(output, targets, fp)?;
        loss += l * inv_n;
        for gv in &mut g {
            *gv *= inv_n;
        }
        grads.push(g);
    }
    Ok((loss, grads))
}
