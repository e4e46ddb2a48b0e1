//! Toy encoder-decoder segmentor with a designated tap layer exposing
//! features for the patch classifier head.
//!
//! Encoder stages are pairs of 3x3 convolutions with ReLU (the first conv
//! carries the stage stride); the decoder is a 1x1 classifier conv plus
//! bilinear upsampling back to input resolution. Small enough for
//! finite-difference verification, deep enough for a real receptive-field
//! hierarchy.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};
use crate::grid::ImageGrid;
use crate::nn::{
    bilinear_resize, bilinear_resize_backward, relu_backward, relu_forward, Conv, LayoutBuilder,
};
use crate::rf::{rf_geometry, LayerGeometry, PatchGeometry, RfGeometry};
use crate::rng::{Purpose, Stream};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentorSpec {
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    /// Stage index whose output feeds the patch classifier.
    pub tap_layer: usize,
    pub num_classes: usize,
}

impl Default for SegmentorSpec {
    fn default() -> Self {
        SegmentorSpec {
            stage_channels: vec![8, 16],
            stage_strides: vec![2, 2],
            tap_layer: 0,
            num_classes: 5,
        }
    }
}

impl SegmentorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(config_err!("segmentor needs at least one stage"));
        }
        if self.stage_channels.len() != self.stage_strides.len() {
            return Err(config_err!("stage_channels and stage_strides lengths differ"));
        }
        if self.tap_layer >= self.stage_channels.len() {
            return Err(config_err!(
                "tap_layer {} out of range for {} stages",
                self.tap_layer,
                self.stage_channels.len()
            ));
        }
        if self.num_classes < 2 {
            return Err(config_err!("num_classes must be at least 2"));
        }
        if self.stage_strides.iter().any(|&s| s == 0 || s > 4) {
            return Err(config_err!("stage strides must be in 1..=4"));
        }
        Ok(())
    }

    /// Cumulative stride at the output of `stage` (inclusive).
    pub fn cumulative_stride(&self, stage: usize) -> usize {
        self.stage_strides[..=stage].iter().product()
    }

    /// Sliding-window layer list from the input up to the tap output.
    pub fn tap_layers(&self) -> Vec<LayerGeometry> {
        let mut out = Vec::new();
        for stage in 0..=self.tap_layer {
            out.push(LayerGeometry {
                kernel: 3,
                stride: self.stage_strides[stage],
                pad: 1,
            });
            out.push(LayerGeometry {
                kernel: 3,
                stride: 1,
                pad: 1,
            });
        }
        out
    }

    /// Analytic receptive-field geometry at the tap output.
    pub fn tap_rf(&self) -> RfGeometry {
        rf_geometry(&self.tap_layers())
    }

    pub fn patch_geometry(&self, image_h: usize, image_w: usize) -> PatchGeometry {
        let rf = self.tap_rf();
        PatchGeometry {
            rf,
            grid_h: image_h / rf.stride,
            grid_w: image_w / rf.stride,
            image_h,
            image_w,
        }
    }
}

/// Tap-layer features with their geometric footprint.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub values: Tensor3,
    pub rf: RfGeometry,
}

/// Per-pixel class logits at input resolution.
pub type SegLogits = Tensor3;

/// Intermediate activations kept for the backward pass.
pub struct SegCache {
    /// Per conv: (input tensor, post-ReLU output). The head conv has no ReLU.
    conv_io: Vec<(Tensor3, Tensor3)>,
    head_in: Tensor3,
    image_h: usize,
    image_w: usize,
}

pub struct Segmentor {
    pub spec: SegmentorSpec,
    stage_convs: Vec<(Conv, Conv)>,
    head: Conv,
    param_count: usize,
}

impl Segmentor {
    pub fn new(spec: SegmentorSpec) -> Result<Self> {
        spec.validate()?;
        let mut layout = LayoutBuilder::default();
        let mut in_c = 3;
        let mut stage_convs = Vec::new();
        for (stage, (&ch, &stride)) in spec
            .stage_channels
            .iter()
            .zip(&spec.stage_strides)
            .enumerate()
        {
            let _ = stage;
            let a = Conv::new(&mut layout, in_c, ch, 3, stride, 1);
            let b = Conv::new(&mut layout, ch, ch, 3, 1, 1);
            stage_convs.push((a, b));
            in_c = ch;
        }
        let head = Conv::new(&mut layout, in_c, spec.num_classes, 1, 1, 0);
        Ok(Segmentor {
            spec,
            stage_convs,
            head,
            param_count: layout.total(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count];
        let mut rng = Stream::new(seed, Purpose::ParamInit, 0x5e9);
        for (a, b) in &self.stage_convs {
            a.init(&mut params, &mut rng);
            b.init(&mut params, &mut rng);
        }
        self.head.init(&mut params, &mut rng);
        params
    }

    pub fn forward_image(&self, params: &[f64], image: &ImageGrid) -> Result<(SegLogits, FeatureMap, SegCache)> {
        let mut x = Tensor3::zeros(3, image.height, image.width);
        x.data.copy_from_slice(&image.data);
        self.forward(params, x)
    }

    pub fn forward(&self, params: &[f64], input: Tensor3) -> Result<(SegLogits, FeatureMap, SegCache)> {
        if params.len() != self.param_count {
            return Err(contract_err!("parameter vector length mismatch"));
        }
        let (image_h, image_w) = (input.height, input.width);
        let tap_stride = self.spec.cumulative_stride(self.spec.tap_layer);
        if image_h % tap_stride != 0 || image_w % tap_stride != 0 {
            return Err(contract_err!(
                "tap stride {tap_stride} must divide image {image_h}x{image_w}"
            ));
        }

        let mut conv_io = Vec::new();
        let mut x = input;
        let mut tap = None;
        for (stage, (a, b)) in self.stage_convs.iter().enumerate() {
            for conv in [a, b] {
                let y = relu_forward(&conv.forward(params, &x));
                conv_io.push((x, y.clone()));
                x = y;
            }
            if stage == self.spec.tap_layer {
                tap = Some(x.clone());
            }
        }
        let head_in = x.clone();
        let head_out = self.head.forward(params, &x);
        let logits = bilinear_resize(&head_out, image_h, image_w);
        let feature = FeatureMap {
            values: tap.expect("tap stage always runs"),
            rf: self.spec.tap_rf(),
        };
        Ok((
            logits,
            feature,
            SegCache {
                conv_io,
                head_in,
                image_h,
                image_w,
            },
        ))
    }

    /// Backward pass. `d_logits` is the gradient at input-resolution class
    /// logits; `d_tap` (if any) is an extra gradient injected at the tap
    /// feature map, e.g. from the patch classifier head.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &SegCache,
        d_logits: Option<&Tensor3>,
        d_tap: Option<&Tensor3>,
    ) -> Vec<f64> {
        let mut grads = vec![0.0; self.param_count];
        let mut g = match d_logits {
            Some(d) => {
                debug_assert_eq!((d.height, d.width), (cache.image_h, cache.image_w));
                let g_head_out =
                    bilinear_resize_backward(d, cache.head_in.height, cache.head_in.width);
                self.head
                    .backward(params, &mut grads, &cache.head_in, &g_head_out)
            }
            None => Tensor3::zeros(
                cache.head_in.channels,
                cache.head_in.height,
                cache.head_in.width,
            ),
        };

        for (stage, (a, b)) in self.stage_convs.iter().enumerate().rev() {
            if stage == self.spec.tap_layer {
                if let Some(extra) = d_tap {
                    debug_assert!(g.same_shape(extra));
                    for (gv, ev) in g.data.iter_mut().zip(&extra.data) {
                        *gv += ev;
                    }
                }
            }
            for (k, conv) in [b, a].into_iter().enumerate() {
                let idx = 2 * stage + (1 - k);
                let (x, y) = &cache.conv_io[idx];
                let g_pre = relu_backward(y, &g);
                g = conv.backward(params, &mut grads, x, &g_pre);
            }
        }
        grads
    }
}
