//! Weak and strong view construction.
//!
//! Weak views apply geometry only (random flip plus crop-and-resize to the
//! training resolution); strong views stack photometric perturbations on
//! top of an already-weak view and never move pixels, so a teacher
//! pseudo-label computed on the weak view aligns pixel-wise with the
//! student's strong view.

use alloc::vec::Vec;
use libm::{ceil, exp, round};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};
use crate::grid::{ImageGrid, LabelGrid};
use crate::nn::bilinear_resize;
use crate::rng::{Purpose, Stream};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakAugConfig {
    /// Training resolution the crop is resized to.
    pub out_size: (usize, usize),
    /// Crop side as a fraction of the source side, sampled uniformly.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
}

impl Default for WeakAugConfig {
    fn default() -> Self {
        WeakAugConfig {
            out_size: (64, 64),
            crop_scale: (0.7, 1.0),
            flip_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongAugConfig {
    /// Per-channel gain drawn from `1 +- jitter`, bias from `+- jitter / 2`.
    pub color_jitter: f64,
    pub contrast_range: (f64, f64),
    pub blur_sigma_max: f64,
    pub blur_prob: f64,
    pub cutout_count: usize,
    /// Cutout side as a fraction of the image side.
    pub cutout_size: f64,
    /// Fill value for cutout regions (dataset mean).
    pub cutout_fill: [f64; 3],
}

impl Default for StrongAugConfig {
    fn default() -> Self {
        StrongAugConfig {
            color_jitter: 0.25,
            contrast_range: (0.7, 1.3),
            blur_sigma_max: 1.2,
            blur_prob: 0.5,
            cutout_count: 2,
            cutout_size: 0.2,
            cutout_fill: [0.4, 0.4, 0.4],
        }
    }
}

/// Photometric parameters actually applied to one strong view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PhotometricRecord {
    pub gains: [f64; 3],
    pub biases: [f64; 3],
    pub contrast: f64,
    pub blur_sigma: f64,
    /// (top, left, height, width) rectangles filled with the dataset mean.
    pub cutouts: Vec<(usize, usize, usize, usize)>,
}

impl PhotometricRecord {
    pub fn identity() -> Self {
        PhotometricRecord {
            gains: [1.0; 3],
            biases: [0.0; 3],
            contrast: 1.0,
            blur_sigma: 0.0,
            cutouts: Vec::new(),
        }
    }
}

/// Full record of one view's transform; replaying the record reproduces
/// the geometric op exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub flip: bool,
    /// (top, left, height, width) source crop.
    pub crop_rect: (usize, usize, usize, usize),
    pub out_size: (usize, usize),
    pub photometric: PhotometricRecord,
    pub seed: u64,
}

/// Sample and apply a weak (geometric) augmentation.
pub fn weak_augment(
    image: &ImageGrid,
    label: Option<&LabelGrid>,
    cfg: &WeakAugConfig,
    seed: u64,
) -> Result<(ImageGrid, Option<LabelGrid>, AugmentRecord)> {
    if let Some(lab) = label {
        if !lab.matches_shape(image) {
            return Err(contract_err!("image/label shapes differ"));
        }
    }
    if cfg.crop_scale.0 <= 0.0 || cfg.crop_scale.1 > 1.0 || cfg.crop_scale.0 > cfg.crop_scale.1 {
        return Err(config_err!("crop scale range {:?} invalid", cfg.crop_scale));
    }
    let mut rng = Stream::new(seed, Purpose::WeakAug, 0);
    let scale = rng.uniform_in(cfg.crop_scale.0, cfg.crop_scale.1);
    let crop_h = (round(image.height as f64 * scale) as usize).clamp(1, image.height);
    let crop_w = (round(image.width as f64 * scale) as usize).clamp(1, image.width);
    let top = if crop_h < image.height {
        rng.below(image.height - crop_h + 1)
    } else {
        0
    };
    let left = if crop_w < image.width {
        rng.below(image.width - crop_w + 1)
    } else {
        0
    };
    let flip = rng.chance(cfg.flip_prob);
    let record = AugmentRecord {
        flip,
        crop_rect: (top, left, crop_h, crop_w),
        out_size: cfg.out_size,
        photometric: PhotometricRecord::identity(),
        seed,
    };
    let out_image = apply_record_to_image(image, &record)?;
    let out_label = label.map(|l| apply_record_to_label(l, &record)).transpose()?;
    Ok((out_image, out_label, record))
}

/// Replay a record's geometric transform on an image (bilinear resampling).
pub fn apply_record_to_image(image: &ImageGrid, record: &AugmentRecord) -> Result<ImageGrid> {
    let (top, left, crop_h, crop_w) = record.crop_rect;
    if top + crop_h > image.height || left + crop_w > image.width {
        return Err(config_err!(
            "crop {:?} exceeds image {}x{}",
            record.crop_rect,
            image.height,
            image.width
        ));
    }
    let mut crop = Tensor3::zeros(3, crop_h, crop_w);
    for c in 0..3 {
        for i in 0..crop_h {
            for j in 0..crop_w {
                crop.set(c, i, j, image.get(c, top + i, left + j));
            }
        }
    }
    let resized = bilinear_resize(&crop, record.out_size.0, record.out_size.1);
    let (oh, ow) = record.out_size;
    let mut out = ImageGrid::zeros(oh, ow);
    for c in 0..3 {
        for i in 0..oh {
            for j in 0..ow {
                let sj = if record.flip { ow - 1 - j } else { j };
                out.set(c, i, j, resized.get(c, i, sj).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Replay a record's geometric transform on a label grid (nearest-neighbor
/// resampling; ignore values survive untouched).
pub fn apply_record_to_label(label: &LabelGrid, record: &AugmentRecord) -> Result<LabelGrid> {
    let (top, left, crop_h, crop_w) = record.crop_rect;
    if top + crop_h > label.height || left + crop_w > label.width {
        return Err(config_err!("crop exceeds label bounds"));
    }
    let (oh, ow) = record.out_size;
    let mut out = LabelGrid::filled(oh, ow, 0);
    for i in 0..oh {
        // Nearest-neighbor with half-pixel centers, mirroring the bilinear
        // sampling grid.
        let si = nearest_src(i, oh, crop_h);
        for j in 0..ow {
            let jj = if record.flip { ow - 1 - j } else { j };
            let sj = nearest_src(jj, ow, crop_w);
            out.set(i, j, label.get(top + si, left + sj));
        }
    }
    Ok(out)
}

#[inline]
fn nearest_src(i: usize, out_n: usize, in_n: usize) -> usize {
    let pos = (i as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5;
    (round(pos).max(0.0) as usize).min(in_n - 1)
}

/// Sample and apply a strong (photometric-only) augmentation on top of a
/// weak view. No geometric change, so label alignment is preserved.
pub fn strong_augment(
    image: &ImageGrid,
    cfg: &StrongAugConfig,
    seed: u64,
) -> Result<(ImageGrid, PhotometricRecord)> {
    let mut rng = Stream::new(seed, Purpose::StrongAug, 0);
    let j = cfg.color_jitter;
    let mut rec = PhotometricRecord::identity();
    for c in 0..3 {
        rec.gains[c] = rng.uniform_in(1.0 - j, 1.0 + j);
        rec.biases[c] = rng.uniform_in(-j / 2.0, j / 2.0);
    }
    rec.contrast = rng.uniform_in(cfg.contrast_range.0, cfg.contrast_range.1);
    rec.blur_sigma = if cfg.blur_sigma_max > 0.0 && rng.chance(cfg.blur_prob) {
        rng.uniform_in(0.1, cfg.blur_sigma_max)
    } else {
        0.0
    };
    let side_h = ((image.height as f64 * cfg.cutout_size) as usize).max(1);
    let side_w = ((image.width as f64 * cfg.cutout_size) as usize).max(1);
    for _ in 0..cfg.cutout_count {
        let top = rng.below(image.height - side_h + 1);
        let left = rng.below(image.width - side_w + 1);
        rec.cutouts.push((top, left, side_h, side_w));
    }
    let out = apply_photometric(image, &rec, cfg.cutout_fill)?;
    Ok((out, rec))
}

/// Replay a photometric record.
pub fn apply_photometric(
    image: &ImageGrid,
    rec: &PhotometricRecord,
    cutout_fill: [f64; 3],
) -> Result<ImageGrid> {
    let (h, w) = (image.height, image.width);
    let mut out = image.clone();
    // Color jitter + contrast.
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let mut v = image.get(c, i, j) * rec.gains[c] + rec.biases[c];
                if rec.contrast != 1.0 {
                    v = (v - 0.5) * rec.contrast + 0.5;
                }
                out.set(c, i, j, v);
            }
        }
    }
    // Gaussian blur (separable, replicated edges, normalized kernel).
    if rec.blur_sigma > 0.0 {
        let sigma = rec.blur_sigma;
        let radius = ceil(2.0 * sigma) as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|k| exp(-(k * k) as f64 / (2.0 * sigma * sigma)))
            .collect();
        let ksum: f64 = kernel.iter().sum();
        let mut tmp = out.clone();
        for c in 0..3 {
            for i in 0..h {
                for jj in 0..w {
                    let mut acc = 0.0;
                    for (n, &kv) in kernel.iter().enumerate() {
                        let sj = (jj as isize + n as isize - radius).clamp(0, w as isize - 1);
                        acc += kv * out.get(c, i, sj as usize);
                    }
                    tmp.set(c, i, jj, acc / ksum);
                }
            }
        }
        for c in 0..3 {
            for i in 0..h {
                for jj in 0..w {
                    let mut acc = 0.0;
                    for (n, &kv) in kernel.iter().enumerate() {
                        let si = (i as isize + n as isize - radius).clamp(0, h as isize - 1);
                        acc += kv * tmp.get(c, si as usize, jj);
                    }
                    out.set(c, i, jj, acc / ksum);
                }
            }
        }
    }
    // Cutout.
    for &(top, left, ch, cw) in &rec.cutouts {
        if top + ch > h || left + cw > w {
            return Err(contract_err!("cutout rectangle out of bounds"));
        }
        for c in 0..3 {
            for i in top..top + ch {
                for j in left..left + cw {
                    out.set(c, i, j, cutout_fill[c]);
                }
            }
        }
    }
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, DatasetSpec};

    fn sample_scene() -> (ImageGrid, LabelGrid) {
        generate_scene(&DatasetSpec::default(), 7).unwrap()
    }

    #[test]
    fn identity_geometry_is_exact() {
        let (img, lab) = sample_scene();
        let record = AugmentRecord {
            flip: false,
            crop_rect: (0, 0, img.height, img.width),
            out_size: (img.height, img.width),
            photometric: PhotometricRecord::identity(),
            seed: 0,
        };
        let out = apply_record_to_image(&img, &record).unwrap();
        assert_eq!(out, img);
        let out_lab = apply_record_to_label(&lab, &record).unwrap();
        assert_eq!(out_lab, lab);
    }

    #[test]
    fn flip_moves_columns() {
        let (img, _) = sample_scene();
        let record = AugmentRecord {
            flip: true,
            crop_rect: (0, 0, img.height, img.width),
            out_size: (img.height, img.width),
            photometric: PhotometricRecord::identity(),
            seed: 0,
        };
        let out = apply_record_to_image(&img, &record).unwrap();
        let w = img.width;
        for c in 0..3 {
            for j in 0..w {
                assert_eq!(out.get(c, 10, j), img.get(c, 10, w - 1 - j));
            }
        }
    }

    #[test]
    fn record_replay_is_deterministic() {
        let (img, lab) = sample_scene();
        let cfg = WeakAugConfig::default();
        let (_, _, record) = weak_augment(&img, Some(&lab), &cfg, 99).unwrap();
        let a = apply_record_to_label(&lab, &record).unwrap();
        let b = apply_record_to_label(&lab, &record).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weak_augment_deterministic_per_seed() {
        let (img, lab) = sample_scene();
        let cfg = WeakAugConfig::default();
        let (i1, l1, r1) = weak_augment(&img, Some(&lab), &cfg, 5).unwrap();
        let (i2, l2, r2) = weak_augment(&img, Some(&lab), &cfg, 5).unwrap();
        assert_eq!(i1, i2);
        assert_eq!(l1, l2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let (img, _) = sample_scene();
        let record = AugmentRecord {
            flip: false,
            crop_rect: (0, 0, img.height + 1, img.width),
            out_size: (32, 32),
            photometric: PhotometricRecord::identity(),
            seed: 0,
        };
        assert!(apply_record_to_image(&img, &record).is_err());
    }

    #[test]
    fn zero_magnitude_strong_augment_is_identity() {
        let (img, _) = sample_scene();
        let cfg = StrongAugConfig {
            color_jitter: 0.0,
            contrast_range: (1.0, 1.0),
            blur_sigma_max: 0.0,
            blur_prob: 0.0,
            cutout_count: 0,
            cutout_size: 0.1,
            cutout_fill: [0.0; 3],
        };
        let (out, rec) = strong_augment(&img, &cfg, 3).unwrap();
        assert_eq!(out, img);
        assert_eq!(rec.cutouts.len(), 0);
    }

    #[test]
    fn cutout_fills_with_dataset_mean() {
        let (img, _) = sample_scene();
        let mut rec = PhotometricRecord::identity();
        rec.cutouts.push((4, 6, 5, 5));
        let fill = [0.41, 0.42, 0.43];
        let out = apply_photometric(&img, &rec, fill).unwrap();
        for c in 0..3 {
            for i in 4..9 {
                for j in 6..11 {
                    assert_eq!(out.get(c, i, j), fill[c]);
                }
            }
        }
    }

    #[test]
    fn strong_output_stays_in_unit_range() {
        let (img, _) = sample_scene();
        let cfg = StrongAugConfig::default();
        for seed in 0..10 {
            let (out, _) = strong_augment(&img, &cfg, seed).unwrap();
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
