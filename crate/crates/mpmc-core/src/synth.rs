//! Procedural multi-class scene synthesis.
//!
//! Scenes are filled ellipses and triangles with class-correlated colors on
//! a textured background, generated as a pure function of
//! `(DatasetSpec, scene_seed)`. The long-tail knob `class_frequency_skew`
//! biases which foreground classes get drawn, and the size range includes
//! objects well under 1% of the pixel area.

use alloc::vec::Vec;
use libm::{cos, pow, sin, sqrt};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::grid::{ImageGrid, LabelGrid};
use crate::rng::{Purpose, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub image_size: (usize, usize),
    pub shapes_per_scene: (usize, usize),
    /// >= 1; class `c` is drawn with weight `skew^-(c-1)`.
    pub class_frequency_skew: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_classes: 5,
            image_size: (64, 64),
            shapes_per_scene: (2, 5),
            class_frequency_skew: 2.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 3 || self.num_classes > 32 {
            return Err(config_err!(
                "num_classes must be in [3, 32], got {}",
                self.num_classes
            ));
        }
        let (h, w) = self.image_size;
        if h < 32 || w < 32 {
            return Err(config_err!("image_size must be at least 32x32, got {h}x{w}"));
        }
        if self.shapes_per_scene.0 < 1 || self.shapes_per_scene.0 > self.shapes_per_scene.1 {
            return Err(config_err!(
                "shapes_per_scene range invalid: {:?}",
                self.shapes_per_scene
            ));
        }
        if self.class_frequency_skew < 1.0 {
            return Err(config_err!(
                "class_frequency_skew must be >= 1, got {}",
                self.class_frequency_skew
            ));
        }
        Ok(())
    }
}

/// Base color per class: background is dark gray, foreground classes walk
/// around the hue circle.
pub fn class_color(class: usize, num_classes: usize) -> [f64; 3] {
    if class == 0 {
        return [0.25, 0.25, 0.28];
    }
    let hue = (class - 1) as f64 / (num_classes - 1) as f64;
    hsv_to_rgb(hue, 0.75, 0.85)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0) as usize % 6;
    let f = h * 6.0 - (h * 6.0) as usize as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

enum Shape {
    Ellipse {
        ci: f64,
        cj: f64,
        a: f64,
        b: f64,
        theta: f64,
    },
    Triangle {
        pts: [(f64, f64); 3],
    },
}

impl Shape {
    fn contains(&self, i: f64, j: f64) -> bool {
        match self {
            Shape::Ellipse { ci, cj, a, b, theta } => {
                let di = i - ci;
                let dj = j - cj;
                let u = di * cos(*theta) + dj * sin(*theta);
                let v = -di * sin(*theta) + dj * cos(*theta);
                (u / a) * (u / a) + (v / b) * (v / b) <= 1.0
            }
            Shape::Triangle { pts } => {
                let sign = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
                    (p.0 - r.0) * (q.1 - r.1) - (q.0 - r.0) * (p.1 - r.1)
                };
                let d1 = sign((i, j), pts[0], pts[1]);
                let d2 = sign((i, j), pts[1], pts[2]);
                let d3 = sign((i, j), pts[2], pts[0]);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

/// Generate one scene. Deterministic for `(spec, scene_seed)`; always
/// contains at least one foreground shape.
pub fn generate_scene(spec: &DatasetSpec, scene_seed: u64) -> Result<(ImageGrid, LabelGrid)> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let mut rng = Stream::new(spec.seed, Purpose::Scene, scene_seed);

    let mut image = ImageGrid::zeros(h, w);
    let mut label = LabelGrid::filled(h, w, 0);

    // Textured background.
    let bg = class_color(0, spec.num_classes);
    let bg_jitter: Vec<f64> = (0..3).map(|_| rng.normal() * 0.03).collect();
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let v = bg[c] + bg_jitter[c] + rng.normal() * 0.04;
                image.set(c, i, j, v.clamp(0.0, 1.0));
            }
        }
    }

    let fg_classes = spec.num_classes - 1;
    let weights: Vec<f64> = (0..fg_classes)
        .map(|k| pow(spec.class_frequency_skew, -(k as f64)))
        .collect();

    let min_side = h.min(w) as f64;
    let n_shapes =
        spec.shapes_per_scene.0 + rng.below(spec.shapes_per_scene.1 - spec.shapes_per_scene.0 + 1);

    for _ in 0..n_shapes {
        let class = 1 + rng.weighted(&weights) as u8;
        // Log-uniform radius from tiny (under 1% of pixels) to a quarter frame.
        let r_lo = 2.5_f64;
        let r_hi = min_side / 4.0;
        let radius = r_lo * pow(r_hi / r_lo, rng.uniform());
        let ci = rng.uniform_in(0.0, h as f64);
        let cj = rng.uniform_in(0.0, w as f64);

        let shape = if rng.chance(0.5) {
            Shape::Ellipse {
                ci,
                cj,
                a: radius * rng.uniform_in(0.6, 1.4),
                b: radius * rng.uniform_in(0.6, 1.4),
                theta: rng.uniform_in(0.0, core::f64::consts::PI),
            }
        } else {
            let mut pts = [(0.0, 0.0); 3];
            for p in &mut pts {
                let ang = rng.uniform_in(0.0, 2.0 * core::f64::consts::PI);
                let rr = radius * rng.uniform_in(0.7, 1.3);
                *p = (ci + rr * cos(ang), cj + rr * sin(ang));
            }
            Shape::Triangle { pts }
        };

        let base = class_color(class as usize, spec.num_classes);
        let inst_jitter: Vec<f64> = (0..3).map(|_| rng.normal() * 0.06).collect();
        let lo_i = ((ci - 2.0 * radius).max(0.0)) as usize;
        let hi_i = ((ci + 2.0 * radius).min(h as f64 - 1.0)) as usize;
        let lo_j = ((cj - 2.0 * radius).max(0.0)) as usize;
        let hi_j = ((cj + 2.0 * radius).min(w as f64 - 1.0)) as usize;
        for i in lo_i..=hi_i {
            for j in lo_j..=hi_j {
                if shape.contains(i as f64 + 0.5, j as f64 + 0.5) {
                    label.set(i, j, class);
                    for c in 0..3 {
                        let v = base[c] + inst_jitter[c] + rng.normal() * 0.04;
                        image.set(c, i, j, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }

    // Guarantee at least one visible foreground shape.
    if label.labels.iter().all(|&v| v == 0) {
        let class = 1 + rng.weighted(&weights) as u8;
        let base = class_color(class as usize, spec.num_classes);
        let ci = h / 2;
        let cj = w / 2;
        let r = (min_side / 6.0) as usize;
        for i in ci.saturating_sub(r)..(ci + r).min(h) {
            for j in cj.saturating_sub(r)..(cj + r).min(w) {
                let di = i as f64 - ci as f64;
                let dj = j as f64 - cj as f64;
                if sqrt(di * di + dj * dj) <= r as f64 {
                    label.set(i, j, class);
                    for c in 0..3 {
                        image.set(c, i, j, (base[c] + rng.normal() * 0.04).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }

    image.quantize_u8();
    Ok((image, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_shapes() {
        let spec = DatasetSpec {
            shapes_per_scene: (0, 3),
            ..DatasetSpec::default()
        };
        assert!(generate_scene(&spec, 0).is_err());
    }

    #[test]
    fn rejects_class_count_out_of_range() {
        let spec = DatasetSpec {
            num_classes: 40,
            ..DatasetSpec::default()
        };
        assert!(generate_scene(&spec, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = DatasetSpec::default();
        let (i1, l1) = generate_scene(&spec, 42).unwrap();
        let (i2, l2) = generate_scene(&spec, 42).unwrap();
        assert_eq!(i1, i2);
        assert_eq!(l1, l2);
        let (i3, _) = generate_scene(&spec, 43).unwrap();
        assert_ne!(i1, i3);
    }

    #[test]
    fn scenes_have_foreground_and_valid_labels() {
        let spec = DatasetSpec::default();
        for s in 0..20 {
            let (img, lab) = generate_scene(&spec, s).unwrap();
            img.validate().unwrap();
            lab.validate(spec.num_classes).unwrap();
            assert!(lab.labels.iter().any(|&v| v != 0), "scene {s} is empty");
        }
    }

    #[test]
    fn skew_orders_class_pixel_histogram() {
        let spec = DatasetSpec {
            num_classes: 4,
            class_frequency_skew: 3.0,
            ..DatasetSpec::default()
        };
        let mut counts = [0u64; 4];
        for s in 0..1000 {
            let (_, lab) = generate_scene(&spec, s).unwrap();
            for &v in &lab.labels {
                counts[v as usize] += 1;
            }
        }
        assert!(counts[1] > counts[2], "{counts:?}");
        assert!(counts[2] > counts[3], "{counts:?}");
    }

    #[test]
    fn some_scenes_contain_small_objects() {
        let spec = DatasetSpec::default();
        let (h, w) = spec.image_size;
        let threshold = (h * w) / 100;
        let mut found = false;
        for s in 0..50 {
            let (_, lab) = generate_scene(&spec, s).unwrap();
            for class in 1..spec.num_classes as u8 {
                let n = lab.labels.iter().filter(|&&v| v == class).count();
                if n > 0 && n < threshold {
                    found = true;
                }
            }
        }
        assert!(found, "no small objects in 50 scenes");
    }
}
