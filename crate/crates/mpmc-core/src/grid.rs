//! Dense image and label grids.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};

/// Label value marking pixels excluded from every loss and metric.
pub const IGNORE: u8 = 255;

/// An RGB image with channel values in [0, 1], stored channel-major
/// (`data[c * h * w + i * w + j]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        ImageGrid {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[c * self.height * self.width + i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[c * self.height * self.width + i * self.width + j] = v;
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(config_err!(
                "image must be at least 32x32, got {}x{}",
                self.height,
                self.width
            ));
        }
        if self.data.len() != 3 * self.height * self.width {
            return Err(contract_err!("image buffer length mismatch"));
        }
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(contract_err!("image channel value outside [0, 1]"));
        }
        Ok(())
    }

    /// Snap every channel to the nearest 8-bit level. Scenes are quantized
    /// at generation time so the PNG round trip is bit exact.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            let q = libm::round(v.clamp(0.0, 1.0) * 255.0);
            *v = q / 255.0;
        }
    }
}

/// A dense class map; values in `{0..C-1}` or [`IGNORE`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelGrid {
    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        LabelGrid {
            height,
            width,
            labels: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.labels[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        self.labels[i * self.width + j] = v;
    }

    /// Check every non-ignore value is below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.labels.len() != self.height * self.width {
            return Err(contract_err!("label buffer length mismatch"));
        }
        for &v in &self.labels {
            if v != IGNORE && (v as usize) >= num_classes {
                return Err(contract_err!(
                    "label value {v} out of range for {num_classes} classes"
                ));
            }
        }
        Ok(())
    }

    pub fn matches_shape(&self, image: &ImageGrid) -> bool {
        self.height == image.height && self.width == image.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_validation_rejects_out_of_range() {
        let mut g = LabelGrid::filled(4, 4, 0);
        g.set(1, 1, 7);
        assert!(g.validate(8).is_ok());
        assert!(g.validate(7).is_err());
        g.set(1, 1, IGNORE);
        assert!(g.validate(7).is_ok());
    }

    #[test]
    fn quantization_is_idempotent() {
        let mut img = ImageGrid::zeros(32, 32);
        img.set(0, 3, 5, 0.3333);
        img.quantize_u8();
        let once = img.clone();
        img.quantize_u8();
        assert_eq!(once, img);
    }
}
