//! Analytic receptive-field arithmetic.
//!
//! For a stack of sliding-window layers the receptive field of one output
//! cell follows the standard recurrence over (window start, jump, size):
//! per layer with kernel `k`, stride `s`, padding `p`:
//! `start -= p * jump; size += (k - 1) * jump; jump *= s`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// One sliding-window layer as seen by the receptive-field recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Receptive-field description of a feature plane relative to the input.
///
/// Feature cell `(u, v)` is influenced exactly by input pixels
/// `[offset + u*stride, offset + u*stride + rf_size)` per axis (clipped to
/// the image); `offset` is typically negative when layers pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfGeometry {
    pub stride: usize,
    pub rf_size: usize,
    pub offset: isize,
}

impl RfGeometry {
    /// Clipped input window `[lo, hi)` of feature cell index `u` along one
    /// axis of length `extent`.
    pub fn window(&self, u: usize, extent: usize) -> (usize, usize) {
        let lo = self.offset + (u * self.stride) as isize;
        let hi = lo + self.rf_size as isize;
        (lo.max(0) as usize, (hi.max(0) as usize).min(extent))
    }

    /// Center pixel of feature cell `u` (exact for odd `rf_size`).
    pub fn center(&self, u: usize) -> isize {
        self.offset + (u * self.stride) as isize + (self.rf_size as isize - 1) / 2
    }
}

/// Apply the receptive-field recurrence across `layers` (input-first order).
pub fn rf_geometry(layers: &[LayerGeometry]) -> RfGeometry {
    let mut stride = 1usize;
    let mut rf_size = 1usize;
    let mut offset = 0isize;
    for layer in layers {
        offset -= layer.pad as isize * stride as isize;
        rf_size += (layer.kernel - 1) * stride;
        stride *= layer.stride;
    }
    RfGeometry {
        stride,
        rf_size,
        offset,
    }
}

/// Geometry of a whole feature plane: receptive field plus plane extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub rf: RfGeometry,
    /// Feature plane height/width (number of patch rows/cols).
    pub grid_h: usize,
    pub grid_w: usize,
    /// Input image height/width.
    pub image_h: usize,
    pub image_w: usize,
}

impl PatchGeometry {
    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

/// Convenience: geometry list for a conv stack described as (k, s, p).
pub fn layers(specs: &[(usize, usize, usize)]) -> Vec<LayerGeometry> {
    specs
        .iter()
        .map(|&(kernel, stride, pad)| LayerGeometry { kernel, stride, pad })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_3x3_conv() {
        let g = rf_geometry(&layers(&[(3, 1, 1)]));
        assert_eq!(g.stride, 1);
        assert_eq!(g.rf_size, 3);
        assert_eq!(g.offset, -1);
        assert_eq!(g.window(0, 10), (0, 2));
        assert_eq!(g.window(5, 10), (4, 7));
    }

    #[test]
    fn two_convs_then_stride2_pool() {
        // Two 3x3 stride-1 convs followed by a 2x2 stride-2 pool.
        let g = rf_geometry(&layers(&[(3, 1, 1), (3, 1, 1), (2, 2, 0)]));
        assert_eq!(g.rf_size, 6);
        assert_eq!(g.stride, 2);
    }

    #[test]
    fn strided_conv_pair() {
        // 3x3 stride-2 pad-1 then 3x3 stride-1 pad-1: rf 7, stride 2.
        let g = rf_geometry(&layers(&[(3, 2, 1), (3, 1, 1)]));
        assert_eq!(g.rf_size, 7);
        assert_eq!(g.stride, 2);
        assert_eq!(g.offset, -3);
        // Cell 0 sees pixels [0, 4); cell 1 sees [0, 6).
        assert_eq!(g.window(0, 64), (0, 4));
        assert_eq!(g.window(1, 64), (0, 6));
        assert_eq!(g.window(3, 64), (3, 10));
    }
}
