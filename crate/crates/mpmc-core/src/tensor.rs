//! A minimal channel-major 3D tensor for the toy networks.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// `c * h * w` values stored as `data[ch * h * w + i * w + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    #[inline]
    pub fn add(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] += v;
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack tensors of identical spatial shape along the channel axis.
    pub fn concat_channels(parts: &[&Tensor3]) -> Tensor3 {
        let h = parts[0].height;
        let w = parts[0].width;
        debug_assert!(parts.iter().all(|p| p.height == h && p.width == w));
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut out = Tensor3::zeros(channels, h, w);
        let mut offset = 0;
        for p in parts {
            let n = p.channels * h * w;
            out.data[offset..offset + n].copy_from_slice(&p.data);
            offset += n;
        }
        out
    }

    /// Split a channel-gradient back into per-part gradients (inverse of
    /// [`Tensor3::concat_channels`]).
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor3> {
        debug_assert_eq!(sizes.iter().sum::<usize>(), self.channels);
        let mut out = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &c in sizes {
            let n = c * self.height * self.width;
            out.push(Tensor3 {
                channels: c,
                height: self.height,
                width: self.width,
                data: self.data[offset..offset + n].to_vec(),
            });
            offset += n;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_round_trips() {
        let mut a = Tensor3::zeros(2, 3, 3);
        let mut b = Tensor3::zeros(1, 3, 3);
        a.set(1, 2, 2, 5.0);
        b.set(0, 0, 1, -2.0);
        let cat = Tensor3::concat_channels(&[&a, &b]);
        assert_eq!(cat.channels, 3);
        assert_eq!(cat.get(1, 2, 2), 5.0);
        assert_eq!(cat.get(2, 0, 1), -2.0);
        let parts = cat.split_channels(&[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
