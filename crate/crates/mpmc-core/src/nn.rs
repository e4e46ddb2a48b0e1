//! Hand-written forward/backward primitives: 2D convolution, ReLU,
//! same-shape average pooling and bilinear resizing.
//!
//! Parameters live in one flat `Vec<f64>` per network; each layer records
//! offsets into it. Gradients are accumulated into a same-length flat
//! buffer, which keeps finite-difference probing, SGD, EMA updates and
//! checkpointing trivial.

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::rng::Stream;
use crate::tensor::Tensor3;

/// Allocates disjoint slices of a flat parameter vector.
#[derive(Debug, Default, Clone)]
pub struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn alloc(&mut self, len: usize) -> usize {
        let off = self.next;
        self.next += len;
        off
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// A 2D convolution with zero padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv {
    pub fn new(
        layout: &mut LayoutBuilder,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w_off = layout.alloc(out_c * in_c * kernel * kernel);
        let b_off = layout.alloc(out_c);
        Conv {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            w_off,
            b_off,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// He-style init: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn init(&self, params: &mut [f64], rng: &mut Stream) {
        let fan_in = (self.in_c * self.kernel * self.kernel) as f64;
        let scale = sqrt(2.0 / fan_in);
        let n = self.out_c * self.in_c * self.kernel * self.kernel;
        for v in &mut params[self.w_off..self.w_off + n] {
            *v = rng.normal() * scale;
        }
        for v in &mut params[self.b_off..self.b_off + self.out_c] {
            *v = 0.0;
        }
    }

    pub fn forward(&self, params: &[f64], x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.channels, self.in_c);
        let (oh, ow) = self.out_dims(x.height, x.width);
        let mut out = Tensor3::zeros(self.out_c, oh, ow);
        let k = self.kernel;
        for o in 0..self.out_c {
            let bias = params[self.b_off + o];
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias;
                    let i0 = (i * self.stride) as isize - self.pad as isize;
                    let j0 = (j * self.stride) as isize - self.pad as isize;
                    for c in 0..self.in_c {
                        let wbase = self.w_off + ((o * self.in_c + c) * k) * k;
                        for ki in 0..k {
                            let ii = i0 + ki as isize;
                            if ii < 0 || ii >= x.height as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let jj = j0 + kj as isize;
                                if jj < 0 || jj >= x.width as isize {
                                    continue;
                                }
                                acc += params[wbase + ki * k + kj]
                                    * x.get(c, ii as usize, jj as usize);
                            }
                        }
                    }
                    out.set(o, i, j, acc);
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &Tensor3, gout: &Tensor3) -> Tensor3 {
        let mut gin = Tensor3::zeros(x.channels, x.height, x.width);
        let k = self.kernel;
        for o in 0..self.out_c {
            for i in 0..gout.height {
                for j in 0..gout.width {
                    let g = gout.get(o, i, j);
                    if g == 0.0 {
                        continue;
                    }
                    grads[self.b_off + o] += g;
                    let i0 = (i * self.stride) as isize - self.pad as isize;
                    let j0 = (j * self.stride) as isize - self.pad as isize;
                    for c in 0..self.in_c {
                        let wbase = self.w_off + ((o * self.in_c + c) * k) * k;
                        for ki in 0..k {
                            let ii = i0 + ki as isize;
                            if ii < 0 || ii >= x.height as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let jj = j0 + kj as isize;
                                if jj < 0 || jj >= x.width as isize {
                                    continue;
                                }
                                let xi = x.get(c, ii as usize, jj as usize);
                                grads[wbase + ki * k + kj] += g * xi;
                                gin.add(c, ii as usize, jj as usize, g * params[wbase + ki * k + kj]);
                            }
                        }
                    }
                }
            }
        }
        gin
    }
}

pub fn relu_forward(x: &Tensor3) -> Tensor3 {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// `y` is the ReLU output from the forward pass.
pub fn relu_backward(y: &Tensor3, gout: &Tensor3) -> Tensor3 {
    let mut gin = gout.clone();
    for (g, &yv) in gin.data.iter_mut().zip(&y.data) {
        if yv <= 0.0 {
            *g = 0.0;
        }
    }
    gin
}

/// Same-shape average pooling with an odd kernel, stride 1 and zero
/// padding. The mean divides by the full kernel area including padded
/// zeros, so border behavior is deterministic.
pub fn avgpool_same(x: &Tensor3, kernel: usize) -> Tensor3 {
    debug_assert!(kernel % 2 == 1);
    let half = (kernel / 2) as isize;
    let norm = 1.0 / (kernel * kernel) as f64;
    let mut out = Tensor3::zeros(x.channels, x.height, x.width);
    for c in 0..x.channels {
        for i in 0..x.height {
            let ilo = (i as isize - half).max(0) as usize;
            let ihi = ((i as isize + half) as usize).min(x.height - 1);
            for j in 0..x.width {
                let jlo = (j as isize - half).max(0) as usize;
                let jhi = ((j as isize + half) as usize).min(x.width - 1);
                let mut acc = 0.0;
                for ii in ilo..=ihi {
                    for jj in jlo..=jhi {
                        acc += x.get(c, ii, jj);
                    }
                }
                out.set(c, i, j, acc * norm);
            }
        }
    }
    out
}

/// The pooling kernel is symmetric, so the gradient is the same pooling
/// applied to the output gradient.
pub fn avgpool_same_backward(gout: &Tensor3, kernel: usize) -> Tensor3 {
    avgpool_same(gout, kernel)
}

/// Bilinear resize with half-pixel centers.
pub fn bilinear_resize(x: &Tensor3, out_h: usize, out_w: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(x.channels, out_h, out_w);
    for c in 0..x.channels {
        for i in 0..out_h {
            for j in 0..out_w {
                let (i0, i1, wi) = src_coords(i, out_h, x.height);
                let (j0, j1, wj) = src_coords(j, out_w, x.width);
                let v = x.get(c, i0, j0) * (1.0 - wi) * (1.0 - wj)
                    + x.get(c, i1, j0) * wi * (1.0 - wj)
                    + x.get(c, i0, j1) * (1.0 - wi) * wj
                    + x.get(c, i1, j1) * wi * wj;
                out.set(c, i, j, v);
            }
        }
    }
    out
}

pub fn bilinear_resize_backward(gout: &Tensor3, in_h: usize, in_w: usize) -> Tensor3 {
    let mut gin = Tensor3::zeros(gout.channels, in_h, in_w);
    for c in 0..gout.channels {
        for i in 0..gout.height {
            for j in 0..gout.width {
                let g = gout.get(c, i, j);
                let (i0, i1, wi) = src_coords(i, gout.height, in_h);
                let (j0, j1, wj) = src_coords(j, gout.width, in_w);
                gin.add(c, i0, j0, g * (1.0 - wi) * (1.0 - wj));
                gin.add(c, i1, j0, g * wi * (1.0 - wj));
                gin.add(c, i0, j1, g * (1.0 - wi) * wj);
                gin.add(c, i1, j1, g * wi * wj);
            }
        }
    }
    gin
}

#[inline]
fn src_coords(i: usize, out_n: usize, in_n: usize) -> (usize, usize, f64) {
    let scale = in_n as f64 / out_n as f64;
    let pos = (i as f64 + 0.5) * scale - 0.5;
    let pos = pos.clamp(0.0, in_n as f64 - 1.0);
    let i0 = pos as usize;
    let i1 = (i0 + 1).min(in_n - 1);
    (i0, i1, pos - i0 as f64)
}
