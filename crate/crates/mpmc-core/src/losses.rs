//! Shared loss numerics: stable sigmoid/softmax/softplus and the masked,
//! weighted per-pixel cross-entropy used by both the supervised and
//! pseudo-label objectives.

use alloc::vec::Vec;
use libm::{exp, log};

use crate::error::{contract_err, Result};
use crate::grid::{LabelGrid, IGNORE};
use crate::tensor::Tensor3;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before logs.
pub const EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Overflow-safe `log(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(exp(-x.abs()))
}

/// Per-pixel softmax over the channel axis.
pub fn softmax_channels(logits: &Tensor3) -> Tensor3 {
    let mut out = logits.clone();
    let (c_n, h, w) = (logits.channels, logits.height, logits.width);
    for i in 0..h {
        for j in 0..w {
            let mut maxv = f64::NEG_INFINITY;
            for c in 0..c_n {
                maxv = maxv.max(logits.get(c, i, j));
            }
            let mut total = 0.0;
            for c in 0..c_n {
                let e = exp(logits.get(c, i, j) - maxv);
                out.set(c, i, j, e);
                total += e;
            }
            for c in 0..c_n {
                let v = out.get(c, i, j) / total;
                out.set(c, i, j, v);
            }
        }
    }
    out
}

/// Result of a masked pixel-wise cross-entropy.
pub struct PixelCeResult {
    pub loss: f64,
    /// Gradient with respect to the logits.
    pub grad: Tensor3,
    /// Pixels that actually contributed.
    pub counted: usize,
}

/// Cross-entropy of `logits` against integer `targets`, skipping ignore
/// pixels and (optionally) pixels where `mask` is false, scaling each
/// pixel's term by `weights` when given, averaging over contributing
/// pixels. Zero contributing pixels yields loss 0 and a zero gradient.
pub fn pixel_cross_entropy(
    logits: &Tensor3,
    targets: &LabelGrid,
    weights: Option<&[f64]>,
    mask: Option<&[bool]>,
) -> Result<PixelCeResult> {
    let (c_n, h, w) = (logits.channels, logits.height, logits.width);
    if targets.height != h || targets.width != w {
        return Err(contract_err!(
            "target shape {}x{} does not match logits {h}x{w}",
            targets.height,
            targets.width
        ));
    }
    if let Some(ws) = weights {
        if ws.len() != h * w {
            return Err(contract_err!("weight map length mismatch"));
        }
    }
    if let Some(m) = mask {
        if m.len() != h * w {
            return Err(contract_err!("mask length mismatch"));
        }
    }

    let probs = softmax_channels(logits);
    let mut grad = Tensor3::zeros(c_n, h, w);
    let mut loss = 0.0;
    let mut counted = 0usize;
    let mut contributing: Vec<(usize, usize, f64, usize)> = Vec::new();

    for i in 0..h {
        for j in 0..w {
            let t = targets.get(i, j);
            if t == IGNORE {
                continue;
            }
            if (t as usize) >= c_n {
                return Err(contract_err!("target class {t} out of range"));
            }
            if let Some(m) = mask {
                if !m[i * w + j] {
                    continue;
                }
            }
            let wgt = weights.map_or(1.0, |ws| ws[i * w + j]);
            counted += 1;
            let p_t = probs.get(t as usize, i, j).max(EPS);
            loss += -wgt * log(p_t);
            contributing.push((i, j, wgt, t as usize));
        }
    }

    if counted == 0 {
        return Ok(PixelCeResult {
            loss: 0.0,
            grad,
            counted: 0,
        });
    }

    let inv = 1.0 / counted as f64;
    for (i, j, wgt, t) in contributing {
        for c in 0..c_n {
            let p = probs.get(c, i, j);
            let indicator = if c == t { 1.0 } else { 0.0 };
            grad.add(c, i, j, wgt * (p - indicator) * inv);
        }
    }
    Ok(PixelCeResult {
        loss: loss * inv,
        grad,
        counted,
    })
}

/// Soft-target binary cross-entropy `-(t log q + (1 - t) log(1 - q))`
/// with clamped `q`.
#[inline]
pub fn soft_bce(q: f64, target: f64) -> f64 {
    let qc = q.clamp(EPS, 1.0 - EPS);
    -(target * log(qc) + (1.0 - target) * log(1.0 - qc))
}

/// Clamp helper shared by the focal terms.
#[inline]
pub fn clamp_prob(q: f64) -> f64 {
    q.clamp(EPS, 1.0 - EPS)
}
