//! Central finite-difference probing of analytic gradients.

use alloc::vec::Vec;

use crate::error::{contract_err, Result};

/// Outcome of probing a set of coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over the probed coordinates.
    pub max_rel_error: f64,
    /// Coordinate where the largest error occurred.
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compare `analytic[k]` against a central finite difference of `loss_fn`
/// at each coordinate in `coords`. The relative error denominator is
/// floored at `floor` so that near-zero gradients compare absolutely.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(contract_err!(
            "analytic gradient length {} does not match params {}",
            analytic.len(),
            params.len()
        ));
    }
    if coords.is_empty() {
        return Err(contract_err!("no coordinates to probe"));
    }
    let mut scratch: Vec<f64> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: coords[0],
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for &k in coords {
        if k >= params.len() {
            return Err(contract_err!("probe coordinate {k} out of range"));
        }
        let orig = scratch[k];
        scratch[k] = orig + eps;
        let plus = loss_fn(&scratch)?;
        scratch[k] = orig - eps;
        let minus = loss_fn(&scratch)?;
        scratch[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[k].abs().max(numeric.abs()).max(floor);
        let rel = (numeric - analytic[k]).abs() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coord = k;
            report.worst_analytic = analytic[k];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

/// Evenly spread `count` probe coordinates over `len` parameters.
pub fn spread_coords(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return Vec::new();
    }
    let count = count.min(len);
    (0..count).map(|n| n * len / count).collect()
}
