//! Patch-level multi-label targets and the pixel-to-patch map.
//!
//! Targets use the true (clipped) receptive-field window of each feature
//! cell; pixel ownership for per-pixel weights uses disjoint stride tiling
//! so every pixel has exactly one owning patch even when windows overlap.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::grid::{LabelGrid, IGNORE};
use crate::rf::PatchGeometry;

/// R x C binary presence matrix plus per-patch exclusion flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLabelMatrix {
    pub num_patches: usize,
    pub num_classes: usize,
    /// Row-major `targets[r * num_classes + c]`.
    pub targets: Vec<u8>,
    /// Patches whose receptive field is entirely ignore pixels; these are
    /// dropped from the multi-label loss.
    pub excluded: Vec<bool>,
    pub geometry: PatchGeometry,
}

impl PatchLabelMatrix {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.targets[r * self.num_classes + c] != 0
    }

    pub fn included_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| !e).count()
    }
}

/// Mark class `c` positive for patch `r` iff any non-ignore pixel of class
/// `c` falls inside `r`'s clipped receptive-field window.
pub fn patch_targets(
    label: &LabelGrid,
    geometry: &PatchGeometry,
    num_classes: usize,
) -> Result<PatchLabelMatrix> {
    if label.height != geometry.image_h || label.width != geometry.image_w {
        return Err(contract_err!(
            "label {}x{} does not match patch geometry image {}x{}",
            label.height,
            label.width,
            geometry.image_h,
            geometry.image_w
        ));
    }
    let num_patches = geometry.num_patches();
    let mut targets = vec![0u8; num_patches * num_classes];
    let mut excluded = vec![true; num_patches];

    for u in 0..geometry.grid_h {
        let (ilo, ihi) = geometry.rf.window(u, geometry.image_h);
        for v in 0..geometry.grid_w {
            let (jlo, jhi) = geometry.rf.window(v, geometry.image_w);
            let r = u * geometry.grid_w + v;
            for i in ilo..ihi {
                for j in jlo..jhi {
                    let class = label.get(i, j);
                    if class == IGNORE {
                        continue;
                    }
                    excluded[r] = false;
                    targets[r * num_classes + class as usize] = 1;
                }
            }
        }
    }
    Ok(PatchLabelMatrix {
        num_patches,
        num_classes,
        targets,
        excluded,
        geometry: *geometry,
    })
}

/// The feature cell owning pixel `(i, j)` under stride tiling.
pub fn pixel_to_patch(i: usize, j: usize, geometry: &PatchGeometry) -> Result<usize> {
    if i >= geometry.image_h || j >= geometry.image_w {
        return Err(contract_err!(
            "pixel ({i}, {j}) out of bounds for {}x{}",
            geometry.image_h,
            geometry.image_w
        ));
    }
    let stride = geometry.rf.stride;
    let u = (i / stride).min(geometry.grid_h - 1);
    let v = (j / stride).min(geometry.grid_w - 1);
    Ok(u * geometry.grid_w + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rf::RfGeometry;

    fn geom(stride: usize, rf: usize, offset: isize, h: usize, w: usize) -> PatchGeometry {
        PatchGeometry {
            rf: RfGeometry {
                stride,
                rf_size: rf,
                offset,
            },
            grid_h: h / stride,
            grid_w: w / stride,
            image_h: h,
            image_w: w,
        }
    }

    #[test]
    fn uniform_grid_is_one_hot() {
        let g = geom(4, 7, -3, 32, 32);
        let label = LabelGrid::filled(32, 32, 3);
        let m = patch_targets(&label, &g, 5).unwrap();
        for r in 0..m.num_patches {
            assert!(!m.excluded[r]);
            for c in 0..5 {
                assert_eq!(m.get(r, c), c == 3);
            }
        }
    }

    #[test]
    fn all_ignore_grid_is_fully_excluded() {
        let g = geom(4, 7, -3, 32, 32);
        let label = LabelGrid::filled(32, 32, IGNORE);
        let m = patch_targets(&label, &g, 5).unwrap();
        assert!(m.excluded.iter().all(|&e| e));
        assert!(m.targets.iter().all(|&t| t == 0));
    }

    #[test]
    fn pixel_to_patch_arithmetic() {
        let g = geom(4, 7, -3, 64, 64);
        assert_eq!(pixel_to_patch(0, 0, &g).unwrap(), 0);
        assert_eq!(pixel_to_patch(5, 9, &g).unwrap(), 16 + 2);
        assert!(pixel_to_patch(64, 0, &g).is_err());
    }

    #[test]
    fn tiling_partitions_the_image() {
        let g = geom(4, 7, -3, 32, 32);
        let mut counts = vec![0usize; g.num_patches()];
        for i in 0..32 {
            for j in 0..32 {
                counts[pixel_to_patch(i, j, &g).unwrap()] += 1;
            }
        }
        assert!(counts.iter().all(|&n| n == 16));
    }
}
