//! Axis-aligned voxel boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

/// A box of voxels: `min` inclusive, `max` exclusive, zero-based.
///
/// A single-slice 2D box is the `max[2] == min[2] + 1` case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox3 {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BBox3 {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Result<Self> {
        let b = BBox3 { min, max };
        if (0..3).any(|a| min[a] >= max[a]) {
            return Err(Error::InvalidSpec {
                field: "bbox".into(),
                reason: format!("empty box {min:?}..{max:?}"),
            });
        }
        Ok(b)
    }

    /// Wire layout `[x0, y0, z0, x1, y1, z1]`.
    pub fn to_array(&self) -> [usize; 6] {
        [
            self.min[0],
            self.min[1],
            self.min[2],
            self.max[0],
            self.max[1],
            self.max[2],
        ]
    }

    pub fn from_array(a: [usize; 6]) -> Result<Self> {
        BBox3::new([a[0], a[1], a[2]], [a[3], a[4], a[5]])
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }

    pub fn contains_box(&self, other: &BBox3) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] < self.max[a] && self.max[a] <= dims[a])
    }

    /// Rasterize onto a grid with the mask's geometry.
    pub fn to_mask(&self, like: &BinaryMask) -> BinaryMask {
        let mut out = BinaryMask::empty(like.geometry.clone());
        let dims = like.dims();
        for k in self.min[2]..self.max[2].min(dims[2]) {
            for j in self.min[1]..self.max[1].min(dims[1]) {
                for i in self.min[0]..self.max[0].min(dims[0]) {
                    out.set(i, j, k, true);
                }
            }
        }
        out
    }
}

/// Tight box around the foreground.
pub fn mask_bbox(mask: &BinaryMask) -> Result<BBox3> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for p in mask.foreground() {
        any = true;
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a] + 1);
        }
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    Ok(BBox3 { min: lo, max: hi })
}

/// Signed per-face moves; positive grows the box outward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceDeltas {
    pub x0: i64,
    pub x1: i64,
    pub y0: i64,
    pub y1: i64,
    pub z0: i64,
    pub z1: i64,
}

impl FaceDeltas {
    pub fn in_plane(x0: i64, x1: i64, y0: i64, y1: i64) -> Self {
        FaceDeltas {
            x0,
            x1,
            y0,
            y1,
            z0: 0,
            z1: 0,
        }
    }

    pub fn as_array(&self) -> [i64; 6] {
        [self.x0, self.x1, self.y0, self.y1, self.z0, self.z1]
    }
}

/// Move each face by its delta, clip to `[0, dims]`.
///
/// An axis that would become empty collapses to the single voxel at the
/// pre-move midpoint `(lo + hi) / 2` (integer division).
pub fn expand_bbox(b: &BBox3, deltas: &FaceDeltas, dims: [usize; 3]) -> BBox3 {
    let d = deltas.as_array();
    let mut out = *b;
    for a in 0..3 {
        let n = dims[a] as i64;
        let lo0 = b.min[a] as i64;
        let hi0 = b.max[a] as i64;
        let lo = (lo0 - d[2 * a]).clamp(0, n);
        let hi = (hi0 + d[2 * a + 1]).clamp(0, n);
        if lo < hi {
            out.min[a] = lo as usize;
            out.max[a] = hi as usize;
        } else {
            let mid = ((lo0 + hi0) / 2).clamp(0, n - 1);
            out.min[a] = mid as usize;
            out.max[a] = mid as usize + 1;
        }
    }
    out
}
