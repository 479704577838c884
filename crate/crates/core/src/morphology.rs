//! Binary erosion and dilation with small fixed neighbourhoods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    /// The six face neighbours.
    Cross6,
    /// The four face neighbours in the x-y plane.
    Cross4InPlane,
    /// The full 3x3x3 cube minus the centre.
    Cube26,
}

impl Neighborhood {
    pub fn offsets(self) -> Vec<[i64; 3]> {
        match self {
            Neighborhood::Cross6 => vec![
                [-1, 0, 0],
                [1, 0, 0],
                [0, -1, 0],
                [0, 1, 0],
                [0, 0, -1],
                [0, 0, 1],
            ],
            Neighborhood::Cross4InPlane => vec![[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0]],
            Neighborhood::Cube26 => {
                let mut v = Vec::with_capacity(26);
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if (dx, dy, dz) != (0, 0, 0) {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            }
        }
    }
}

/// A unit neighbourhood applied `radius` times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuringElement {
    pub kind: Neighborhood,
    pub radius: u32,
}

impl StructuringElement {
    pub fn new(kind: Neighborhood, radius: u32) -> Result<Self> {
        if radius == 0 {
            return Err(Error::invalid_spec("radius", "must be at least 1"));
        }
        Ok(StructuringElement { kind, radius })
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement {
            kind: Neighborhood::Cross4InPlane,
            radius: 1,
        }
    }
}

fn erode_once(mask: &BinaryMask, offsets: &[[i64; 3]]) -> BinaryMask {
    let g = &mask.geometry;
    let mut out = BinaryMask::empty(g.clone());
    for (idx, &v) in mask.data.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let at = g.coords(idx);
        // out-of-grid neighbours count as background
        let keep = offsets
            .iter()
            .all(|&o| g.offset(at, o).is_some_and(|n| mask.data[n] != 0));
        out.data[idx] = keep as u8;
    }
    out
}

fn dilate_once(mask: &BinaryMask, offsets: &[[i64; 3]]) -> BinaryMask {
    let g = &mask.geometry;
    let mut out = mask.clone();
    for (idx, &v) in mask.data.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let at = g.coords(idx);
        for &o in offsets {
            if let Some(n) = g.offset(at, o) {
                out.data[n] = 1;
            }
        }
    }
    out
}

pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let offsets = se.kind.offsets();
    let mut out = mask.clone();
    for _ in 0..se.radius {
        if out.is_empty() {
            break;
        }
        out = erode_once(&out, &offsets);
    }
    out
}

pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let offsets = se.kind.offsets();
    let mut out = mask.clone();
    for _ in 0..se.radius {
        out = dilate_once(&out, &offsets);
    }
    out
}
