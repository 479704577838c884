use serde::{Deserialize, Serialize};

use super::edt::squared_edt;
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry};

const FACE_NEIGHBOURS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Boundary voxels of a mask: foreground with at least one background or
/// out-of-grid face neighbour. Points are in ascending linear-index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurfaceSet {
    pub geometry: Geometry,
    pub points: Vec<[usize; 3]>,
}

impl SurfaceSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn indicator(&self) -> Vec<bool> {
        let mut out = vec![false; self.geometry.len()];
        for &[i, j, k] in &self.points {
            out[self.geometry.index(i, j, k)] = true;
        }
        out
    }
}

pub fn surface_voxels(mask: &BinaryMask) -> SurfaceSet {
    let g = &mask.geometry;
    let points = mask
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(idx, _)| g.coords(idx))
        .filter(|&at| {
            FACE_NEIGHBOURS
                .iter()
                .any(|&o| g.offset(at, o).is_none_or(|n| mask.data[n] == 0))
        })
        .collect();
    SurfaceSet {
        geometry: g.clone(),
        points,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Separable exact distance transform.
    Edt,
    /// All-pairs search; the reference the transform is checked against.
    Brute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Voxel,
    Mm,
}

impl Unit {
    /// Per-axis squared length of one voxel step.
    pub fn weights(self, g: &Geometry) -> [f64; 3] {
        match self {
            Unit::Voxel => [1.0; 3],
            Unit::Mm => g.spacing.map(|s| s * s),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Voxel => "voxel",
            Unit::Mm => "mm",
        }
    }
}

/// Squared nearest-surface distances in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDistances {
    /// `d(x, S_b)^2` for each `x` in `a`, in `a`'s point order.
    pub a_to_b: Vec<f64>,
    /// `d(y, S_a)^2` for each `y` in `b`.
    pub b_to_a: Vec<f64>,
}

impl SurfaceDistances {
    pub fn a_to_b_dist(&self) -> Vec<f64> {
        self.a_to_b.iter().map(|d| d.sqrt()).collect()
    }

    pub fn b_to_a_dist(&self) -> Vec<f64> {
        self.b_to_a.iter().map(|d| d.sqrt()).collect()
    }
}

fn squared(a: [usize; 3], b: [usize; 3], w: [f64; 3]) -> f64 {
    (0..3)
        .map(|ax| {
            let d = a[ax] as f64 - b[ax] as f64;
            w[ax] * d * d
        })
        .sum()
}

fn brute_directed(from: &SurfaceSet, to: &SurfaceSet, w: [f64; 3]) -> Vec<f64> {
    from.points
        .iter()
        .map(|&x| {
            to.points
                .iter()
                .map(|&y| squared(x, y, w))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn edt_directed(from: &SurfaceSet, to: &SurfaceSet, w: [f64; 3]) -> Vec<f64> {
    let g = &to.geometry;
    let field = squared_edt(&to.indicator(), g.dims, w);
    from.points
        .iter()
        .map(|&[i, j, k]| field[g.index(i, j, k)])
        .collect()
}

pub fn surface_distances(
    a: &SurfaceSet,
    b: &SurfaceSet,
    unit: Unit,
    mode: DistanceMode,
) -> Result<SurfaceDistances> {
    a.geometry.ensure_same_dims(&b.geometry)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySurface);
    }
    let w = unit.weights(&a.geometry);
    let directed = match mode {
        DistanceMode::Edt => edt_directed,
        DistanceMode::Brute => brute_directed,
    };
    Ok(SurfaceDistances {
        a_to_b: directed(a, b, w),
        b_to_a: directed(b, a, w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize, side: usize) -> BinaryMask {
        let g = Geometry::unit([n, n, n]);
        let mut voxels = vec![];
        for k in 1..=side {
            for j in 1..=side {
                for i in 1..=side {
                    voxels.push([i, j, k]);
                }
            }
        }
        BinaryMask::from_voxels(g, &voxels)
    }

    #[test]
    fn surface_counts() {
        let g = Geometry::unit([5, 5, 5]);
        let one = BinaryMask::from_voxels(g.clone(), &[[2, 2, 2]]);
        assert_eq!(surface_voxels(&one).points, vec![[2, 2, 2]]);
        assert_eq!(surface_voxels(&cube(5, 3)).len(), 26);
        assert_eq!(surface_voxels(&cube(7, 5)).len(), 98);
        assert!(surface_voxels(&BinaryMask::empty(g)).is_empty());
    }

    #[test]
    fn grid_edge_counts_as_background() {
        let g = Geometry::unit([3, 3, 3]);
        let full = BinaryMask::new(g.clone(), vec![1; 27]).unwrap();
        assert_eq!(surface_voxels(&full).len(), 26);
    }

    #[test]
    fn single_pair_distance() {
        let g = Geometry::unit([5, 1, 1]);
        let a = surface_voxels(&BinaryMask::from_voxels(g.clone(), &[[0, 0, 0]]));
        let b = surface_voxels(&BinaryMask::from_voxels(g, &[[3, 0, 0]]));
        for mode in [DistanceMode::Edt, DistanceMode::Brute] {
            let d = surface_distances(&a, &b, Unit::Voxel, mode).unwrap();
            assert_eq!(d.a_to_b_dist(), vec![3.0]);
            assert_eq!(d.b_to_a_dist(), vec![3.0]);
        }
        let empty = surface_voxels(&BinaryMask::empty(Geometry::unit([5, 1, 1])));
        assert!(matches!(
            surface_distances(&a, &empty, Unit::Voxel, DistanceMode::Edt),
            Err(Error::EmptySurface)
        ));
    }

    #[test]
    fn mm_units_use_spacing() {
        let g = Geometry::new([5, 1, 3], [2.0, 1.0, 0.5], [0.0; 3]).unwrap();
        let a = surface_voxels(&BinaryMask::from_voxels(g.clone(), &[[0, 0, 0]]));
        let b = surface_voxels(&BinaryMask::from_voxels(g, &[[3, 0, 2]]));
        for mode in [DistanceMode::Edt, DistanceMode::Brute] {
            let d = surface_distances(&a, &b, Unit::Mm, mode).unwrap();
            assert_eq!(d.a_to_b, vec![37.0]);
        }
    }
}
