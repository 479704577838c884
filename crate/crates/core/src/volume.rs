//! In-memory 3D grids: scalar [`Volume`]s and [`BinaryMask`]s sharing a
//! [`Geometry`]. Voxel data is stored x-fastest: index `i + j*nx + k*nx*ny`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid dimensions plus physical placement (millimetres).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let g = Geometry {
            dims,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Self {
        Geometry {
            dims,
            spacing: [1.0; 3],
            origin: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be finite and positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "origin must be finite, got {:?}",
                self.origin
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Index of `(i,j,k) + offset`, or `None` if it leaves the grid.
    #[inline]
    pub fn offset(&self, at: [usize; 3], offset: [i64; 3]) -> Option<usize> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = at[a] as i64 + offset[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.index(out[0], out[1], out[2]))
    }

    /// Physical position (mm) of a voxel centre.
    #[inline]
    pub fn world(&self, ijk: [f64; 3]) -> [f64; 3] {
        [
            self.origin[0] + ijk[0] * self.spacing[0],
            self.origin[1] + ijk[1] * self.spacing[1],
            self.origin[2] + ijk[2] * self.spacing[2],
        ]
    }

    /// Continuous voxel index of a physical position.
    #[inline]
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Physical centre of the grid (midpoint between the first and last voxel centres).
    pub fn center(&self) -> [f64; 3] {
        self.world([
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ])
    }

    pub fn ensure_same_dims(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GeometryMismatch {
                expected: self.dims,
                found: other.dims,
            });
        }
        Ok(())
    }
}

// Geometry values are validated finite, so equality is total.
impl Eq for Geometry {}

/// A scalar image.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub geometry: Geometry,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "voxel {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Volume { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.len();
        Volume {
            geometry,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.index(i, j, k)]
    }

    /// `(min, max)` over all voxels.
    pub fn range(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// A {0,1} label grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub geometry: Geometry,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(index) = data.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryMask {
                index,
                value: data[index] as f64,
            });
        }
        Ok(BinaryMask { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        let n = geometry.len();
        BinaryMask {
            geometry,
            data: vec![0; n],
        }
    }

    pub fn from_voxels(geometry: Geometry, voxels: &[[usize; 3]]) -> Self {
        let mut m = BinaryMask::empty(geometry);
        for &[i, j, k] in voxels {
            m.set(i, j, k, true);
        }
        m
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.geometry.index(i, j, k)] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, on: bool) {
        let idx = self.geometry.index(i, j, k);
        self.data[idx] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Voxel-wise AND; dims must match.
    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.geometry.ensure_same_dims(&other.geometry)?;
        Ok(BinaryMask {
            geometry: self.geometry.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    /// True when every foreground voxel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn foreground(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(idx, _)| self.geometry.coords(idx))
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_x_fastest() {
        let g = Geometry::unit([4, 3, 2]);
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 4);
        assert_eq!(g.index(0, 0, 1), 12);
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn rejects_bad_geometry_and_data() {
        assert!(Geometry::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Geometry::new([1, 1, 1], [1.0, -1.0, 1.0], [0.0; 3]).is_err());
        let g = Geometry::unit([2, 1, 1]);
        assert!(Volume::new(g.clone(), vec![0.0]).is_err());
        assert!(Volume::new(g.clone(), vec![0.0, f32::NAN]).is_err());
        assert!(matches!(
            BinaryMask::new(g, vec![0, 2]),
            Err(Error::NonBinaryMask { index: 1, .. })
        ));
    }

    #[test]
    fn center_is_midpoint_of_voxel_centres() {
        let g = Geometry::new([5, 4, 1], [2.0, 1.0, 3.0], [10.0, 0.0, -1.0]).unwrap();
        assert_eq!(g.center(), [14.0, 1.5, -1.0]);
    }
}
