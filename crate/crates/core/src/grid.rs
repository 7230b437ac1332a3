//! Dense 3D voxel grid with physical spacing.
//!
//! `origin` is the outer corner of voxel `(0, 0, 0)`; voxel `(i, j, k)` spans
//! `origin + [i, i+1) * spacing` along each axis. Storage is x-fastest.

use serde::{Deserialize, Serialize};

use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<T>,
}

/// Geometry of a grid without its payload; also the JSON sidecar layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Snaps an axis-aligned box onto the lattice `k * pitch` and returns the
    /// smallest grid covering it.
    pub fn covering(min: Vec3, max: Vec3, pitch: f64) -> Self {
        let mut dims = [0usize; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let lo = (min[a] / pitch).floor();
            let hi = (max[a] / pitch).ceil();
            origin[a] = lo * pitch;
            dims[a] = ((hi - lo) as usize).max(1);
        }
        Self {
            dims,
            spacing: [pitch; 3],
            origin,
        }
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + (i as f64 + 0.5) * self.spacing[0],
            self.origin[1] + (j as f64 + 0.5) * self.spacing[1],
            self.origin[2] + (k as f64 + 0.5) * self.spacing[2],
        )
    }

    /// Voxel containing `p`, if any.
    #[inline]
    pub fn locate(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.spacing[a]).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0]
    }

    pub fn min_corner(&self) -> Vec3 {
        Vec3::from(self.origin)
    }

    pub fn max_corner(&self) -> Vec3 {
        Vec3::new(
            self.origin[0] + self.dims[0] as f64 * self.spacing[0],
            self.origin[1] + self.dims[1] as f64 * self.spacing[1],
            self.origin[2] + self.dims[2] as f64 * self.spacing[2],
        )
    }
}

impl<T: Copy> VoxelGrid<T> {
    pub fn filled(geometry: GridGeometry, value: T) -> Self {
        Self {
            dims: geometry.dims,
            spacing: geometry.spacing,
            origin: geometry.origin,
            data: vec![value; geometry.voxel_count()],
        }
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self {
            dims: geometry.dims,
            spacing: geometry.spacing,
            origin: geometry.origin,
            data,
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: T) {
        self.data[(k * self.dims[1] + j) * self.dims[0] + i] = value;
    }

    /// Value of the voxel containing `p`, if `p` lies inside the grid.
    pub fn sample(&self, p: &Vec3) -> Option<T> {
        let g = self.geometry();
        g.locate(p).map(|idx| self.data[g.linear(idx)])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}
