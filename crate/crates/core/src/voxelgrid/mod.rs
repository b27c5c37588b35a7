//! Occupancy grids over the canonical cube `[−0.5, 0.5]³`.
//!
//! Voxel `(i, j, k)` sits at linear index `i + D·(j + D·k)` (x fastest) and
//! is centered at `−0.5 + (idx + 0.5)/D` along each axis.

mod io;
mod mesh;

pub use io::{load_grid, read_grid, save_grid, write_grid, GRID_MAGIC, GRID_VERSION};
pub use mesh::{load_obj, parse_obj, voxelize_solid, Mesh};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::Vec3;

/// Threshold used when binarizing predicted volumes for evaluation.
pub const IOU_THRESHOLD: f64 = 0.4;
pub const DEFAULT_DIM: usize = 32;

/// Per-voxel occupancy probabilities. Every value lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dim: usize,
    values: Vec<f64>,
}

/// Voxel grid that stores sampled silhouette probabilities.
pub type HullGrid = VoxelGrid;

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(invalid(format!("grid dimension must be at least 2, got {dim}")));
    }
    Ok(())
}

impl VoxelGrid {
    pub fn zeros(dim: usize) -> Result<Self> {
        Self::filled(dim, 0.0)
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(0.0..=1.0).contains(&value) {
            return Err(invalid(format!("occupancy {value} outside [0, 1]")));
        }
        Ok(Self { dim, values: vec![value; dim * dim * dim] })
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if values.len() != dim * dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {dim}³ grid, got {}",
                dim * dim * dim,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("occupancy {bad} outside [0, 1]")));
        }
        Ok(Self { dim, values })
    }

    /// Builds a grid from a per-voxel function; results are clamped to `[0, 1]`.
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize, usize) -> f64 + Sync) -> Result<Self> {
        check_dim(dim)?;
        let values = (0..dim * dim * dim)
            .into_par_iter()
            .map(|n| {
                let (i, j, k) = (n % dim, (n / dim) % dim, n / (dim * dim));
                f(i, j, k).clamp(0.0, 1.0)
            })
            .collect();
        Ok(Self { dim, values })
    }

    pub(crate) fn from_values_unchecked(dim: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dim * dim * dim);
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dim * (j + self.dim * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// # Panics
    /// If `value` is outside `[0, 1]`.
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        assert!((0.0..=1.0).contains(&value), "occupancy {value} outside [0, 1]");
        let n = self.index(i, j, k);
        self.values[n] = value;
    }

    /// Applies `f` per voxel, clamping the result to `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { dim: self.dim, values: self.values.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dim(other)?;
        Ok(Self {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b).clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::ShapeMismatch(format!("grid dims {} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }

    pub fn occupied_count(&self, tau: f64) -> usize {
        self.values.iter().filter(|&&v| v >= tau).count()
    }

    /// Trilinear interpolation at an object-frame point. Coordinates are
    /// clamped to the outermost voxel centers, so values extend to the cube
    /// faces; points outside the cube return 0.
    pub fn sample_trilinear(&self, p: &Vec3) -> f64 {
        const TOL: f64 = 1e-9;
        if p.iter().any(|c| !(-0.5 - TOL..=0.5 + TOL).contains(c)) {
            return 0.0;
        }
        let d = self.dim;
        let hi = (d - 1) as f64;
        let g = |c: f64| ((c + 0.5) * d as f64 - 0.5).clamp(0.0, hi);
        let (gx, gy, gz) = (g(p.x), g(p.y), g(p.z));
        let split = |g: f64| {
            let i0 = (g.floor() as usize).min(d - 2);
            (i0, g - i0 as f64)
        };
        let (i0, fx) = split(gx);
        let (j0, fy) = split(gy);
        let (k0, fz) = split(gz);
        let v = &self.values;
        let at = |i: usize, j: usize, k: usize| v[i + d * (j + d * k)];
        let c00 = at(i0, j0, k0) * (1.0 - fx) + at(i0 + 1, j0, k0) * fx;
        let c10 = at(i0, j0 + 1, k0) * (1.0 - fx) + at(i0 + 1, j0 + 1, k0) * fx;
        let c01 = at(i0, j0, k0 + 1) * (1.0 - fx) + at(i0 + 1, j0, k0 + 1) * fx;
        let c11 = at(i0, j0 + 1, k0 + 1) * (1.0 - fx) + at(i0 + 1, j0 + 1, k0 + 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Gradient of [`sample_trilinear`](Self::sample_trilinear) with respect
    /// to the point. Zero outside the cube and along clamped axes.
    pub fn sample_trilinear_grad(&self, p: &Vec3) -> Vec3 {
        if p.iter().any(|c| !(-0.5..=0.5).contains(c)) {
            return Vec3::zeros();
        }
        let d = self.dim;
        let hi = (d - 1) as f64;
        let split = |c: f64| {
            let g = (c + 0.5) * d as f64 - 0.5;
            let scale = if (0.0..=hi).contains(&g) { d as f64 } else { 0.0 };
            let g = g.clamp(0.0, hi);
            let i0 = (g.floor() as usize).min(d - 2);
            (i0, g - i0 as f64, scale)
        };
        let (i0, fx, sx) = split(p.x);
        let (j0, fy, sy) = split(p.y);
        let (k0, fz, sz) = split(p.z);
        let v = &self.values;
        let at = |a: usize, b: usize, c: usize| v[i0 + a + d * (j0 + b + d * (k0 + c))];
        let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
        let (mut gx, mut gy, mut gz) = (0.0, 0.0, 0.0);
        for c in 0..2 {
            let wz = if c == 0 { 1.0 - fz } else { fz };
            for b in 0..2 {
                let wy = if b == 0 { 1.0 - fy } else { fy };
                gx += wy * wz * (at(1, b, c) - at(0, b, c));
            }
            for a in 0..2 {
                let wx = if a == 0 { 1.0 - fx } else { fx };
                gy += wx * wz * (at(a, 1, c) - at(a, 0, c));
            }
        }
        for b in 0..2 {
            let wy = if b == 0 { 1.0 - fy } else { fy };
            gz += wy * (lerp(at(0, b, 1), at(1, b, 1), fx) - lerp(at(0, b, 0), at(1, b, 0), fx));
        }
        Vec3::new(gx * sx, gy * sy, gz * sz)
    }
}

/// Unconstrained real field with the voxel-grid layout (gradients, spatial
/// derivatives).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeField {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl VolumeField {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, values: vec![0.0; dim * dim * dim] }
    }

    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {dim}³ field, got {}",
                dim * dim * dim,
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

impl From<&VoxelGrid> for VolumeField {
    fn from(g: &VoxelGrid) -> Self {
        Self { dim: g.dim, values: g.values.clone() }
    }
}

#[inline]
pub(crate) fn center_coord(idx: usize, dim: usize) -> f64 {
    -0.5 + (idx as f64 + 0.5) / dim as f64
}

pub(crate) fn voxel_center_unchecked(i: usize, j: usize, k: usize, dim: usize) -> Vec3 {
    Vec3::new(center_coord(i, dim), center_coord(j, dim), center_coord(k, dim))
}

/// Object-frame center of voxel `idx`.
pub fn voxel_center(idx: [usize; 3], dim: usize) -> Result<Vec3> {
    check_dim(dim)?;
    if idx.iter().any(|&c| c >= dim) {
        return Err(Error::IndexOutOfRange { index: idx, dim });
    }
    Ok(voxel_center_unchecked(idx[0], idx[1], idx[2], dim))
}

/// `1` where `v ≥ tau`, `0` elsewhere.
pub fn binarize(v: &VoxelGrid, tau: f64) -> VoxelGrid {
    VoxelGrid { dim: v.dim, values: v.values.iter().map(|&x| if x >= tau { 1.0 } else { 0.0 }).collect() }
}

/// Volumetric intersection-over-union after binarizing both grids at `tau`.
/// Two empty grids have IoU 1.
pub fn iou(a: &VoxelGrid, b: &VoxelGrid, tau: f64) -> Result<f64> {
    a.check_same_dim(b)?;
    Ok(mask_iou(a.values(), b.values(), tau))
}

pub(crate) fn mask_iou(a: &[f64], b: &[f64], tau: f64) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (p, q) = (x >= tau, y >= tau);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
