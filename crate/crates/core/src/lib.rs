//! Differentiable single-view visual hulls over voxel occupancy grids.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod psvh;
pub mod refine;
pub mod rng;
pub mod silhouette;
pub mod voxelgrid;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pose, RigidTransform};
pub use silhouette::SilhouetteMap;
pub use voxelgrid::{HullGrid, VoxelGrid};
