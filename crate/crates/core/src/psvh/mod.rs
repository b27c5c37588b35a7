//! Probabilistic single-view visual hull layer.
//!
//! Every voxel center is projected into the silhouette and takes the
//! bilinearly interpolated foreground probability found there. Two backward
//! passes are provided: [`psvh_backward_exact`] differentiates the bilinear
//! sampler directly, while [`psvh_pose_grad_paper`] factors the pose gradient
//! through finite-difference spatial derivatives of the hull itself.

mod gradcheck;

pub use gradcheck::{
    gradcheck, pose_gradcheck_eligible, relative_error, GradcheckCase, GradcheckPath, GradcheckReport, GradcheckRow,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, PoseProjector, Vec3, MIN_DEPTH};
use crate::silhouette::{ImageField, SilhouetteMap};
use crate::voxelgrid::{voxel_center_unchecked, HullGrid, VolumeField, VoxelGrid};

/// Where a voxel center lands in the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Footprint {
    Behind,
    OffImage,
    /// Bilinear cell anchored at pixel `(x0, y0)` with fractional offsets.
    Inside {
        x0: usize,
        y0: usize,
        fx: f64,
        fy: f64,
        xc: Vec3,
    },
}

pub(crate) fn footprints(proj: &PoseProjector, width: usize, height: usize, dim: usize) -> Vec<Footprint> {
    let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
    let k = &proj.k;
    (0..dim * dim * dim)
        .into_par_iter()
        .map(|n| {
            let x = voxel_center_unchecked(n % dim, (n / dim) % dim, n / (dim * dim), dim);
            let xc = proj.camera_point(&x);
            if xc.z <= MIN_DEPTH {
                return Footprint::Behind;
            }
            let u = k.f * xc.x / xc.z + k.u0;
            let v = k.f * xc.y / xc.z + k.v0;
            if !(0.0..=wmax).contains(&u) || !(0.0..=hmax).contains(&v) {
                return Footprint::OffImage;
            }
            let x0 = (u.floor() as usize).min(width - 2);
            let y0 = (v.floor() as usize).min(height - 2);
            Footprint::Inside { x0, y0, fx: u - x0 as f64, fy: v - y0 as f64, xc }
        })
        .collect()
}

#[inline]
fn bilinear(img: &[f64], width: usize, x0: usize, y0: usize, fx: f64, fy: f64) -> f64 {
    let i = y0 * width + x0;
    let top = img[i] * (1.0 - fx) + img[i + 1] * fx;
    let bottom = img[i + width] * (1.0 - fx) + img[i + width + 1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// `(∂S/∂u, ∂S/∂v)` of the bilinear interpolant inside one cell.
#[inline]
fn bilinear_grad(img: &[f64], width: usize, x0: usize, y0: usize, fx: f64, fy: f64) -> (f64, f64) {
    let i = y0 * width + x0;
    let (s00, s10, s01, s11) = (img[i], img[i + 1], img[i + width], img[i + width + 1]);
    ((1.0 - fy) * (s10 - s00) + fy * (s11 - s01), (1.0 - fx) * (s01 - s00) + fx * (s11 - s10))
}

/// Result of [`psvh_forward`]: the hull plus counts of voxels that were
/// zeroed because they fell behind the camera or outside the image.
#[derive(Debug, Clone, PartialEq)]
pub struct HullOutput {
    pub hull: HullGrid,
    pub off_image: usize,
    pub behind_camera: usize,
}

impl HullOutput {
    /// Fraction of voxels that received no silhouette sample.
    pub fn zeroed_fraction(&self) -> f64 {
        (self.off_image + self.behind_camera) as f64 / self.hull.len() as f64
    }
}

fn sample_all(fp: &[Footprint], img: &[f64], width: usize) -> Vec<f64> {
    fp.par_iter()
        .map(|f| match *f {
            Footprint::Inside { x0, y0, fx, fy, .. } => bilinear(img, width, x0, y0, fx, fy),
            _ => 0.0,
        })
        .collect()
}

/// Builds the `dim³` hull of silhouette `s` seen from `pose`.
pub fn psvh_forward(s: &SilhouetteMap, pose: &Pose, k: &CameraIntrinsics, dim: usize) -> Result<HullOutput> {
    VoxelGrid::zeros(dim)?;
    let proj = PoseProjector::new(k, pose)?;
    let fp = footprints(&proj, s.width(), s.height(), dim);
    let values = sample_all(&fp, s.values(), s.width());
    let behind_camera = fp.iter().filter(|f| matches!(f, Footprint::Behind)).count();
    let off_image = fp.iter().filter(|f| matches!(f, Footprint::OffImage)).count();
    // Convex combinations of [0, 1] pixels cannot leave [0, 1] except by
    // rounding, so the clamp is exact on valid inputs.
    let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(HullOutput { hull: VoxelGrid::from_values_unchecked(dim, values), off_image, behind_camera })
}

/// The same sampling map applied to an unconstrained image. For fixed pose
/// the hull is linear in the image, and this is that linear operator.
pub fn psvh_forward_linear(img: &ImageField, pose: &Pose, k: &CameraIntrinsics, dim: usize) -> Result<VolumeField> {
    VoxelGrid::zeros(dim)?;
    let proj = PoseProjector::new(k, pose)?;
    let fp = footprints(&proj, img.width, img.height, dim);
    VolumeField::new(dim, sample_all(&fp, &img.values, img.width))
}

/// Gradients of a scalar loss with respect to the silhouette and the pose,
/// given `dL/dH`. The silhouette gradient scatters each voxel's gradient to
/// its four bilinear footprint pixels. Accumulation runs in voxel order, so
/// results are bit-reproducible.
pub fn psvh_backward_exact(
    dl_dh: &VolumeField,
    s: &SilhouetteMap,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<(ImageField, [f64; 6])> {
    let dim = dl_dh.dim;
    VoxelGrid::zeros(dim)?;
    let proj = PoseProjector::new(k, pose)?;
    let (w, h) = (s.width(), s.height());
    let fp = footprints(&proj, w, h, dim);
    let img = s.values();
    let mut ds = ImageField::zeros(w, h);
    let mut dp = [0.0; 6];
    for (n, f) in fp.iter().enumerate() {
        let g = dl_dh.values[n];
        let Footprint::Inside { x0, y0, fx, fy, xc } = *f else { continue };
        if g == 0.0 {
            continue;
        }
        let i = y0 * w + x0;
        ds.values[i] += g * (1.0 - fx) * (1.0 - fy);
        ds.values[i + 1] += g * fx * (1.0 - fy);
        ds.values[i + w] += g * (1.0 - fx) * fy;
        ds.values[i + w + 1] += g * fx * fy;
        let (gu, gv) = bilinear_grad(img, w, x0, y0, fx, fy);
        if gu == 0.0 && gv == 0.0 {
            continue;
        }
        let x = voxel_center_unchecked(n % dim, (n / dim) % dim, n / (dim * dim), dim);
        let jac = proj.jacobian_at(&x, &xc);
        for (c, d) in dp.iter_mut().enumerate() {
            *d += g * (gu * jac[(0, c)] + gv * jac[(1, c)]);
        }
    }
    Ok((ds, dp))
}

fn check_gradient_dim(dim: usize) -> Result<()> {
    if dim < 3 {
        return Err(crate::error::invalid(format!("spatial gradient needs D ≥ 3, got {dim}")));
    }
    Ok(())
}

/// Partial derivatives of a field along x, y and z in cube units, using
/// central differences in the interior and one-sided differences at the faces.
pub fn spatial_gradient_field(h: &VolumeField) -> Result<[VolumeField; 3]> {
    let d = h.dim;
    check_gradient_dim(d)?;
    let inv = d as f64;
    let stride = [1, d, d * d];
    let grad = |axis: usize| {
        let st = stride[axis];
        let values = (0..d * d * d)
            .into_par_iter()
            .map(|n| {
                let c = (n / st) % d;
                let v = &h.values;
                if c == 0 {
                    (v[n + st] - v[n]) * inv
                } else if c == d - 1 {
                    (v[n] - v[n - st]) * inv
                } else {
                    (v[n + st] - v[n - st]) * 0.5 * inv
                }
            })
            .collect();
        VolumeField { dim: d, values }
    };
    Ok([grad(0), grad(1), grad(2)])
}

/// [`spatial_gradient_field`] on a hull grid.
pub fn spatial_gradient(h: &HullGrid) -> Result<[VolumeField; 3]> {
    spatial_gradient_field(&VolumeField::from(h))
}

/// Pose gradient through the hull's own spatial derivatives.
///
/// For a fixed camera-frame point the object-frame location
/// `X(p) = R(p)ᵀ(Xc − t(p))` moves with the pose while its hull value stays
/// pinned to the same pixel, so `∂H/∂p = −∇H · ∂X/∂p`. `∇H` comes from
/// [`spatial_gradient`]; voxels without a silhouette sample contribute
/// nothing.
pub fn psvh_pose_grad_paper(dl_dh: &VolumeField, h: &HullGrid, pose: &Pose, k: &CameraIntrinsics) -> Result<[f64; 6]> {
    let dim = h.dim();
    if dl_dh.dim != dim {
        return Err(Error::ShapeMismatch(format!("gradient is {}³, hull is {dim}³", dl_dh.dim)));
    }
    let [gx, gy, gz] = spatial_gradient(h)?;
    let proj = PoseProjector::new(k, pose)?;
    let mut dp = [0.0; 6];
    for n in 0..dim * dim * dim {
        let g = dl_dh.values[n];
        if g == 0.0 {
            continue;
        }
        let x = voxel_center_unchecked(n % dim, (n / dim) % dim, n / (dim * dim), dim);
        if proj.camera_point(&x).z <= MIN_DEPTH {
            continue;
        }
        let grad = Vec3::new(gx.values[n], gy.values[n], gz.values[n]);
        let b = proj.backprojection_jacobian(&x);
        let row = grad.transpose() * b;
        for (c, d) in dp.iter_mut().enumerate() {
            *d -= g * row[c];
        }
    }
    Ok(dp)
}
