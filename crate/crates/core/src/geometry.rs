//! Perspective camera, 6-D pose parametrization and analytic Jacobians.
//!
//! Conventions used throughout the crate:
//!
//! * Camera frame: +Z is the optical axis, +X to the right, +Y down the image.
//! * Pixel `(i, j)` is centered at image coordinate `(u, v) = (i, j)`.
//! * Rotations compose as `R = Rz(θ3) · Ry(θ2) · Rx(θ1)`.
//! * A pose stores `[θ1, θ2, θ3, tu, tv, tZ]`; the metric translation is
//!   `t = [tu·tZ/f, tv·tZ/f, tZ]`, so the object origin always projects to
//!   `(u0 + tu, v0 + tv)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
/// `∂(u, v) / ∂(θ1, θ2, θ3, tu, tv, tZ)`.
pub type PoseJacobian = SMatrix<f64, 2, 6>;

/// Camera-frame depth at or below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-8;

pub const DEFAULT_IMAGE_SIZE: usize = 128;
pub const DEFAULT_FOCAL: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, u0: f64, v0: f64) -> Result<Self> {
        let k = Self { f, u0, v0 };
        k.validate()?;
        Ok(k)
    }

    /// Principal point at the center of a `width × height` image.
    pub fn centered(f: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(invalid(format!("focal length must be positive, got {}", self.f)));
        }
        if !(self.u0.is_finite() && self.v0.is_finite()) {
            return Err(invalid("principal point must be finite"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.f, 0.0, self.u0, 0.0, self.f, self.v0, 0.0, 0.0, 1.0)
    }

    /// Direction of the camera ray through image point `(u, v)`, with unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.u0) / self.f, (v - self.v0) / self.f, 1.0)
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        let c = (DEFAULT_IMAGE_SIZE as f64 - 1.0) / 2.0;
        Self { f: DEFAULT_FOCAL, u0: c, v0: c }
    }
}

/// Six-parameter object pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    /// Euler angles in radians, stored unwrapped.
    pub theta: [f64; 3],
    /// Image-plane offsets of the object origin from the principal point, in pixels.
    pub tu: f64,
    pub tv: f64,
    /// Object distance along the optical axis, in cube-edge units.
    pub tz: f64,
}

impl Pose {
    pub fn new(theta: [f64; 3], tu: f64, tv: f64, tz: f64) -> Self {
        Self { theta, tu, tv, tz }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.theta[0], self.theta[1], self.theta[2], self.tu, self.tv, self.tz]
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        Self { theta: [p[0], p[1], p[2]], tu: p[3], tv: p[4], tz: p[5] }
    }

    pub fn rotation(&self) -> Mat3 {
        euler_to_rotation(self.theta[0], self.theta[1], self.theta[2])
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|x| x.is_finite()) {
            return Err(invalid("pose has non-finite entries"));
        }
        if self.tz <= 0.0 {
            return Err(invalid(format!("pose distance tz must be positive, got {}", self.tz)));
        }
        Ok(())
    }

    /// Metric translation `[tu·tZ/f, tv·tZ/f, tZ]`.
    pub fn translation(&self, k: &CameraIntrinsics) -> Vec3 {
        Vec3::new(self.tu * self.tz / k.f, self.tv * self.tz / k.f, self.tz)
    }

    /// Inverse of [`Pose::translation`].
    pub fn with_translation(theta: [f64; 3], t: &Vec3, k: &CameraIntrinsics) -> Result<Self> {
        if t.z <= 0.0 {
            return Err(invalid(format!("translation depth must be positive, got {}", t.z)));
        }
        Ok(Self { theta, tu: t.x * k.f / t.z, tv: t.y * k.f / t.z, tz: t.z })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn inverse_apply(&self, xc: &Vec3) -> Vec3 {
        self.rotation.transpose() * (xc - self.translation)
    }
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `R = Rz(θ3) · Ry(θ2) · Rx(θ1)`.
pub fn euler_to_rotation(theta1: f64, theta2: f64, theta3: f64) -> Mat3 {
    rot_z(theta3) * rot_y(theta2) * rot_x(theta1)
}

/// Partial derivatives `∂R/∂θi` for the three Euler angles.
pub fn euler_rotation_derivatives(theta1: f64, theta2: f64, theta3: f64) -> [Mat3; 3] {
    let (rx, ry, rz) = (rot_x(theta1), rot_y(theta2), rot_z(theta3));
    [rz * ry * d_rot_x(theta1), rz * d_rot_y(theta2) * rx, d_rot_z(theta3) * ry * rx]
}

/// Euler angles `(θ1, θ2, θ3)` with `euler_to_rotation(θ) == r`; `θ2 ∈ [−π/2, π/2]`.
/// At gimbal lock `θ3` is set to zero.
pub fn rotation_to_euler(r: &Mat3) -> [f64; 3] {
    let sb = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let b = sb.asin();
    if b.cos() > 1e-9 {
        let a = r[(2, 1)].atan2(r[(2, 2)]);
        let c = r[(1, 0)].atan2(r[(0, 0)]);
        [a, b, c]
    } else {
        let a = (-r[(1, 2)]).atan2(r[(1, 1)]);
        [a, b, 0.0]
    }
}

pub fn pose_to_transform(p: &Pose, k: &CameraIntrinsics) -> Result<RigidTransform> {
    p.validate()?;
    k.validate()?;
    Ok(RigidTransform { rotation: p.rotation(), translation: p.translation(k) })
}

/// Projected pixel location plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project_point(k: &CameraIntrinsics, t: &RigidTransform, x: &Vec3) -> Result<Projection> {
    project_camera_point(k, &t.apply(x))
}

fn project_camera_point(k: &CameraIntrinsics, xc: &Vec3) -> Result<Projection> {
    if xc.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: xc.z });
    }
    Ok(Projection { u: k.f * xc.x / xc.z + k.u0, v: k.f * xc.y / xc.z + k.v0, depth: xc.z })
}

/// A pose and intrinsics with everything the per-point projection and its
/// Jacobian need precomputed. Used by the voxel-parallel kernels.
#[derive(Debug, Clone)]
pub struct PoseProjector {
    pub k: CameraIntrinsics,
    pub pose: Pose,
    pub transform: RigidTransform,
    d_rotation: [Mat3; 3],
}

impl PoseProjector {
    pub fn new(k: &CameraIntrinsics, pose: &Pose) -> Result<Self> {
        let transform = pose_to_transform(pose, k)?;
        let [a, b, c] = pose.theta;
        Ok(Self { k: *k, pose: *pose, transform, d_rotation: euler_rotation_derivatives(a, b, c) })
    }

    pub fn camera_point(&self, x: &Vec3) -> Vec3 {
        self.transform.apply(x)
    }

    pub fn project(&self, x: &Vec3) -> Result<Projection> {
        project_camera_point(&self.k, &self.camera_point(x))
    }

    /// `∂Xc/∂p` as a 3×6 matrix.
    pub fn camera_point_jacobian(&self, x: &Vec3) -> SMatrix<f64, 3, 6> {
        let f = self.k.f;
        let p = &self.pose;
        let mut j = SMatrix::<f64, 3, 6>::zeros();
        for (i, dr) in self.d_rotation.iter().enumerate() {
            j.set_column(i, &(dr * x));
        }
        j.set_column(3, &Vec3::new(p.tz / f, 0.0, 0.0));
        j.set_column(4, &Vec3::new(0.0, p.tz / f, 0.0));
        j.set_column(5, &Vec3::new(p.tu / f, p.tv / f, 1.0));
        j
    }

    pub fn jacobian(&self, x: &Vec3) -> Result<PoseJacobian> {
        let xc = self.camera_point(x);
        if xc.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: xc.z });
        }
        Ok(self.jacobian_at(x, &xc))
    }

    /// Jacobian given the already-transformed camera point `xc` of `x`.
    pub fn jacobian_at(&self, x: &Vec3, xc: &Vec3) -> PoseJacobian {
        let f = self.k.f;
        let inv_z = 1.0 / xc.z;
        let proj = SMatrix::<f64, 2, 3>::new(
            f * inv_z,
            0.0,
            -f * xc.x * inv_z * inv_z,
            0.0,
            f * inv_z,
            -f * xc.y * inv_z * inv_z,
        );
        proj * self.camera_point_jacobian(x)
    }

    /// `∂/∂p` of the object-frame point `Rᵀ(Xc − t)` for a fixed camera-frame
    /// point `Xc`, evaluated where `Xc` is the image of `x`. Columns are the
    /// six pose parameters.
    pub fn backprojection_jacobian(&self, x: &Vec3) -> SMatrix<f64, 3, 6> {
        let f = self.k.f;
        let p = &self.pose;
        let rt = self.transform.rotation.transpose();
        let rx = self.transform.rotation * x;
        let mut j = SMatrix::<f64, 3, 6>::zeros();
        for (i, dr) in self.d_rotation.iter().enumerate() {
            j.set_column(i, &(dr.transpose() * rx));
        }
        j.set_column(3, &(-(rt * Vec3::new(p.tz / f, 0.0, 0.0))));
        j.set_column(4, &(-(rt * Vec3::new(0.0, p.tz / f, 0.0))));
        j.set_column(5, &(-(rt * Vec3::new(p.tu / f, p.tv / f, 1.0))));
        j
    }
}

/// Analytic `∂(u, v)/∂p` at object point `x`.
pub fn projection_pose_jacobian(k: &CameraIntrinsics, p: &Pose, x: &Vec3) -> Result<PoseJacobian> {
    PoseProjector::new(k, p)?.jacobian(x)
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error(r1: &Mat3, r2: &Mat3) -> f64 {
    let c = (((r1.transpose() * r2).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// `100 · ‖t_est − t_gt‖ / ‖t_gt‖`.
pub fn translation_error(t_est: &Vec3, t_gt: &Vec3) -> Result<f64> {
    let n = t_gt.norm();
    if n <= 0.0 {
        return Err(invalid("ground-truth translation has zero norm"));
    }
    Ok(100.0 * (t_est - t_gt).norm() / n)
}

/// Convenience wrapper of [`rotation_error`] for two poses.
pub fn pose_rotation_error(a: &Pose, b: &Pose) -> f64 {
    rotation_error(&a.rotation(), &b.rotation())
}

/// Rotation angle of the relative rotation, computed through unit quaternions.
/// Kept separate from [`rotation_error`] so the two can cross-check each other.
pub fn rotation_angle_quaternion(r1: &Mat3, r2: &Mat3) -> f64 {
    let q = UnitQuaternion::from_matrix(&(r1.transpose() * r2));
    q.angle().to_degrees()
}

/// Object rotation for a viewer at `azimuth` around the object's vertical
/// (+Y) axis and `elevation` above its equator, both in degrees.
///
/// At zero azimuth and elevation the object's +Y points up in the image and
/// its +Z face looks at the camera.
pub fn view_rotation(azimuth_deg: f64, elevation_deg: f64) -> Mat3 {
    rot_x(-elevation_deg.to_radians()) * rot_x(PI) * rot_y(-azimuth_deg.to_radians())
}

pub fn pose_from_view(azimuth_deg: f64, elevation_deg: f64, tu: f64, tv: f64, tz: f64) -> Pose {
    Pose::new(rotation_to_euler(&view_rotation(azimuth_deg, elevation_deg)), tu, tv, tz)
}

/// Sampling ranges for [`random_pose`]. Each range is `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseRanges {
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub distance: [f64; 2],
    pub offset_px: [f64; 2],
}

impl Default for PoseRanges {
    /// With the default 150 px / 128 × 128 camera, every corner of the unit
    /// cube stays inside the frame for any rotation at these distances.
    fn default() -> Self {
        Self { azimuth_deg: [0.0, 360.0], elevation_deg: [-30.0, 30.0], distance: [2.4, 3.0], offset_px: [-4.0, 4.0] }
    }
}

impl PoseRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("azimuth", self.azimuth_deg),
            ("elevation", self.elevation_deg),
            ("distance", self.distance),
            ("offset", self.offset_px),
        ] {
            if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
                return Err(invalid(format!("empty {name} range [{}, {}]", r[0], r[1])));
            }
        }
        if self.distance[0] <= 0.0 {
            return Err(invalid("distance range must be positive"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut rng::Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Deterministic random viewpoint drawn from `ranges`.
pub fn random_pose(seed: u64, ranges: &PoseRanges) -> Result<Pose> {
    ranges.validate()?;
    let mut rng = rng::rng_from_seed(seed);
    let az = uniform(&mut rng, ranges.azimuth_deg);
    let el = uniform(&mut rng, ranges.elevation_deg);
    let tz = uniform(&mut rng, ranges.distance);
    let tu = uniform(&mut rng, ranges.offset_px);
    let tv = uniform(&mut rng, ranges.offset_px);
    Ok(pose_from_view(az, el, tu, tv, tz))
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// The eight corners of the canonical cube `[−0.5, 0.5]³`.
pub fn cube_corners() -> [Vec3; 8] {
    let mut out = [Vec3::zeros(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        *c = Vec3::new(
            if i & 1 == 0 { -0.5 } else { 0.5 },
            if i & 2 == 0 { -0.5 } else { 0.5 },
            if i & 4 == 0 { -0.5 } else { 0.5 },
        );
    }
    out
}
