//! Hull-guided refinement: probability maps, hull carving, the learned
//! refiner and pose fitting through the hull layer.

mod rnet;

pub use rnet::{
    holdout_iou, rnet_backward, rnet_forward, rnet_forward_tape, rnet_loss, rnet_train, write_train_log, EpochLog,
    RefineSample, RefinerConfig, RefinerParams, RnetGrads, RnetTape, INPUT_CHANNELS, TRAIN_LOG_HEADER,
};

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{euler_rotation_derivatives, rotation_to_euler, CameraIntrinsics, Mat3, Pose, Vec3};
use crate::psvh::{psvh_backward_exact, psvh_forward};
use crate::silhouette::{box_blur, box_blur_adjoint, render_silhouette, render_silhouette_pose_grad, SilhouetteMap};
use crate::voxelgrid::{HullGrid, VolumeField, VoxelGrid};

/// `A = V⊙(1−H)` marks voxels predicted but outside the hull, `B = H⊙(1−V)`
/// marks voxels inside the hull but not predicted.
pub fn probability_maps(v: &VoxelGrid, h: &HullGrid) -> Result<(VoxelGrid, VoxelGrid)> {
    let a = v.zip_map(h, |v, h| v * (1.0 - h))?;
    let b = v.zip_map(h, |v, h| h * (1.0 - v))?;
    Ok((a, b))
}

pub const DEFAULT_CARVE_TAU: f64 = 0.5;

/// Carves `v` by the hull: `V ⊙ min(1, H/τ_h)`. Voxels where the hull is
/// at least `tau_h` keep their value; below it they are scaled down toward 0.
pub fn carve_refine(v: &VoxelGrid, h: &HullGrid, tau_h: f64) -> Result<VoxelGrid> {
    if !(tau_h > 0.0 && tau_h <= 1.0) {
        return Err(invalid(format!("carving threshold must lie in (0, 1], got {tau_h}")));
    }
    v.zip_map(h, |v, h| v * (h / tau_h).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseFitConfig {
    pub steps: usize,
    /// Initial step length, in radians for rotation and the equivalent
    /// image motion for translation.
    pub lr: f64,
    /// Box-blur radius that was applied to the observed silhouette. The
    /// shape's own render is blurred by the same amount before comparing.
    pub blur_radius: usize,
    /// Stop once the step length falls below this.
    pub min_step: f64,
    /// Also update `tu`, `tv` and `tz`.
    pub fit_translation: bool,
}

impl Default for PoseFitConfig {
    fn default() -> Self {
        Self { steps: 150, lr: 0.02, blur_radius: 2, min_step: 1e-6, fit_translation: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFitResult {
    pub pose: Pose,
    pub loss: f64,
    /// Loss of the current iterate after every step, starting with `p0`.
    pub trace: Vec<f64>,
}

/// `Σ (H_p − Ĥ_p)²` between the hull `H_p` of the observation and the hull
/// `Ĥ_p` of the shape's own silhouette at the same pose, blurred like the
/// observation, and its gradient with respect to the pose. The gradient
/// flows through both hulls and, for `Ĥ_p`, through the render as well.
pub fn pose_fit_loss(
    v: &VoxelGrid,
    s: &SilhouetteMap,
    k: &CameraIntrinsics,
    pose: &Pose,
    blur: usize,
) -> Result<(f64, [f64; 6])> {
    fit_terms(v, s, k, pose, blur).map(|(l, g, _)| (l, g))
}

fn fit_terms(
    v: &VoxelGrid,
    s: &SilhouetteMap,
    k: &CameraIntrinsics,
    pose: &Pose,
    blur: usize,
) -> Result<(f64, [f64; 6], usize)> {
    let dim = v.dim();
    let out = psvh_forward(s, pose, k, dim)?;
    let own = box_blur(&render_silhouette(v, pose, k, s.width(), s.height())?, blur);
    let own_hull = psvh_forward(&own, pose, k, dim)?.hull;
    let diff: Vec<f64> = out.hull.values().iter().zip(own_hull.values()).map(|(h, o)| h - o).collect();
    let loss = diff.iter().map(|d| d * d).sum();
    let dl_dh = VolumeField::new(dim, diff.iter().map(|d| 2.0 * d).collect())?;
    let (_, dp_obs) = psvh_backward_exact(&dl_dh, s, pose, k)?;
    let (ds_own, dp_own) = psvh_backward_exact(&dl_dh, &own, pose, k)?;
    let dp_render = render_silhouette_pose_grad(v, pose, k, &box_blur_adjoint(&ds_own, blur))?;
    let mut dp = [0.0; 6];
    for i in 0..6 {
        dp[i] = dp_obs[i] - dp_own[i] - dp_render[i];
    }
    Ok((loss, dp, out.behind_camera))
}

/// Scale from translation parameters to a common unit: image offsets
/// converted to the rotation that moves the object's rim as far, and
/// distance as a relative change.
fn translation_scales(k: &CameraIntrinsics, p: &Pose) -> [f64; 3] {
    let st = 0.5 * k.f / p.tz;
    [st, st, p.tz]
}

/// Gradient with respect to a small rotation `ω` applied on the left,
/// `R ← exp([ω]×)·R`, from the gradient with respect to the Euler angles.
/// Column `i` of `J` is the angular velocity produced by `θ_i`, and
/// `∂L/∂θ = Jᵀ ∂L/∂ω`.
fn rotation_grad(pose: &Pose, dtheta: &[f64]) -> Vec3 {
    let r = pose.rotation();
    let d = euler_rotation_derivatives(pose.theta[0], pose.theta[1], pose.theta[2]);
    let mut j = Mat3::zeros();
    for (i, di) in d.iter().enumerate() {
        let w = di * r.transpose();
        j.set_column(i, &Vec3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]));
    }
    let g = Vec3::new(dtheta[0], dtheta[1], dtheta[2]);
    j.transpose().svd(true, true).solve(&g, 1e-9).unwrap_or_else(|_| Vec3::zeros())
}

/// Fits the pose that best explains silhouette `s` for a fixed shape `v`.
///
/// Normalized gradient descent with backtracking. Rotation steps are taken
/// about a local axis, so the fit behaves the same near Euler singularities;
/// translation steps are scaled to comparable units. A step that raises the
/// loss or puts voxels behind the camera is halved and retried, an accepted
/// step grows the step length by half. Binary silhouettes are refused
/// because their hull is piecewise constant in the pose almost everywhere.
pub fn pose_fit(
    v: &VoxelGrid,
    s: &SilhouetteMap,
    k: &CameraIntrinsics,
    p0: &Pose,
    cfg: &PoseFitConfig,
) -> Result<PoseFitResult> {
    p0.validate()?;
    if s.is_binary() {
        return Err(invalid("pose fitting needs a smoothed silhouette (blur radius ≥ 1 px), got a binary one"));
    }
    if !(cfg.lr > 0.0 && cfg.min_step > 0.0) {
        return Err(invalid("pose fit step sizes must be positive"));
    }
    let mut pose = *p0;
    let (mut loss, mut grad) = pose_fit_loss(v, s, k, &pose, cfg.blur_radius)?;
    let mut trace = vec![loss];
    let mut step = cfg.lr;
    let max_step = 4.0 * cfg.lr;
    for _ in 0..cfg.steps {
        let gw = rotation_grad(&pose, &grad[..3]);
        let st = if cfg.fit_translation { translation_scales(k, &pose) } else { [0.0; 3] };
        let gt = [grad[3] * st[0], grad[4] * st[1], grad[5] * st[2]];
        let norm = (gw.norm_squared() + gt.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if norm == 0.0 || step < cfg.min_step {
            break;
        }
        let r0 = Rotation3::from_matrix_unchecked(pose.rotation());
        let mut accepted = false;
        while step >= cfg.min_step {
            let r = Rotation3::new(-step / norm * gw) * r0;
            let mut p = pose.to_array();
            p[..3].copy_from_slice(&rotation_to_euler(r.matrix()));
            for i in 0..3 {
                p[3 + i] -= step * gt[i] / norm * st[i];
            }
            let cand = Pose::from_array(p);
            if cand.validate().is_ok() {
                if let Ok((l, g, behind)) = fit_terms(v, s, k, &cand, cfg.blur_radius) {
                    if behind == 0 && l < loss {
                        pose = cand;
                        loss = l;
                        grad = g;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        trace.push(loss);
        if !accepted {
            break;
        }
        step = (step * 1.5).min(max_step);
    }
    Ok(PoseFitResult { pose, loss, trace })
}
