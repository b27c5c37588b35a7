//! Finite-difference verification of the hull layer's backward pass.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{psvh_backward_exact, psvh_forward_linear};
use crate::error::{invalid, Result};
use crate::geometry::{random_pose, CameraIntrinsics, Pose, PoseRanges};
use crate::rng;
use crate::silhouette::{degrade_silhouette, render_silhouette, DegradeParams, ImageField, SilhouetteMap};
use crate::voxelgrid::{voxel_center_unchecked, VolumeField, VoxelGrid};

pub const POSE_PARAMETER_NAMES: [&str; 6] = ["theta1", "theta2", "theta3", "tu", "tv", "tz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradcheckPath {
    /// Derivatives with respect to the six pose parameters.
    Pose,
    /// Derivatives with respect to silhouette pixels.
    Silhouette,
}

/// A randomized test instance: an ellipsoid rendered from a random pose,
/// optionally blurred, with a random linear loss `L = Σ w·H` on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckCase {
    pub dim: usize,
    pub image_size: usize,
    pub focal: f64,
    pub blur_radius: usize,
    /// Threshold the rendered silhouette at 0.5, producing a binary mask.
    pub binarize: bool,
    /// Small enough that a step rarely moves a voxel center across a pixel
    /// line, where bilinear sampling has a kink.
    pub pose_step: f64,
    pub silhouette_step: f64,
    pub pose_tol: f64,
    pub silhouette_tol: f64,
    /// Number of silhouette pixels probed.
    pub probes: usize,
}

impl Default for GradcheckCase {
    fn default() -> Self {
        Self {
            dim: 8,
            image_size: 128,
            focal: 150.0,
            blur_radius: 4,
            binarize: false,
            pose_step: 1e-8,
            silhouette_step: 1e-3,
            pose_tol: 1e-4,
            silhouette_tol: 1e-6,
            probes: 64,
        }
    }
}

impl GradcheckCase {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid("gradcheck grid dimension must be at least 2"));
        }
        for (name, v) in [
            ("pose_step", self.pose_step),
            ("silhouette_step", self.silhouette_step),
            ("pose_tol", self.pose_tol),
            ("silhouette_tol", self.silhouette_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub rows: Vec<GradcheckRow>,
    /// Present when the pose check was skipped.
    pub pose_ineligible: Option<String>,
    pub max_rel_pose: Option<f64>,
    pub max_rel_silhouette: f64,
    pub pose_tol: f64,
    pub silhouette_tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_silhouette <= self.silhouette_tol && self.max_rel_pose.is_none_or(|e| e <= self.pose_tol)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "parameter,analytic,numeric,rel_error")?;
        for r in &self.rows {
            writeln!(w, "{},{:.12e},{:.12e},{:.6e}", r.parameter, r.analytic, r.numeric, r.rel_error)?;
        }
        Ok(())
    }
}

/// Relative error with an absolute floor, so that two vanishing gradients
/// compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Bilinear interpolation has kinks along pixel lines; pose derivatives are
/// only meaningful on a silhouette that varies smoothly across them.
pub fn pose_gradcheck_eligible(s: &SilhouetteMap) -> std::result::Result<(), String> {
    if s.is_binary() {
        return Err("silhouette is binary; blur it (radius ≥ 1) before checking pose gradients".into());
    }
    Ok(())
}

struct Instance {
    k: CameraIntrinsics,
    pose: Pose,
    s: SilhouetteMap,
    w: VolumeField,
}

fn build_instance(case: &GradcheckCase, seed: u64) -> Result<Instance> {
    let n = case.image_size;
    let k = CameraIntrinsics::centered(case.focal, n, n)?;
    let mut r = rng::stream(seed, &[0x6763]);
    let radii = [r.random_range(0.2..0.45), r.random_range(0.15..0.4), r.random_range(0.1..0.35)];
    let shape = VoxelGrid::from_fn(16, |i, j, kk| {
        let c = voxel_center_unchecked(i, j, kk, 16);
        let q = (c.x / radii[0]).powi(2) + (c.y / radii[1]).powi(2) + (c.z / radii[2]).powi(2);
        (q <= 1.0) as u8 as f64
    })?;
    let pose = random_pose(rng::derive_seed(seed, &[1]), &PoseRanges::default())?;
    let mut s = render_silhouette(&shape, &pose, &k, n, n)?;
    s = degrade_silhouette(&s, 0, &DegradeParams::blur(case.blur_radius))?;
    if case.binarize {
        s = s.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    }
    let d = case.dim;
    let w = VolumeField::new(d, (0..d * d * d).map(|_| r.random_range(-1.0..1.0)).collect())?;
    Ok(Instance { k, pose, s, w })
}

fn linear_loss(img: &ImageField, pose: &Pose, inst: &Instance, dim: usize) -> Result<f64> {
    Ok(psvh_forward_linear(img, pose, &inst.k, dim)?.dot(&inst.w))
}

/// Compares analytic hull-layer gradients with central finite differences on
/// a randomized instance. Deterministic given `seed`.
pub fn gradcheck(case: &GradcheckCase, seed: u64, paths: &[GradcheckPath]) -> Result<GradcheckReport> {
    case.validate()?;
    let inst = build_instance(case, seed)?;
    let dim = case.dim;
    let (ds, dp) = psvh_backward_exact(&inst.w, &inst.s, &inst.pose, &inst.k)?;
    let base = ImageField { width: inst.s.width(), height: inst.s.height(), values: inst.s.values().to_vec() };
    let mut rows = Vec::new();
    let mut report = GradcheckReport {
        seed,
        rows: Vec::new(),
        pose_ineligible: None,
        max_rel_pose: None,
        max_rel_silhouette: 0.0,
        pose_tol: case.pose_tol,
        silhouette_tol: case.silhouette_tol,
    };

    if paths.contains(&GradcheckPath::Silhouette) {
        // Probe every pixel the loss touches when there are few of them,
        // otherwise a seeded subset, plus an equal number of arbitrary pixels.
        let mut r = rng::stream(seed, &[0x7078]);
        let touched: Vec<usize> = (0..ds.values.len()).filter(|&i| ds.values[i] != 0.0).collect();
        let mut probes: Vec<usize> =
            (0..case.probes.min(touched.len())).map(|_| touched[r.random_range(0..touched.len())]).collect();
        probes.extend((0..case.probes / 4).map(|_| r.random_range(0..ds.values.len())));
        let h = case.silhouette_step;
        for px in probes {
            let mut img = base.clone();
            img.values[px] = base.values[px] + h;
            let lp = linear_loss(&img, &inst.pose, &inst, dim)?;
            img.values[px] = base.values[px] - h;
            let lm = linear_loss(&img, &inst.pose, &inst, dim)?;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = relative_error(ds.values[px], numeric);
            report.max_rel_silhouette = report.max_rel_silhouette.max(rel);
            rows.push(GradcheckRow {
                parameter: format!("S[{},{}]", px % base.width, px / base.width),
                analytic: ds.values[px],
                numeric,
                rel_error: rel,
            });
        }
    }

    if paths.contains(&GradcheckPath::Pose) {
        match pose_gradcheck_eligible(&inst.s) {
            Err(reason) => report.pose_ineligible = Some(reason),
            Ok(()) => {
                let h = case.pose_step;
                let mut worst: f64 = 0.0;
                for (c, name) in POSE_PARAMETER_NAMES.iter().enumerate() {
                    let mut p = inst.pose.to_array();
                    p[c] += h;
                    let lp = linear_loss(&base, &Pose::from_array(p), &inst, dim)?;
                    p[c] -= 2.0 * h;
                    let lm = linear_loss(&base, &Pose::from_array(p), &inst, dim)?;
                    let numeric = (lp - lm) / (2.0 * h);
                    let rel = relative_error(dp[c], numeric);
                    worst = worst.max(rel);
                    rows.push(GradcheckRow { parameter: name.to_string(), analytic: dp[c], numeric, rel_error: rel });
                }
                report.max_rel_pose = Some(worst);
            }
        }
    }
    report.rows = rows;
    Ok(report)
}
