//! Silhouette images: rendering from voxel grids, degradation and 2D metrics.

mod pgm;

pub use pgm::{load_pgm, read_pgm, save_pgm, write_pgm};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{euler_rotation_derivatives, CameraIntrinsics, Pose, PoseProjector, Vec3};
use crate::rng;
use crate::voxelgrid::VoxelGrid;

pub const MIN_IMAGE_DIM: usize = 8;

/// Per-pixel foreground probabilities, row-major. Pixel `(x, y)` is centered
/// at image coordinate `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_IMAGE_DIM || height < MIN_IMAGE_DIM {
        return Err(invalid(format!(
            "silhouette must be at least {MIN_IMAGE_DIM}×{MIN_IMAGE_DIM}, got {width}×{height}"
        )));
    }
    Ok(())
}

impl SilhouetteMap {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_dims(width, height)?;
        if !(0.0..=1.0).contains(&value) {
            return Err(invalid(format!("probability {value} outside [0, 1]")));
        }
        Ok(Self { width, height, values: vec![value; width * height] })
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "expected {} pixels for {width}×{height}, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, values })
    }

    /// Per-pixel constructor; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        check_dims(width, height)?;
        let values = (0..width * height).map(|n| f(n % width, n / width).clamp(0.0, 1.0)).collect();
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch(format!(
                "silhouettes {}×{} vs {}×{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// True when every pixel is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Rounds every pixel to the nearest 1/255, matching what survives a PGM
    /// round trip.
    pub fn quantized(&self) -> Self {
        self.map(|v| (v * 255.0).round() / 255.0)
    }
}

/// Unconstrained real image with the silhouette layout (gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ImageField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Slab test against `[−0.5, 0.5]³`; returns the parametric interval of the
/// ray inside the cube, clipped to `s ≥ 0`.
fn cube_interval(origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a].abs() > 0.5 {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut t0, mut t1) = ((-0.5 - origin[a]) * inv, (0.5 - origin[a]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        lo = lo.max(t0);
        hi = hi.min(t1);
    }
    (hi > lo).then_some((lo, hi))
}

/// Renders the silhouette of an occupancy grid seen from `pose`.
///
/// Each pixel's camera ray is intersected with the canonical cube and the
/// grid is sampled trilinearly at `2·D` evenly spaced points across the
/// intersection; the pixel takes the maximum sample. Rays that miss the cube
/// give 0.
pub fn render_silhouette(
    v: &VoxelGrid,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<SilhouetteMap> {
    render_silhouette_with_steps(v, pose, k, width, height, 2 * v.dim())
}

/// [`render_silhouette`] with an explicit number of samples per ray.
pub fn render_silhouette_with_steps(
    v: &VoxelGrid,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
    steps: usize,
) -> Result<SilhouetteMap> {
    check_dims(width, height)?;
    if steps == 0 {
        return Err(invalid("ray march needs at least one step"));
    }
    let proj = PoseProjector::new(k, pose)?;
    let rt = proj.transform.rotation.transpose();
    let origin = -(rt * proj.transform.translation);
    let mut values = vec![0.0; width * height];
    values.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = march(v, &origin, &(rt * k.ray(x as f64, y as f64)), steps).best;
        }
    });
    Ok(SilhouetteMap { width, height, values })
}

/// Maximum trilinear sample along one ray, the ray parameter where it was
/// taken and the interval it was sampled over.
struct March {
    best: f64,
    s: f64,
    n: usize,
    interval: (f64, f64),
}

fn march(v: &VoxelGrid, origin: &Vec3, dir: &Vec3, steps: usize) -> March {
    let mut m = March { best: 0.0, s: 0.0, n: usize::MAX, interval: (0.0, 0.0) };
    let Some((s0, s1)) = cube_interval(origin, dir) else { return m };
    m.interval = (s0, s1);
    let ds = (s1 - s0) / steps as f64;
    for n in 0..steps {
        let s = s0 + (n as f64 + 0.5) * ds;
        let val = v.sample_trilinear(&(origin + dir * s));
        if val > m.best {
            m = March { best: val, s, n, ..m };
        }
        if m.best >= 1.0 {
            break;
        }
    }
    m
}

/// Derivative of the ray parameter where the ray `origin + s·dir` crosses
/// the cube face it enters (`entry`) or leaves through.
fn face_param_grad(origin: &Vec3, dir: &Vec3, s: f64, d_origin: &Vec3, d_dir: &Vec3) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            continue;
        }
        for b in [-0.5, 0.5] {
            let t = (b - origin[a]) / dir[a];
            let gap = (t - s).abs();
            if gap < best.0 {
                best = (gap, -(d_origin[a] + s * d_dir[a]) / dir[a]);
            }
        }
    }
    best.1
}

/// Pose gradient of `Σ g(u)·R(u)` where `R` is [`render_silhouette`].
///
/// Each pixel is differentiated at its maximizing sample. The sample moves
/// with the pose both rigidly and along the ray, as the ray's entry and exit
/// through the cube shift. Saturated pixels contribute nothing.
pub fn render_silhouette_pose_grad(
    v: &VoxelGrid,
    pose: &Pose,
    k: &CameraIntrinsics,
    dl_dr: &ImageField,
) -> Result<[f64; 6]> {
    check_dims(dl_dr.width, dl_dr.height)?;
    let steps = 2 * v.dim();
    let proj = PoseProjector::new(k, pose)?;
    let rt = proj.transform.rotation.transpose();
    let t = proj.transform.translation;
    let origin = -(rt * t);
    let d_rot = euler_rotation_derivatives(pose.theta[0], pose.theta[1], pose.theta[2]);
    let dt = [
        Vec3::new(pose.tz / k.f, 0.0, 0.0),
        Vec3::new(0.0, pose.tz / k.f, 0.0),
        Vec3::new(pose.tu / k.f, pose.tv / k.f, 1.0),
    ];
    let mut d_origin = [Vec3::zeros(); 6];
    for i in 0..3 {
        d_origin[i] = -(d_rot[i].transpose() * t);
        d_origin[3 + i] = -(rt * dt[i]);
    }
    let width = dl_dr.width;
    let rows: Vec<[f64; 6]> = dl_dr
        .values
        .par_chunks(width)
        .enumerate()
        .map(|(y, row)| {
            let mut acc = [0.0; 6];
            for (x, &g) in row.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let ray = k.ray(x as f64, y as f64);
                let dir = rt * ray;
                let m = march(v, &origin, &dir, steps);
                if m.n == usize::MAX || m.best >= 1.0 {
                    continue;
                }
                let p = origin + dir * m.s;
                let grad = v.sample_trilinear_grad(&p);
                let alpha = (m.n as f64 + 0.5) / steps as f64;
                let (s0, s1) = m.interval;
                for i in 0..6 {
                    let d_dir = if i < 3 { d_rot[i].transpose() * ray } else { Vec3::zeros() };
                    let ds0 = if s0 > 0.0 { face_param_grad(&origin, &dir, s0, &d_origin[i], &d_dir) } else { 0.0 };
                    let ds1 = face_param_grad(&origin, &dir, s1, &d_origin[i], &d_dir);
                    let ds = (1.0 - alpha) * ds0 + alpha * ds1;
                    let dp = d_origin[i] + d_dir * m.s + dir * ds;
                    acc[i] += g * grad.dot(&dp);
                }
            }
            acc
        })
        .collect();
    let mut out = [0.0; 6];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    Ok(out)
}

/// 2D IoU after binarizing both maps at `tau`; both empty gives 1.
pub fn silhouette_iou(a: &SilhouetteMap, b: &SilhouetteMap, tau: f64) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(crate::voxelgrid::mask_iou(&a.values, &b.values, tau))
}

/// Parameters of [`degrade_silhouette`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeParams {
    pub blur_radius: usize,
    pub dilate_px: usize,
    pub erode_px: usize,
    pub flip_rate: f64,
}

impl DegradeParams {
    pub fn blur(radius: usize) -> Self {
        Self { blur_radius: radius, ..Default::default() }
    }

    pub fn dilate(px: usize) -> Self {
        Self { dilate_px: px, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(invalid(format!("flip rate {} outside [0, 1]", self.flip_rate)));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.blur_radius == 0 && self.dilate_px == 0 && self.erode_px == 0 && self.flip_rate == 0.0
    }
}

/// Separable windowed reduction over a `(2r+1)²` square, clipped at the
/// image border.
fn window_filter(
    w: usize,
    h: usize,
    src: &[f64],
    r: usize,
    init: f64,
    op: fn(f64, f64) -> f64,
    mean: bool,
) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (c, n) = if horizontal { (x, w) } else { (y, h) };
                let lo = c.saturating_sub(r);
                let hi = (c + r).min(n - 1);
                let mut acc = init;
                for t in lo..=hi {
                    let idx = if horizontal { y * w + t } else { t * w + x };
                    acc = op(acc, src[idx]);
                }
                out[y * w + x] = if mean { acc / (hi - lo + 1) as f64 } else { acc };
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Transpose of [`box_blur`] as a linear map, applied to an image gradient.
pub fn box_blur_adjoint(g: &ImageField, radius: usize) -> ImageField {
    if radius == 0 {
        return g.clone();
    }
    let (w, h) = (g.width, g.height);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (c, n) = if horizontal { (x, w) } else { (y, h) };
                let lo = c.saturating_sub(radius);
                let hi = (c + radius).min(n - 1);
                let share = src[y * w + x] / (hi - lo + 1) as f64;
                for t in lo..=hi {
                    let idx = if horizontal { y * w + t } else { t * w + x };
                    out[idx] += share;
                }
            }
        }
        out
    };
    ImageField { width: w, height: h, values: pass(&pass(&g.values, false), true) }
}

pub fn box_blur(s: &SilhouetteMap, radius: usize) -> SilhouetteMap {
    let values = window_filter(s.width, s.height, &s.values, radius, 0.0, |a, b| a + b, true);
    SilhouetteMap { values, ..*s }
}

/// Grayscale dilation: maximum over a `(2r+1)²` square.
pub fn dilate(s: &SilhouetteMap, radius: usize) -> SilhouetteMap {
    let values = window_filter(s.width, s.height, &s.values, radius, 0.0, f64::max, false);
    SilhouetteMap { values, ..*s }
}

/// Grayscale erosion: minimum over a `(2r+1)²` square.
pub fn erode(s: &SilhouetteMap, radius: usize) -> SilhouetteMap {
    let values = window_filter(s.width, s.height, &s.values, radius, 1.0, f64::min, false);
    SilhouetteMap { values, ..*s }
}

/// Box blur, then dilation, then erosion, then independent pixel flips
/// `v → 1 − v` with probability `flip_rate`. Deterministic given `seed`.
pub fn degrade_silhouette(s: &SilhouetteMap, seed: u64, params: &DegradeParams) -> Result<SilhouetteMap> {
    params.validate()?;
    let mut out = box_blur(s, params.blur_radius);
    out = dilate(&out, params.dilate_px);
    out = erode(&out, params.erode_px);
    if params.flip_rate > 0.0 {
        let mut rng = rng::rng_from_seed(seed);
        for v in out.values.iter_mut() {
            if rng.random::<f64>() < params.flip_rate {
                *v = 1.0 - *v;
            }
        }
    }
    Ok(out)
}
