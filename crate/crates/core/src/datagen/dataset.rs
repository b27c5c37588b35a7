//! Posed renderings of random shapes with noisy pose and silhouette
//! estimates, and their on-disk layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<id>/vgt.grid      ground-truth occupancy
//! <dir>/<id>/vcoarse.grid  corrupted occupancy
//! <dir>/<id>/sil.pgm       ground-truth silhouette
//! <dir>/<id>/sil_est.pgm   degraded silhouette
//! <dir>/<id>/pose.json     intrinsics, ground-truth and estimated pose
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt_voxels, CorruptParams};
use super::shapes::{make_shape, random_shape, ShapeKind, ShapeSpec};
use crate::error::{invalid, Error, Result};
use crate::geometry::{
    pose_rotation_error, random_pose, rotation_to_euler, CameraIntrinsics, Pose, PoseRanges, Vec3, DEFAULT_FOCAL,
    DEFAULT_IMAGE_SIZE,
};
use crate::psvh::psvh_forward;
use crate::rng::{self, derive_seed};
use crate::silhouette::{degrade_silhouette, load_pgm, render_silhouette, save_pgm, DegradeParams, SilhouetteMap};
use crate::voxelgrid::{load_grid, save_grid, HullGrid, VoxelGrid, DEFAULT_DIM};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
const MAX_RESAMPLES: usize = 100;

/// Adds Gaussian noise to the Euler angles (`rot_sigma_deg`, in degrees) and
/// to the metric translation `t` (`trans_sigma`, cube units). Draws that
/// put the object at or behind the camera are redrawn.
pub fn perturb_pose(p: &Pose, k: &CameraIntrinsics, seed: u64, rot_sigma_deg: f64, trans_sigma: f64) -> Result<Pose> {
    p.validate()?;
    if !(rot_sigma_deg >= 0.0 && trans_sigma >= 0.0 && rot_sigma_deg.is_finite() && trans_sigma.is_finite()) {
        return Err(invalid("perturbation sigmas must be non-negative"));
    }
    let mut rng = rng::rng_from_seed(seed);
    let rot = Normal::new(0.0, rot_sigma_deg.to_radians()).map_err(|e| invalid(e.to_string()))?;
    let trans = Normal::new(0.0, trans_sigma).map_err(|e| invalid(e.to_string()))?;
    let t0 = p.translation(k);
    for _ in 0..MAX_RESAMPLES {
        let theta = [0, 1, 2].map(|i| p.theta[i] + rot.sample(&mut rng));
        let t = t0 + Vec3::new(trans.sample(&mut rng), trans.sample(&mut rng), trans.sample(&mut rng));
        if t.z > 0.0 {
            return Pose::with_translation(theta, &t, k);
        }
    }
    Err(invalid(format!("no pose with positive depth after {MAX_RESAMPLES} draws")))
}

/// Rotates `p` by exactly `angle_deg` about a random axis; translation is
/// unchanged. The geodesic rotation error to `p` equals the angle.
pub fn rotate_pose(p: &Pose, angle_deg: f64, seed: u64) -> Pose {
    let mut rng = rng::rng_from_seed(seed);
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let axis = Unit::new_normalize(Vec3::new(axis[0], axis[1], axis[2]));
    let r = Rotation3::from_axis_angle(&axis, angle_deg.to_radians()).into_inner() * p.rotation();
    Pose { theta: rotation_to_euler(&r), ..*p }
}

/// Noise applied to produce the estimated inputs of each sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub corrupt: CorruptParams,
    pub rot_sigma_deg: f64,
    pub trans_sigma: f64,
    pub degrade: DegradeParams,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { corrupt: CorruptParams::toy(), rot_sigma_deg: 5.0, trans_sigma: 0.0, degrade: DegradeParams::dilate(2) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_shapes: usize,
    pub views_per_shape: usize,
    pub dim: usize,
    pub image_size: usize,
    pub focal: f64,
    pub seed: u64,
    /// Kinds are assigned round-robin by shape id.
    pub kinds: Vec<ShapeKind>,
    pub pose_ranges: PoseRanges,
    pub noise: NoiseSpec,
    /// Fraction of shapes held out for testing.
    pub test_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_shapes: 20,
            views_per_shape: 24,
            dim: DEFAULT_DIM,
            image_size: DEFAULT_IMAGE_SIZE,
            focal: DEFAULT_FOCAL,
            seed: 0,
            kinds: ShapeKind::ALL.to_vec(),
            pose_ranges: PoseRanges::default(),
            noise: NoiseSpec::default(),
            test_fraction: 0.2,
        }
    }
}

impl DatasetConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.focal, self.image_size, self.image_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_shapes == 0 || self.views_per_shape == 0 {
            return Err(invalid("dataset needs at least one shape and one view"));
        }
        if self.kinds.is_empty() {
            return Err(invalid("dataset needs at least one shape kind"));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(invalid(format!("test fraction {} outside [0, 1]", self.test_fraction)));
        }
        VoxelGrid::zeros(self.dim)?;
        SilhouetteMap::zeros(self.image_size, self.image_size)?;
        self.intrinsics()?;
        self.pose_ranges.validate()?;
        self.noise.corrupt.validate()?;
        self.noise.degrade.validate()
    }

    /// Shape ids held out for testing.
    pub fn test_shapes(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.n_shapes).collect();
        ids.shuffle(&mut rng::stream(self.seed, &[6]));
        let n_test = (self.test_fraction * self.n_shapes as f64).round() as usize;
        let mut test = ids[..n_test].to_vec();
        test.sort_unstable();
        test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Noise actually applied to one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseMeta {
    pub rot_sigma_deg: f64,
    pub trans_sigma: f64,
    /// Geodesic rotation error of the estimated pose, in degrees.
    pub rotation_error_deg: f64,
    pub degrade: DegradeParams,
    pub corrupt: CorruptParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub shape_id: usize,
    pub view: usize,
    pub spec: ShapeSpec,
    pub split: Split,
    pub v_gt: VoxelGrid,
    pub pose_gt: Pose,
    pub s_gt: SilhouetteMap,
    pub v_coarse: VoxelGrid,
    pub pose_est: Pose,
    pub s_est: SilhouetteMap,
    pub noise: NoiseMeta,
}

impl Sample {
    pub fn gt_hull(&self, k: &CameraIntrinsics) -> Result<HullGrid> {
        Ok(psvh_forward(&self.s_gt, &self.pose_gt, k, self.v_gt.dim())?.hull)
    }

    /// Hull from the degraded silhouette seen from the estimated pose.
    pub fn noisy_hull(&self, k: &CameraIntrinsics) -> Result<HullGrid> {
        Ok(psvh_forward(&self.s_est, &self.pose_est, k, self.v_gt.dim())?.hull)
    }
}

pub fn sample_id(shape_id: usize, view: usize) -> String {
    format!("s{shape_id:04}_v{view:02}")
}

/// Seed of one random stream of one sample.
fn sample_seed(base: u64, stream: u64, shape_id: usize, view: usize) -> u64 {
    derive_seed(base, &[stream, shape_id as u64, view as u64])
}

/// Generates the dataset in memory. Every sample's randomness is keyed by
/// `(seed, shape id, view)`, so the result does not depend on thread count.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let test = cfg.test_shapes();
    let shapes: Vec<(ShapeSpec, VoxelGrid)> = (0..cfg.n_shapes)
        .into_par_iter()
        .map(|s| {
            let kind = cfg.kinds[s % cfg.kinds.len()];
            let spec = random_shape(kind, &mut rng::stream(cfg.seed, &[1, s as u64]));
            make_shape(&spec, cfg.dim).map(|v| (spec, v))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.n_shapes).flat_map(|s| (0..cfg.views_per_shape).map(move |v| (s, v))).collect();
    jobs.into_par_iter()
        .map(|(s, view)| {
            let (spec, v_gt) = &shapes[s];
            let noise = &cfg.noise;
            let pose_gt = random_pose(sample_seed(cfg.seed, 2, s, view), &cfg.pose_ranges)?;
            let s_gt = render_silhouette(v_gt, &pose_gt, &k, cfg.image_size, cfg.image_size)?;
            let v_coarse = corrupt_voxels(v_gt, sample_seed(cfg.seed, 3, s, view), &noise.corrupt)?;
            let pose_est =
                perturb_pose(&pose_gt, &k, sample_seed(cfg.seed, 4, s, view), noise.rot_sigma_deg, noise.trans_sigma)?;
            let s_est = degrade_silhouette(&s_gt, sample_seed(cfg.seed, 5, s, view), &noise.degrade)?;
            Ok(Sample {
                id: sample_id(s, view),
                shape_id: s,
                view,
                spec: *spec,
                split: if test.binary_search(&s).is_ok() { Split::Test } else { Split::Train },
                v_gt: v_gt.clone(),
                pose_gt,
                s_gt,
                v_coarse,
                pose_est,
                s_est,
                noise: NoiseMeta {
                    rot_sigma_deg: noise.rot_sigma_deg,
                    trans_sigma: noise.trans_sigma,
                    rotation_error_deg: pose_rotation_error(&pose_est, &pose_gt),
                    degrade: noise.degrade,
                    corrupt: noise.corrupt,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFiles {
    pub vgt: String,
    pub vcoarse: String,
    pub sil: String,
    pub sil_est: String,
    pub pose: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub shape_id: usize,
    pub view: usize,
    pub split: Split,
    pub spec: ShapeSpec,
    pub files: SampleFiles,
    pub noise: NoiseMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub intrinsics: CameraIntrinsics,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub intrinsics: CameraIntrinsics,
    pub gt: Pose,
    pub est: Pose,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes `samples` under `dir` and returns the manifest. Silhouettes are
/// stored as 8-bit PGM, so the stored `sil.pgm` equals the quantized render.
pub fn write_dataset(dir: impl AsRef<Path>, cfg: &DatasetConfig, samples: &[Sample]) -> Result<Manifest> {
    let dir = dir.as_ref();
    let k = cfg.intrinsics()?;
    std::fs::create_dir_all(dir)?;
    let entries = samples
        .par_iter()
        .map(|s| {
            let sub = dir.join(&s.id);
            std::fs::create_dir_all(&sub)?;
            let rel = |name: &str| format!("{}/{name}", s.id);
            let files = SampleFiles {
                vgt: rel("vgt.grid"),
                vcoarse: rel("vcoarse.grid"),
                sil: rel("sil.pgm"),
                sil_est: rel("sil_est.pgm"),
                pose: rel("pose.json"),
            };
            save_grid(dir.join(&files.vgt), &s.v_gt)?;
            save_grid(dir.join(&files.vcoarse), &s.v_coarse)?;
            save_pgm(dir.join(&files.sil), &s.s_gt)?;
            save_pgm(dir.join(&files.sil_est), &s.s_est)?;
            write_json(&dir.join(&files.pose), &PoseFile { intrinsics: k, gt: s.pose_gt, est: s.pose_est })?;
            Ok(SampleEntry {
                id: s.id.clone(),
                shape_id: s.shape_id,
                view: s.view,
                split: s.split,
                spec: s.spec,
                files,
                noise: s.noise,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { version: MANIFEST_VERSION, config: cfg.clone(), intrinsics: k, samples: entries };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// [`make_dataset`] followed by [`write_dataset`].
pub fn generate_dataset(dir: impl AsRef<Path>, cfg: &DatasetConfig) -> Result<Manifest> {
    write_dataset(dir, cfg, &make_dataset(cfg)?)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

pub fn load_sample(dir: impl AsRef<Path>, entry: &SampleEntry) -> Result<Sample> {
    let dir = dir.as_ref();
    let poses: PoseFile = serde_json::from_str(&std::fs::read_to_string(resolve(dir, &entry.files.pose))?)?;
    Ok(Sample {
        id: entry.id.clone(),
        shape_id: entry.shape_id,
        view: entry.view,
        spec: entry.spec,
        split: entry.split,
        v_gt: load_grid(resolve(dir, &entry.files.vgt))?,
        pose_gt: poses.gt,
        s_gt: load_pgm(resolve(dir, &entry.files.sil))?,
        v_coarse: load_grid(resolve(dir, &entry.files.vcoarse))?,
        pose_est: poses.est,
        s_est: load_pgm(resolve(dir, &entry.files.sil_est))?,
        noise: entry.noise,
    })
}

/// Loads every sample listed in the manifest, in manifest order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<Sample>)> {
    let dir = dir.as_ref();
    let m = load_manifest(dir)?;
    let samples = m.samples.par_iter().map(|e| load_sample(dir, e)).collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}
