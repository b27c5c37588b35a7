//! Evaluation harness: per-sample metric rows, rotation-noise sweeps,
//! bucketed gain tables and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{rotate_pose, Sample};
use crate::error::{invalid, Error, Result};
use crate::geometry::{pose_rotation_error, translation_error, CameraIntrinsics, Pose};
use crate::psvh::psvh_forward;
use crate::refine::{carve_refine, rnet_forward, RefinerParams};
use crate::rng::derive_seed;
use crate::silhouette::{silhouette_iou, SilhouetteMap};
use crate::voxelgrid::{iou, HullGrid, VoxelGrid, IOU_THRESHOLD};

/// Hull values at or above this count as inside the hull.
pub const HULL_THRESHOLD: f64 = 0.5;
/// Silhouette IoU threshold.
pub const SILHOUETTE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ROT_BUCKETS_DEG: [f64; 4] = [0.0, 5.0, 10.0, 20.0];

/// Fraction of occupied ground-truth voxels (value ≥ 0.5) whose hull value
/// is at least `tau`. An empty ground truth counts as fully contained.
pub fn hull_containment(h: &HullGrid, v_gt: &VoxelGrid, tau: f64) -> Result<f64> {
    h.check_same_dim(v_gt)?;
    let (mut inside, mut total) = (0usize, 0usize);
    for (&hv, &g) in h.values().iter().zip(v_gt.values()) {
        if g >= 0.5 {
            total += 1;
            inside += usize::from(hv >= tau);
        }
    }
    Ok(if total == 0 { 1.0 } else { inside as f64 / total as f64 })
}

/// How a coarse grid is refined.
#[derive(Debug, Clone, Copy)]
pub enum Refinement<'a> {
    /// Leave the coarse grid unchanged.
    Identity,
    /// Analytic carving with the given hull threshold.
    Carve(f64),
    /// Learned refiner.
    Network(&'a RefinerParams),
    /// Learned refiner fed a constant all-ones hull.
    NetworkNoHull(&'a RefinerParams),
}

impl Refinement<'_> {
    pub fn apply(&self, coarse: &VoxelGrid, hull: &HullGrid) -> Result<VoxelGrid> {
        match self {
            Refinement::Identity => Ok(coarse.clone()),
            Refinement::Carve(tau) => carve_refine(coarse, hull, *tau),
            Refinement::Network(p) => rnet_forward(p, coarse, hull),
            Refinement::NetworkNoHull(p) => rnet_forward(p, coarse, &VoxelGrid::filled(coarse.dim(), 1.0)?),
        }
    }
}

/// Which silhouette the hull is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SilhouetteSource {
    Gt,
    Estimated,
}

/// Which pose the hull is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseSource {
    Gt,
    /// The sample's estimated pose; rows are labelled with the nearest bucket.
    Estimated,
    /// The ground-truth pose rotated by exactly each bucket angle about a
    /// random axis; one row per sample and bucket.
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub silhouette: SilhouetteSource,
    pub pose: PoseSource,
    pub rot_buckets_deg: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            silhouette: SilhouetteSource::Estimated,
            pose: PoseSource::Sweep,
            rot_buckets_deg: DEFAULT_ROT_BUCKETS_DEG.to_vec(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rot_buckets_deg.is_empty() || self.rot_buckets_deg.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(invalid("rotation buckets must be a non-empty list of non-negative angles"));
        }
        Ok(())
    }
}

pub const EVAL_HEADER: &str = "id,shape_id,view,kind,bucket_deg,rotation_error_deg,translation_error_pct,\
silhouette_iou,hull_containment,iou_coarse,iou_refined,iou_gain";

/// Metrics of one sample under one hull pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub shape_id: usize,
    pub view: usize,
    pub kind: String,
    pub bucket_deg: f64,
    pub rotation_error_deg: f64,
    pub translation_error_pct: f64,
    pub silhouette_iou: f64,
    pub hull_containment: f64,
    pub iou_coarse: f64,
    pub iou_refined: f64,
    pub iou_gain: f64,
}

/// Scores one sample with the hull built from `(sil, pose)`.
pub fn evaluate_sample(
    sample: &Sample,
    k: &CameraIntrinsics,
    sil: &SilhouetteMap,
    pose: &Pose,
    refinement: &Refinement<'_>,
    bucket_deg: f64,
) -> Result<EvalRow> {
    let dim = sample.v_gt.dim();
    let hull = psvh_forward(sil, pose, k, dim)?.hull;
    let refined = refinement.apply(&sample.v_coarse, &hull)?;
    let iou_coarse = iou(&sample.v_coarse, &sample.v_gt, IOU_THRESHOLD)?;
    let iou_refined = iou(&refined, &sample.v_gt, IOU_THRESHOLD)?;
    Ok(EvalRow {
        id: sample.id.clone(),
        shape_id: sample.shape_id,
        view: sample.view,
        kind: sample.spec.kind().name().to_string(),
        bucket_deg,
        rotation_error_deg: pose_rotation_error(pose, &sample.pose_gt),
        translation_error_pct: translation_error(&pose.translation(k), &sample.pose_gt.translation(k))?,
        silhouette_iou: silhouette_iou(sil, &sample.s_gt, SILHOUETTE_THRESHOLD)?,
        hull_containment: hull_containment(&hull, &sample.v_gt, HULL_THRESHOLD)?,
        iou_coarse,
        iou_refined,
        iou_gain: iou_refined - iou_coarse,
    })
}

fn nearest_bucket(buckets: &[f64], x: f64) -> f64 {
    buckets.iter().copied().min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs())).unwrap_or(x)
}

/// Evaluates every sample per `cfg`. Rows come out in sample order, then
/// bucket order.
pub fn evaluate(
    samples: &[Sample],
    k: &CameraIntrinsics,
    refinement: &Refinement<'_>,
    cfg: &EvalConfig,
) -> Result<Vec<EvalRow>> {
    use rayon::prelude::*;
    cfg.validate()?;
    let jobs: Vec<(usize, Option<f64>)> = match cfg.pose {
        PoseSource::Sweep => {
            (0..samples.len()).flat_map(|i| cfg.rot_buckets_deg.iter().map(move |&b| (i, Some(b)))).collect()
        }
        _ => (0..samples.len()).map(|i| (i, None)).collect(),
    };
    jobs.par_iter()
        .map(|&(i, bucket)| {
            let s = &samples[i];
            let sil = match cfg.silhouette {
                SilhouetteSource::Gt => &s.s_gt,
                SilhouetteSource::Estimated => &s.s_est,
            };
            let (pose, label) = match (&cfg.pose, bucket) {
                (PoseSource::Gt, _) => (s.pose_gt, 0.0),
                (PoseSource::Estimated, _) => {
                    (s.pose_est, nearest_bucket(&cfg.rot_buckets_deg, pose_rotation_error(&s.pose_est, &s.pose_gt)))
                }
                (PoseSource::Sweep, Some(b)) => {
                    (rotate_pose(&s.pose_gt, b, derive_seed(cfg.seed, &[0x7377, i as u64, b.to_bits()])), b)
                }
                (PoseSource::Sweep, None) => unreachable!("sweep jobs carry a bucket"),
            };
            evaluate_sample(s, k, sil, &pose, refinement, label)
        })
        .collect()
}

/// Means over a group of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: String,
    pub n: usize,
    pub rotation_error_deg: f64,
    pub translation_error_pct: f64,
    pub silhouette_iou: f64,
    pub hull_containment: f64,
    pub iou_coarse: f64,
    pub iou_refined: f64,
    pub iou_gain: f64,
}

pub const AGGREGATE_HEADER: &str = "label,n,rotation_error_deg,translation_error_pct,silhouette_iou,\
hull_containment,iou_coarse,iou_refined,iou_gain";

pub fn aggregate(label: impl Into<String>, rows: &[&EvalRow]) -> Result<Aggregate> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    Ok(Aggregate {
        label: label.into(),
        n: rows.len(),
        rotation_error_deg: mean(|r| r.rotation_error_deg),
        translation_error_pct: mean(|r| r.translation_error_pct),
        silhouette_iou: mean(|r| r.silhouette_iou),
        hull_containment: mean(|r| r.hull_containment),
        iou_coarse: mean(|r| r.iou_coarse),
        iou_refined: mean(|r| r.iou_refined),
        iou_gain: mean(|r| r.iou_gain),
    })
}

/// One aggregate per distinct bucket, in ascending bucket order.
pub fn bucket_table(rows: &[EvalRow]) -> Result<Vec<Aggregate>> {
    let mut buckets: Vec<f64> = rows.iter().map(|r| r.bucket_deg).collect();
    buckets.sort_by(f64::total_cmp);
    buckets.dedup();
    buckets
        .iter()
        .map(|&b| {
            let group: Vec<&EvalRow> = rows.iter().filter(|r| r.bucket_deg == b).collect();
            aggregate(format!("bucket_{b}"), &group)
        })
        .collect()
}

/// Ranks starting at 1, ties share their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(invalid("rank correlation needs at least two points"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn write_eval_csv<W: Write>(w: W, rows: &[EvalRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(EVAL_HEADER.split(','))?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(w: W, rows: &[Aggregate]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(AGGREGATE_HEADER.split(','))?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
