//! Synthetic coarse shapes: ground truth with thin parts removed, spurious
//! blobs attached, blurred and perturbed by noise.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;
use crate::voxelgrid::VoxelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptParams {
    /// Number of thin connected components to remove.
    pub drop_components: usize,
    /// Components larger than this are never removed.
    pub max_component_voxels: usize,
    /// Number of solid balls attached to the surface.
    pub blobs: usize,
    /// Ball radius range in voxels.
    pub blob_radius: [f64; 2],
    /// Radius of the 3D box blur, in voxels.
    pub blur_radius: usize,
    pub noise_sigma: f64,
}

impl Default for CorruptParams {
    fn default() -> Self {
        Self {
            drop_components: 0,
            max_component_voxels: 400,
            blobs: 0,
            blob_radius: [2.0, 4.0],
            blur_radius: 0,
            noise_sigma: 0.0,
        }
    }
}

impl CorruptParams {
    /// Corruption used for the synthetic training sets.
    pub fn toy() -> Self {
        Self {
            drop_components: 2,
            blobs: 4,
            blob_radius: [3.0, 5.0],
            blur_radius: 1,
            noise_sigma: 0.08,
            ..Default::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.drop_components == 0 && self.blobs == 0 && self.blur_radius == 0 && self.noise_sigma == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(invalid(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        let [lo, hi] = self.blob_radius;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(invalid(format!("bad blob radius range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// 6-connected components of `mask` on a `dim³` grid, each as a list of
/// flat indices in ascending order. Components are ordered by their
/// smallest index.
pub fn connected_components(mask: &[bool], dim: usize) -> Vec<Vec<usize>> {
    let mut label = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] {
            continue;
        }
        let mut comp = Vec::new();
        label[start] = true;
        stack.push(start);
        while let Some(n) = stack.pop() {
            comp.push(n);
            let (i, j, k) = (n % dim, (n / dim) % dim, n / (dim * dim));
            let mut visit = |m: usize| {
                if mask[m] && !label[m] {
                    label[m] = true;
                    stack.push(m);
                }
            };
            if i > 0 {
                visit(n - 1);
            }
            if i + 1 < dim {
                visit(n + 1);
            }
            if j > 0 {
                visit(n - dim);
            }
            if j + 1 < dim {
                visit(n + dim);
            }
            if k > 0 {
                visit(n - dim * dim);
            }
            if k + 1 < dim {
                visit(n + dim * dim);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Separable 3D min/max/mean filter over a `(2r+1)³` box, clipped at the
/// grid border.
fn box_filter(values: &[f64], dim: usize, r: usize, op: fn(&[f64]) -> f64) -> Vec<f64> {
    if r == 0 {
        return values.to_vec();
    }
    let stride = [1, dim, dim * dim];
    let mut cur = values.to_vec();
    let mut window = Vec::with_capacity(2 * r + 1);
    for s in stride {
        let mut next = vec![0.0; cur.len()];
        for (n, out) in next.iter_mut().enumerate() {
            let c = (n / s) % dim;
            let (lo, hi) = (c.saturating_sub(r), (c + r).min(dim - 1));
            window.clear();
            window.extend((lo..=hi).map(|t| cur[n - c * s + t * s]));
            *out = op(&window);
        }
        cur = next;
    }
    cur
}

fn wmin(w: &[f64]) -> f64 {
    w.iter().copied().fold(f64::INFINITY, f64::min)
}

fn wmax(w: &[f64]) -> f64 {
    w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn wmean(w: &[f64]) -> f64 {
    w.iter().sum::<f64>() / w.len() as f64
}

/// Mean filter over a `(2r+1)³` box.
pub fn box_blur_3d(v: &VoxelGrid, radius: usize) -> VoxelGrid {
    let values = box_filter(v.values(), v.dim(), radius, wmean);
    VoxelGrid::from_values_unchecked(v.dim(), values)
}

/// Occupied voxels (≥ 0.5) removed by a morphological opening with a 3³
/// box, grouped into 6-connected components. Legs and other parts thinner
/// than three voxels end up here.
pub fn thin_components(v: &VoxelGrid) -> Vec<Vec<usize>> {
    let dim = v.dim();
    let solid: Vec<f64> = v.values().iter().map(|&x| if x >= 0.5 { 1.0 } else { 0.0 }).collect();
    let opened = box_filter(&box_filter(&solid, dim, 1, wmin), dim, 1, wmax);
    let residual: Vec<bool> = solid.iter().zip(&opened).map(|(&s, &o)| s == 1.0 && o == 0.0).collect();
    connected_components(&residual, dim)
}

/// Deterministic coarse version of `v_gt`: drop thin components, attach
/// blobs, blur, add clamped Gaussian noise, in that order. All-zero
/// parameters return the input unchanged.
pub fn corrupt_voxels(v_gt: &VoxelGrid, seed: u64, params: &CorruptParams) -> Result<VoxelGrid> {
    params.validate()?;
    let dim = v_gt.dim();
    let mut rng = rng::rng_from_seed(seed);
    let mut values = v_gt.values().to_vec();

    if params.drop_components > 0 {
        let mut comps: Vec<Vec<usize>> = thin_components(v_gt)
            .into_iter()
            .filter(|c| c.len() >= 4 && c.len() <= params.max_component_voxels)
            .collect();
        for _ in 0..params.drop_components.min(comps.len()) {
            let c = comps.swap_remove(rng.random_range(0..comps.len()));
            for n in c {
                values[n] = 0.0;
            }
        }
    }

    if params.blobs > 0 {
        let idx = |i: usize, j: usize, k: usize| i + dim * (j + dim * k);
        let occupied = |vals: &[f64], i: isize, j: isize, k: isize| {
            let d = dim as isize;
            (0..d).contains(&i)
                && (0..d).contains(&j)
                && (0..d).contains(&k)
                && vals[idx(i as usize, j as usize, k as usize)] >= 0.5
        };
        let surface: Vec<[usize; 3]> = (0..values.len())
            .filter_map(|n| {
                let (i, j, k) = ((n % dim) as isize, ((n / dim) % dim) as isize, (n / (dim * dim)) as isize);
                let on = occupied(&values, i, j, k)
                    && [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                        .iter()
                        .any(|(a, b, c)| !occupied(&values, i + a, j + b, k + c));
                on.then_some([i as usize, j as usize, k as usize])
            })
            .collect();
        if !surface.is_empty() {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for _ in 0..params.blobs {
                let anchor = surface[rng.random_range(0..surface.len())];
                let r = if params.blob_radius[0] == params.blob_radius[1] {
                    params.blob_radius[0]
                } else {
                    rng.random_range(params.blob_radius[0]..params.blob_radius[1])
                };
                let mut dir = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
                let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                dir.iter_mut().for_each(|x| *x /= len);
                let c: Vec<f64> = (0..3).map(|a| anchor[a] as f64 + dir[a] * r).collect();
                let lo = |a: usize| (c[a] - r).floor().max(1.0) as usize;
                let hi = |a: usize| ((c[a] + r).ceil() as usize).min(dim - 2);
                for k in lo(2)..=hi(2) {
                    for j in lo(1)..=hi(1) {
                        for i in lo(0)..=hi(0) {
                            let d2 = (i as f64 - c[0]).powi(2) + (j as f64 - c[1]).powi(2) + (k as f64 - c[2]).powi(2);
                            if d2 <= r * r {
                                values[idx(i, j, k)] = 1.0;
                            }
                        }
                    }
                }
            }
        }
    }

    values = box_filter(&values, dim, params.blur_radius, wmean);

    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).map_err(|e| invalid(e.to_string()))?;
        for x in values.iter_mut() {
            *x = (*x + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(VoxelGrid::from_values_unchecked(dim, values))
}
