//! Parametric solids in the canonical cube, `+y` up.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::voxelgrid::{center_coord, VoxelGrid};

/// Thickness of chair and table legs, in voxels.
pub const LEG_VOXELS: usize = 2;
/// Smallest seat, table top and backrest thickness, in voxels.
pub const MIN_SLAB_VOXELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Sphere,
    Cylinder,
    Chairoid,
    Tabloid,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] =
        [ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Cylinder, ShapeKind::Chairoid, ShapeKind::Tabloid];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Chairoid => "chairoid",
            ShapeKind::Tabloid => "tabloid",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| invalid(format!("unknown shape kind {s:?}")))
    }
}

/// Shape parameters. Extents of the simple solids are in cube units and
/// centered at the origin. Furniture sizes are fractions of the grid edge,
/// rounded to whole voxels when the grid is built, so leg and slab
/// thicknesses are exact voxel counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSpec {
    Box {
        half: [f64; 3],
    },
    Sphere {
        radius: f64,
    },
    /// Axis along `y`.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    Chairoid {
        width: f64,
        depth: f64,
        leg_height: f64,
        seat_thickness: f64,
        back_height: f64,
        back_thickness: f64,
    },
    Tabloid {
        width: f64,
        depth: f64,
        leg_height: f64,
        top_thickness: f64,
    },
}

/// Half-open voxel index box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl IndexBox {
    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        (self.lo[0]..self.hi[0]).contains(&i)
            && (self.lo[1]..self.hi[1]).contains(&j)
            && (self.lo[2]..self.hi[2]).contains(&k)
    }

    pub fn volume(&self) -> usize {
        (0..3).map(|a| self.hi[a] - self.lo[a]).product()
    }
}

/// Axis-aligned parts of a piece of furniture.
#[derive(Debug, Clone, PartialEq)]
pub struct Furniture {
    pub legs: [IndexBox; 4],
    pub slabs: Vec<IndexBox>,
}

impl Furniture {
    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        self.legs.iter().chain(&self.slabs).any(|b| b.contains(i, j, k))
    }
}

fn voxels(frac: f64, dim: usize) -> usize {
    (frac * dim as f64).round() as usize
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl ShapeSpec {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeSpec::Box { .. } => ShapeKind::Box,
            ShapeSpec::Sphere { .. } => ShapeKind::Sphere,
            ShapeSpec::Cylinder { .. } => ShapeKind::Cylinder,
            ShapeSpec::Chairoid { .. } => ShapeKind::Chairoid,
            ShapeSpec::Tabloid { .. } => ShapeKind::Tabloid,
        }
    }

    /// Checks that the shape fits in the cube.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShapeSpec::Box { half } => half.iter().all(|&h| h.is_finite() && (0.0..=0.5).contains(&h)),
            ShapeSpec::Sphere { radius } => radius.is_finite() && (0.0..=0.5).contains(&radius),
            ShapeSpec::Cylinder { radius, half_height } => {
                [radius, half_height].iter().all(|&x| x.is_finite() && (0.0..=0.5).contains(&x))
            }
            ShapeSpec::Chairoid { width, depth, leg_height, seat_thickness, back_height, back_thickness } => {
                [width, depth, leg_height, seat_thickness, back_height, back_thickness].iter().all(|&x| in_unit(x))
                    && leg_height + seat_thickness + back_height <= 1.0
                    && back_thickness <= depth
            }
            ShapeSpec::Tabloid { width, depth, leg_height, top_thickness } => {
                [width, depth, leg_height, top_thickness].iter().all(|&x| in_unit(x))
                    && leg_height + top_thickness <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("shape does not fit in the unit cube: {self:?}")))
        }
    }

    /// Voxel layout of a chairoid or tabloid at grid size `dim`.
    pub fn furniture(&self, dim: usize) -> Option<Furniture> {
        let (width, depth, leg_h, slab_t, back) = match *self {
            ShapeSpec::Chairoid { width, depth, leg_height, seat_thickness, back_height, back_thickness } => {
                (width, depth, leg_height, seat_thickness, Some((back_height, back_thickness)))
            }
            ShapeSpec::Tabloid { width, depth, leg_height, top_thickness } => {
                (width, depth, leg_height, top_thickness, None)
            }
            _ => return None,
        };
        let w = voxels(width, dim).clamp(2 * LEG_VOXELS, dim);
        let d = voxels(depth, dim).clamp(2 * LEG_VOXELS, dim);
        let lh = voxels(leg_h, dim);
        let st = voxels(slab_t, dim).max(MIN_SLAB_VOXELS);
        let (bh, bt) = back.map_or((0, 0), |(h, t)| (voxels(h, dim), voxels(t, dim).clamp(MIN_SLAB_VOXELS, d)));
        let height = (lh + st + bh).min(dim);
        let (x0, z0, y0) = ((dim - w) / 2, (dim - d) / 2, (dim - height) / 2);
        let leg = |x: usize, z: usize| IndexBox { lo: [x, y0, z], hi: [x + LEG_VOXELS, y0 + lh, z + LEG_VOXELS] };
        let (x1, z1) = (x0 + w - LEG_VOXELS, z0 + d - LEG_VOXELS);
        let seat_top = (y0 + lh + st).min(dim);
        let mut slabs = vec![IndexBox { lo: [x0, y0 + lh, z0], hi: [x0 + w, seat_top, z0 + d] }];
        if bh > 0 {
            slabs.push(IndexBox { lo: [x0, seat_top, z0], hi: [x0 + w, (seat_top + bh).min(dim), z0 + bt] });
        }
        Some(Furniture { legs: [leg(x0, z0), leg(x1, z0), leg(x0, z1), leg(x1, z1)], slabs })
    }
}

/// Solid occupancy of `spec` on a `dim³` grid: a voxel is occupied when its
/// center lies inside the solid.
pub fn make_shape(spec: &ShapeSpec, dim: usize) -> Result<VoxelGrid> {
    spec.validate()?;
    VoxelGrid::zeros(dim)?;
    if let Some(f) = spec.furniture(dim) {
        return VoxelGrid::from_fn(dim, |i, j, k| f.contains(i, j, k) as u8 as f64);
    }
    let c = |i: usize| center_coord(i, dim);
    let spec = *spec;
    VoxelGrid::from_fn(dim, move |i, j, k| {
        let (x, y, z) = (c(i), c(j), c(k));
        let inside = match spec {
            ShapeSpec::Box { half } => x.abs() <= half[0] && y.abs() <= half[1] && z.abs() <= half[2],
            ShapeSpec::Sphere { radius } => x * x + y * y + z * z <= radius * radius,
            ShapeSpec::Cylinder { radius, half_height } => x * x + z * z <= radius * radius && y.abs() <= half_height,
            _ => unreachable!(),
        };
        inside as u8 as f64
    })
}

/// Random parameters for a shape of the given kind.
pub fn random_shape(kind: ShapeKind, rng: &mut Rng) -> ShapeSpec {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match kind {
        ShapeKind::Box => ShapeSpec::Box { half: [u(0.15, 0.4), u(0.15, 0.4), u(0.15, 0.4)] },
        ShapeKind::Sphere => ShapeSpec::Sphere { radius: u(0.22, 0.45) },
        ShapeKind::Cylinder => ShapeSpec::Cylinder { radius: u(0.15, 0.4), half_height: u(0.2, 0.45) },
        ShapeKind::Chairoid => ShapeSpec::Chairoid {
            width: u(0.45, 0.75),
            depth: u(0.45, 0.75),
            leg_height: u(0.25, 0.4),
            seat_thickness: u(0.1, 0.15),
            back_height: u(0.2, 0.35),
            back_thickness: u(0.1, 0.15),
        },
        ShapeKind::Tabloid => ShapeSpec::Tabloid {
            width: u(0.5, 0.85),
            depth: u(0.4, 0.75),
            leg_height: u(0.3, 0.5),
            top_thickness: u(0.1, 0.15),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn half_cube_box_has_sixteen_cubed_voxels() {
        let v = make_shape(&ShapeSpec::Box { half: [0.25; 3] }, 32).unwrap();
        assert_eq!(v.occupied_count(0.5), 16 * 16 * 16);
    }

    #[test]
    fn zero_sphere_is_empty() {
        let v = make_shape(&ShapeSpec::Sphere { radius: 0.0 }, 32).unwrap();
        assert_eq!(v.occupied_count(0.5), 0);
    }

    #[test]
    fn chairoid_leg_voxels_match_constructive_count() {
        let spec = ShapeSpec::Chairoid {
            width: 0.6,
            depth: 0.5,
            leg_height: 0.3,
            seat_thickness: 0.1,
            back_height: 0.3,
            back_thickness: 0.1,
        };
        let d = 32;
        let v = make_shape(&spec, d).unwrap();
        let f = spec.furniture(d).unwrap();
        let leg_h = (0.3_f64 * 32.0).round() as usize;
        let mut in_legs = 0;
        for k in 0..d {
            for j in 0..d {
                for i in 0..d {
                    if f.legs.iter().any(|b| b.contains(i, j, k)) && v.get(i, j, k) == 1.0 {
                        in_legs += 1;
                    }
                }
            }
        }
        assert_eq!(in_legs, 4 * LEG_VOXELS * LEG_VOXELS * leg_h);
        // Legs hang below the seat: the bottom layer holds exactly the four leg sections.
        let bottom = f.legs[0].lo[1];
        let count: usize = (0..d * d).filter(|&n| v.get(n % d, bottom, n / d) == 1.0).count();
        assert_eq!(count, 4 * LEG_VOXELS * LEG_VOXELS);
    }

    #[test]
    fn random_shapes_fit_and_are_nonempty() {
        let mut rng = rng_from_seed(9);
        for n in 0..50 {
            let kind = ShapeKind::ALL[n % 5];
            let spec = random_shape(kind, &mut rng);
            assert_eq!(spec.kind(), kind);
            let v = make_shape(&spec, 32).unwrap();
            assert!(v.occupied_count(0.5) > 100, "{spec:?}");
            // Nothing touches the outermost layer, so renders stay inside the cube.
            for a in 0..32 {
                for b in 0..32 {
                    assert_eq!(v.get(0, a, b) + v.get(31, a, b) + v.get(a, 0, b) + v.get(a, 31, b), 0.0, "{spec:?}");
                }
            }
        }
    }

    #[test]
    fn out_of_cube_rejected() {
        assert!(make_shape(&ShapeSpec::Sphere { radius: 0.6 }, 32).is_err());
        assert!(make_shape(&ShapeSpec::Box { half: [0.2, -0.1, 0.2] }, 32).is_err());
        let tall = ShapeSpec::Tabloid { width: 0.5, depth: 0.5, leg_height: 0.95, top_thickness: 0.1 };
        assert!(tall.validate().is_err());
        assert_eq!("chairoid".parse::<ShapeKind>().unwrap(), ShapeKind::Chairoid);
        assert!("chair".parse::<ShapeKind>().is_err());
    }
}
