use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use super::{center_coord, VoxelGrid};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Triangle mesh in the object frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::DegenerateMesh("mesh has no triangles".into()));
        }
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::DegenerateMesh(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateMesh("non-finite vertex".into()));
        }
        Ok(())
    }

    /// Closed axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> Self {
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { min.x } else { max.x },
                    if i & 2 == 0 { min.y } else { max.y },
                    if i & 4 == 0 { min.z } else { max.z },
                )
            })
            .collect();
        let quads = [
            [0, 2, 3, 1], // z = min
            [4, 5, 7, 6], // z = max
            [0, 1, 5, 4], // y = min
            [2, 6, 7, 3], // y = max
            [0, 4, 6, 2], // x = min
            [1, 3, 7, 5], // x = max
        ];
        let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        Self { vertices, triangles }
    }

    /// Latitude/longitude tessellation of a sphere.
    pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> Self {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
        for s in 1..stacks {
            let phi = PI * s as f64 / stacks as f64;
            for l in 0..slices {
                let th = 2.0 * PI * l as f64 / slices as f64;
                vertices.push(center + radius * Vec3::new(phi.sin() * th.cos(), phi.cos(), phi.sin() * th.sin()));
            }
        }
        vertices.push(center - Vec3::new(0.0, radius, 0.0));
        let south = vertices.len() - 1;
        let ring = |s: usize, l: usize| 1 + (s - 1) * slices + (l % slices);
        let mut triangles = Vec::new();
        for l in 0..slices {
            triangles.push([0, ring(1, l + 1), ring(1, l)]);
            triangles.push([south, ring(stacks - 1, l), ring(stacks - 1, l + 1)]);
        }
        for s in 1..stacks - 1 {
            for l in 0..slices {
                let (a, b, c, d) = (ring(s, l), ring(s, l + 1), ring(s + 1, l), ring(s + 1, l + 1));
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Self { vertices, triangles }
    }
}

fn parse_index(tok: &str, n_vertices: usize, line: usize) -> Result<usize> {
    let first = tok.split('/').next().unwrap_or("");
    let raw: i64 = first.parse().map_err(|_| Error::Parse { line, message: format!("bad face index {tok:?}") })?;
    let idx = match raw {
        0 => None,
        r if r > 0 => Some(r as usize - 1),
        r => (n_vertices as i64 + r).try_into().ok(),
    };
    match idx {
        Some(i) if i < n_vertices => Ok(i),
        _ => {
            Err(Error::Parse { line, message: format!("face index {raw} out of range ({n_vertices} vertices so far)") })
        }
    }
}

/// Parses the `v` and `f` records of an ASCII OBJ file. Polygons are
/// fan-triangulated; negative indices count back from the latest vertex.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let xyz: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { line, message: format!("bad vertex: {e}") })?;
                if xyz.len() != 3 {
                    return Err(Error::Parse { line, message: "vertex needs three coordinates".into() });
                }
                mesh.vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks.map(|t| parse_index(t, mesh.vertices.len(), line)).collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse { line, message: "face needs at least three vertices".into() });
                }
                for w in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[w], idx[w + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}

/// Ray-origin offsets that keep parity rays off shared triangle edges.
const JITTER_Y: f64 = 1e-7;
const JITTER_Z: f64 = 0.618_034e-7;

/// x-coordinates where the line `(·, y, z)` pierces the mesh, sorted.
fn row_crossings(mesh: &Mesh, y: f64, z: f64) -> Vec<f64> {
    let mut xs = Vec::new();
    for t in &mesh.triangles {
        let (a, b, c) = (&mesh.vertices[t[0]], &mesh.vertices[t[1]], &mesh.vertices[t[2]]);
        // 2D barycentric coordinates of (y, z) in the yz-projection.
        let det = (b.y - a.y) * (c.z - a.z) - (c.y - a.y) * (b.z - a.z);
        if det.abs() < 1e-18 {
            continue;
        }
        let w1 = ((y - a.y) * (c.z - a.z) - (c.y - a.y) * (z - a.z)) / det;
        let w2 = ((b.y - a.y) * (z - a.z) - (y - a.y) * (b.z - a.z)) / det;
        let w0 = 1.0 - w1 - w2;
        if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
            xs.push(w0 * a.x + w1 * b.x + w2 * c.x);
        }
    }
    xs.sort_by(f64::total_cmp);
    xs
}

/// Solid voxelization by ray parity: a voxel is occupied iff a ray from its
/// center along +X crosses the surface an odd number of times.
pub fn voxelize_solid(mesh: &Mesh, dim: usize) -> Result<VoxelGrid> {
    mesh.validate()?;
    if mesh.vertices.iter().any(|v| v.iter().any(|c| c.abs() > 0.5 + 1e-9)) {
        return Err(Error::DegenerateMesh("mesh extends outside the unit cube".into()));
    }
    let mut values = VoxelGrid::zeros(dim)?.into_values();
    values.par_chunks_mut(dim).enumerate().for_each(|(row, out)| {
        let (j, k) = (row % dim, row / dim);
        let y = center_coord(j, dim) + JITTER_Y;
        let z = center_coord(k, dim) + JITTER_Z;
        let xs = row_crossings(mesh, y, z);
        for (i, o) in out.iter_mut().enumerate() {
            let cx = center_coord(i, dim);
            let ahead = xs.len() - xs.partition_point(|&x| x <= cx);
            *o = (ahead % 2) as f64;
        }
    });
    Ok(VoxelGrid::from_values_unchecked(dim, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE_OBJ: &str = "\
# unit cube
v -0.5 -0.5 -0.5
v  0.5 -0.5 -0.5
v -0.5  0.5 -0.5
v  0.5  0.5 -0.5
v -0.5 -0.5  0.5
v  0.5 -0.5  0.5
v -0.5  0.5  0.5
v  0.5  0.5  0.5
f 1 3 4
f 1 4 2
f 5 6 8
f 5 8 7
f 1 2 6
f 1 6 5
f 3 7 8
f 3 8 4
f 1 5 7
f 1 7 3
f 2 4 8
f 2 8 6
";

    #[test]
    fn parses_cube() {
        let m = parse_obj(CUBE_OBJ).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (8, 12));
    }

    #[test]
    fn quads_fan_triangulate() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices_are_relative() {
        // Per the OBJ convention, -1 is the most recently defined vertex.
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\nv 0 0 1\nf -1 -3 -4\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [3, 1, 0]]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_obj("v 0 0 0\nv 1 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 9\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn central_box_voxelizes_to_16_cubed() {
        let m = Mesh::cuboid(Vec3::repeat(-0.25), Vec3::repeat(0.25));
        let g = voxelize_solid(&m, 32).unwrap();
        // analytic containment: center inside iff 8 ≤ idx ≤ 23 on every axis
        for k in 0..32 {
            for j in 0..32 {
                for i in 0..32 {
                    let inside = [i, j, k].iter().all(|&c| (8..24).contains(&c));
                    assert_eq!(g.get(i, j, k), inside as u8 as f64, "({i},{j},{k})");
                }
            }
        }
        assert_eq!(g.occupied_count(0.5), 16 * 16 * 16);
    }

    #[test]
    fn full_cube_fills_grid() {
        let g = voxelize_solid(&parse_obj(CUBE_OBJ).unwrap(), 16).unwrap();
        assert_eq!(g.occupied_count(0.5), 16 * 16 * 16);
    }

    #[test]
    fn sphere_volume_close_to_analytic() {
        let m = Mesh::uv_sphere(Vec3::zeros(), 0.4, 64, 128);
        let g = voxelize_solid(&m, 32).unwrap();
        let expect = 4.0 / 3.0 * PI * 0.4f64.powi(3) * 32f64.powi(3);
        let got = g.occupied_count(0.5) as f64;
        assert!((got - expect).abs() / expect < 0.02, "{got} vs {expect}");
    }

    #[test]
    fn degenerate_meshes_rejected() {
        assert!(voxelize_solid(&Mesh::default(), 8).is_err());
        let big = Mesh::cuboid(Vec3::repeat(-0.7), Vec3::repeat(0.7));
        assert!(voxelize_solid(&big, 8).is_err());
        let bad = Mesh { vertices: vec![Vec3::zeros()], triangles: vec![[0, 1, 2]] };
        assert!(voxelize_solid(&bad, 8).is_err());
    }
}
