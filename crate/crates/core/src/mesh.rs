//! Surface extraction from the fused occupancy field by marching cubes at
//! level 0.5, and ASCII PLY export.

use std::fmt::Write as _;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mc_tables::{CORNERS, EDGES, EDGE_TABLE, TRI_TABLE};
use crate::submaps::SubmapAtlas;

pub const ISO_LEVEL: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

/// Regular lattice of `dims` points starting at `origin` with spacing `step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub origin: Vec3,
    pub step: f64,
    pub dims: [usize; 3],
}

impl Lattice {
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.step
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Marching cubes over lattice samples. `None` marks unobserved samples;
/// cubes touching one are skipped. Vertices on shared edges are merged.
pub fn marching_cubes(lattice: &Lattice, values: &[Option<f64>], iso: f64) -> Mesh {
    let [nx, ny, nz] = lattice.dims;
    let mut mesh = Mesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    // edge key: (lower lattice index, axis)
    let mut edge_vertex: FxHashMap<(usize, u8), u32> = FxHashMap::default();
    let mut corner = [0.0; 8];
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            'cube: for i in 0..nx - 1 {
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let Some(v) = values[lattice.index(i + off[0], j + off[1], k + off[2])] else {
                        continue 'cube;
                    };
                    corner[c] = v;
                    if v > iso {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, pair) in EDGES.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let (a, b) = (CORNERS[pair[0]], CORNERS[pair[1]]);
                    let axis = (0..3).find(|&d| a[d] != b[d]).expect("edge spans one axis") as u8;
                    let lo = lattice.index(i + a[0].min(b[0]), j + a[1].min(b[1]), k + a[2].min(b[2]));
                    ids[e] = *edge_vertex.entry((lo, axis)).or_insert_with(|| {
                        let pa = lattice.point(i + a[0], j + a[1], k + a[2]);
                        let pb = lattice.point(i + b[0], j + b[1], k + b[2]);
                        let (va, vb) = (corner[pair[0]], corner[pair[1]]);
                        let t = if (vb - va).abs() > 1e-15 { (iso - va) / (vb - va) } else { 0.5 };
                        mesh.vertices.push(pa + (pb - pa) * t.clamp(0.0, 1.0));
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    mesh.triangles.push([ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]]);
                }
            }
        }
    }
    mesh
}

/// World-frame box enclosing every submap's allocated leaves.
pub fn atlas_bounds(atlas: &SubmapAtlas) -> Option<(Vec3, Vec3)> {
    let mut out: Option<(Vec3, Vec3)> = None;
    for s in &atlas.submaps {
        let Some((lo, hi)) = s.model.grid.allocated_bounds() else {
            continue;
        };
        for c in 0..8 {
            let p = Vec3::new(
                if c & 1 == 0 { lo[0] } else { hi[0] },
                if c & 2 == 0 { lo[1] } else { hi[1] },
                if c & 4 == 0 { lo[2] } else { hi[2] },
            );
            let w = s.anchor_pose.transform_point(&p);
            out = Some(match out {
                None => (w, w),
                Some((a, b)) => (a.inf(&w), b.sup(&w)),
            });
        }
    }
    out
}

/// Lattice cells along the longest side that give one sample per leaf.
pub fn leaf_resolution(atlas: &SubmapAtlas) -> Option<usize> {
    let (lo, hi) = atlas_bounds(atlas)?;
    Some(((hi - lo).max() / atlas.config.leaf_size()).ceil().max(2.0) as usize)
}

/// Meshes the fused map with `resolution` lattice cells along the longest
/// side of its bounds (one per leaf when `None`). Only cubes whose corners
/// all lie in allocated leaves are polygonized, so a lattice much coarser
/// than the leaf size finds little or no surface in the thin band of
/// allocated space. Vertex colors come from the color decoder of the same
/// submap that supplies the occupancy.
pub fn extract_mesh(atlas: &SubmapAtlas, resolution: Option<usize>) -> Result<Mesh> {
    let (lo, hi) = atlas_bounds(atlas).ok_or(Error::EmptyMap)?;
    let resolution = resolution.or(leaf_resolution(atlas)).unwrap_or(2);
    if resolution < 2 {
        return Err(Error::Config("mesh resolution must be at least 2".into()));
    }
    let extent = hi - lo;
    let step = extent.max() / resolution as f64;
    let dims = [0, 1, 2].map(|d| (extent[d] / step).ceil() as usize + 1);
    let lattice = Lattice {
        origin: lo,
        step,
        dims,
    };
    let values: Vec<Option<f64>> = (0..dims[2])
        .into_par_iter()
        .flat_map_iter(|k| {
            let lattice = &lattice;
            (0..dims[1]).flat_map(move |j| {
                (0..dims[0]).map(move |i| atlas.query_fused(&lattice.point(i, j, k)).map(|q| q.0))
            })
        })
        .collect();
    let mut mesh = marching_cubes(&lattice, &values, ISO_LEVEL);
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyMap);
    }
    mesh.colors = mesh
        .vertices
        .par_iter()
        .map(|v| atlas.query_fused(v).map_or([0.5; 3], |q| q.1))
        .collect();
    Ok(mesh)
}

pub fn to_ply(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ply\nformat ascii 1.0");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    let _ = writeln!(s, "property float x\nproperty float y\nproperty float z");
    let _ = writeln!(s, "property uchar red\nproperty uchar green\nproperty uchar blue");
    let _ = writeln!(s, "element face {}", mesh.triangles.len());
    let _ = writeln!(s, "property list uchar int vertex_indices\nend_header");
    for (i, v) in mesh.vertices.iter().enumerate() {
        let c = mesh.colors.get(i).copied().unwrap_or([0.5; 3]);
        let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
        let _ = writeln!(s, "{:.6} {:.6} {:.6} {} {} {}", v[0], v[1], v[2], q(c[0]), q(c[1]), q(c[2]));
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn sphere_field(n: usize, r: f64) -> (Lattice, Vec<Option<f64>>) {
        let lattice = Lattice {
            origin: Vec3::repeat(-1.5),
            step: 3.0 / (n - 1) as f64,
            dims: [n; 3],
        };
        let mut v = vec![None; lattice.len()];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = lattice.point(i, j, k);
                    // occupancy above 0.5 inside the sphere
                    v[lattice.index(i, j, k)] = Some(0.5 + 0.5 * (r - p.norm()).tanh());
                }
            }
        }
        (lattice, v)
    }

    #[test]
    fn every_case_emits_well_formed_triangles() {
        // a single cube with every corner pattern
        let lattice = Lattice {
            origin: Vec3::zeros(),
            step: 1.0,
            dims: [2, 2, 2],
        };
        for case in 0..256usize {
            let mut v = vec![None; 8];
            for (c, off) in CORNERS.iter().enumerate() {
                v[lattice.index(off[0], off[1], off[2])] = Some(if case >> c & 1 == 1 { 1.0 } else { 0.0 });
            }
            let m = marching_cubes(&lattice, &v, 0.5);
            let expected = TRI_TABLE[case].iter().take_while(|x| **x >= 0).count() / 3;
            assert_eq!(m.triangles.len(), expected, "case {case}");
            for t in &m.triangles {
                assert!(t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
            }
            // complementary cases cut the same edges
            assert_eq!(EDGE_TABLE[case], EDGE_TABLE[255 - case]);
        }
    }

    #[test]
    fn sphere_mesh_is_closed_and_accurate() {
        let (lattice, v) = sphere_field(40, 1.0);
        let m = marching_cubes(&lattice, &v, 0.5);
        assert!(!m.triangles.is_empty());
        for p in &m.vertices {
            assert!((p.norm() - 1.0).abs() < lattice.step, "{}", p.norm());
        }
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &m.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2), "mesh has open edges");
        // Euler characteristic of a sphere
        let chi = m.vertices.len() as i64 - edges.len() as i64 + m.triangles.len() as i64;
        assert_eq!(chi, 2);
    }

    #[test]
    fn doubling_resolution_quadruples_vertices() {
        let a = marching_cubes(&sphere_field(40, 1.0).0, &sphere_field(40, 1.0).1, 0.5);
        let b = marching_cubes(&sphere_field(80, 1.0).0, &sphere_field(80, 1.0).1, 0.5);
        let ratio = b.vertices.len() as f64 / a.vertices.len() as f64;
        assert!((3.4..4.6).contains(&ratio), "{ratio}");
    }

    #[test]
    fn unobserved_cubes_are_skipped() {
        let (lattice, mut v) = sphere_field(20, 1.0);
        v.iter_mut().for_each(|x| *x = None);
        assert!(marching_cubes(&lattice, &v, 0.5).triangles.is_empty());
    }

    #[test]
    fn ply_header_counts_match() {
        let (lattice, v) = sphere_field(10, 1.0);
        let m = marching_cubes(&lattice, &v, 0.5);
        let ply = to_ply(&m);
        assert!(ply.contains(&format!("element vertex {}", m.vertices.len())));
        assert!(ply.contains(&format!("element face {}", m.triangles.len())));
        let body = ply.split("end_header\n").nth(1).unwrap();
        assert_eq!(body.lines().count(), m.vertices.len() + m.triangles.len());
    }

    #[test]
    fn empty_atlas_has_no_mesh() {
        let atlas = SubmapAtlas::new(Default::default(), 0).unwrap();
        assert!(matches!(extract_mesh(&atlas, Some(16)), Err(Error::EmptyMap)));
    }
}
