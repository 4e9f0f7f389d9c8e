//! Zero-isosurface extraction with marching cubes over voxel centers.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::grid::{signed_distance_of, VoxelGrid};
use crate::mc_tables::TRIANGLE_TABLE;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Indices in range, finite coordinates, normals sized to vertices.
    pub fn is_valid(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.triangles.iter().all(|t| t.iter().all(|&i| i < n))
            && self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self
                .normals
                .as_ref()
                .is_none_or(|ns| ns.len() == self.vertices.len())
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                (b - a).cross(&(c - a)).norm() * 0.5
            })
            .sum()
    }

    /// Area-weighted vertex normals. Returns the number of vertices not used
    /// by any non-degenerate triangle; those get a zero normal.
    pub fn compute_vertex_normals(&mut self) -> usize {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            // cross product length is twice the area, which is the weighting we want
            let n = (b - a).cross(&(c - a));
            for &i in &self.triangles[t] {
                acc[i as usize] += n;
            }
        }
        let mut isolated = 0;
        let normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 && len.is_finite() {
                    n / len
                } else {
                    isolated += 1;
                    Vector3::zeros()
                }
            })
            .collect();
        self.normals = Some(normals);
        isolated
    }
}

/// Consuming variant of [`TriangleMesh::compute_vertex_normals`].
pub fn vertex_normals(mut mesh: TriangleMesh) -> (TriangleMesh, usize) {
    let isolated = mesh.compute_vertex_normals();
    (mesh, isolated)
}

/// Corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of each table edge, lower corner first.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (3, 2),
    (0, 3),
    (4, 5),
    (5, 6),
    (7, 6),
    (4, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Extracts the `iso` level set of the signed distance field.
///
/// Cells with any unobserved corner are skipped. A corner counts as inside
/// when its value is below `iso`, or equal to it on an occupied voxel.
pub fn extract_mesh(grid: &VoxelGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims();
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let vs = grid.voxel_size();
    let corner_linear: Vec<usize> = CORNERS
        .iter()
        .map(|&[x, y, z]| x + nx * (y + ny * z))
        .collect();
    // lattice edge (lower voxel, axis) -> vertex index
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();

    for iz in 0..nz - 1 {
        for iy in 0..ny - 1 {
            for ix in 0..nx - 1 {
                let base = ix + nx * (iy + ny * iz);
                let mut values = [0.0f64; 8];
                let mut case = 0usize;
                let mut observed = true;
                for c in 0..8 {
                    let v = grid.voxel_at(base + corner_linear[c]);
                    match signed_distance_of(&v, vs) {
                        Some(d) => {
                            values[c] = d;
                            if d < iso || (d == iso && v.is_occupied()) {
                                case |= 1 << c;
                            }
                        }
                        None => {
                            observed = false;
                            break;
                        }
                    }
                }
                if !observed || case == 0 || case == 255 {
                    continue;
                }

                let row = &TRIANGLE_TABLE[case];
                let mut tri = [0u32; 3];
                for (k, &e) in row.iter().take_while(|&&e| e >= 0).enumerate() {
                    let (a, b) = EDGES[e as usize];
                    let axis = (0..3).find(|&d| CORNERS[a][d] != CORNERS[b][d]).unwrap() as u8;
                    let key = (base + corner_linear[a], axis);
                    let next = mesh.vertices.len() as u32;
                    let vid = *edge_vertex.entry(key).or_insert_with(|| {
                        let pa = grid.voxel_center(add(&[ix, iy, iz], &CORNERS[a]));
                        let pb = grid.voxel_center(add(&[ix, iy, iz], &CORNERS[b]));
                        let t = crossing(values[a], values[b], iso);
                        mesh.vertices.push(pa + (pb - pa) * t);
                        next
                    });
                    tri[k % 3] = vid;
                    if k % 3 == 2 {
                        mesh.triangles.push(tri);
                    }
                }
            }
        }
    }
    mesh
}

fn add(a: &[usize; 3], b: &[usize; 3]) -> [usize; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Interpolation parameter of the iso crossing from `va` to `vb`; snaps to a
/// corner that sits exactly on the level.
fn crossing(va: f64, vb: f64, iso: f64) -> f64 {
    if va == iso {
        0.0
    } else if vb == iso {
        1.0
    } else {
        ((iso - va) / (vb - va)).clamp(0.0, 1.0)
    }
}
