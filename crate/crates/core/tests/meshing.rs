use std::collections::HashSet;

use dbtsdf::grid::{Sign, Voxel, VoxelGrid};
use dbtsdf::integrator::{IntegrationParams, Integrator};
use dbtsdf::kernels::{KernelBank, KernelParams};
use dbtsdf::mesher::{extract_mesh, TriangleMesh};
use dbtsdf::motion::{Pose, ScanFrame};
use nalgebra::Point3;

fn euler(mesh: &TriangleMesh) -> i64 {
    let mut edges = HashSet::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    mesh.vertices.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64
}

fn is_closed(mesh: &TriangleMesh) -> bool {
    let mut count = std::collections::HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    count.values().all(|&c| c == 2)
}

#[test]
fn single_occupied_voxel_is_a_closed_sphere() {
    let mut g = VoxelGrid::new([5, 5, 5], 0.1, Point3::origin()).unwrap();
    for i in 0..g.len() {
        g.set_voxel(i, Voxel { mask: 1, sign: Sign::Free, hits: 0 });
    }
    let c = g.linear_index([2, 2, 2]);
    g.set_voxel(c, Voxel { mask: 0, sign: Sign::Occupied, hits: 2 });
    let mesh = extract_mesh(&g, 0.0);
    assert!(!mesh.is_empty());
    assert!(is_closed(&mesh));
    assert_eq!(euler(&mesh), 2);
    // every crossing snaps to the zero corner, so the shell collapses onto
    // the occupied center
    let center = g.voxel_center([2, 2, 2]);
    assert!(mesh.vertices.iter().all(|v| (v - center).norm() < 1e-12));
}

#[test]
fn fused_blob_is_closed() {
    let g = VoxelGrid::new([24, 24, 24], 0.1, Point3::origin()).unwrap();
    let bank = KernelBank::new(KernelParams { size: 11, shadow_radius: 3, ..Default::default() }).unwrap();
    let params = IntegrationParams { threshold: 1, ..Default::default() };
    Integrator::new(&g, &bank, params, 1)
        .unwrap()
        .integrate_point(&Point3::new(1.2, 1.2, 1.2), &Point3::new(0.2, 1.2, 1.2));
    let mesh = extract_mesh(&g, 0.0);
    assert!(is_closed(&mesh));
    assert_eq!(euler(&mesh), 2);
}

fn planar_grid() -> (VoxelGrid, f64) {
    let vs = 0.1;
    let g = VoxelGrid::new([40, 40, 30], vs, Point3::origin()).unwrap();
    let bank = KernelBank::new(KernelParams { size: 11, shadow_radius: 2, ..Default::default() }).unwrap();
    let integ = Integrator::new(&g, &bank, IntegrationParams::default(), 1).unwrap();
    let plane_z = 1.23;
    let sensor = Point3::new(2.0, 2.0, 2.8);
    let mut pts = Vec::new();
    let mut x = 0.8;
    while x < 3.2 {
        let mut y = 0.8;
        while y < 3.2 {
            pts.push(Point3::new(x, y, plane_z) - sensor.coords);
            y += 0.02;
        }
        x += 0.02;
    }
    let scan = ScanFrame::new(pts, Pose::translation(sensor.x, sensor.y, sensor.z));
    let stats = integ.integrate_frame(&scan).unwrap();
    assert_eq!(stats.points_discarded, 0);
    (g, plane_z)
}

#[test]
fn planar_scan_meshes_near_the_plane() {
    let (g, plane_z) = planar_grid();
    let mesh = extract_mesh(&g, 0.0);
    assert!(mesh.is_valid());
    let half = 0.5 * g.voxel_size();
    // away from the patch rim, where distances are to the nearest return
    // rather than to the plane
    let inner: Vec<_> = mesh
        .vertices
        .iter()
        .filter(|v| (1.2..2.8).contains(&v.x) && (1.2..2.8).contains(&v.y))
        .collect();
    assert!(inner.iter().all(|v| v.z <= plane_z + half + 1e-9));
    let top: Vec<_> = inner.into_iter().filter(|v| v.z > plane_z - half - 1e-9).collect();
    assert!(top.len() > 100);
    assert!(top.iter().all(|v| (v.z - plane_z).abs() <= half + 1e-9));
}

#[test]
fn extraction_is_deterministic() {
    let (g, _) = planar_grid();
    assert_eq!(extract_mesh(&g, 0.0), extract_mesh(&g, 0.0));
    let (h, _) = planar_grid();
    assert_eq!(extract_mesh(&g, 0.0), extract_mesh(&h, 0.0));
}
