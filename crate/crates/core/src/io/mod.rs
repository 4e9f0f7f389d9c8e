//! File formats: scans (PCD, PLY, XYZ), TUM trajectories, meshes (PLY, OBJ),
//! grid snapshots and voxel exports.

pub mod export;
pub mod pcd;
pub mod ply;
pub mod snapshot;
pub mod trajectory;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::mesher::TriangleMesh;

pub use export::{ExportSelection, CSV_HEADER};
pub use snapshot::SnapshotMeta;
pub use trajectory::{PoseRecord, Trajectory};

/// Points read from a scan file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanData {
    pub points: Vec<Point3<f64>>,
    /// Per-point capture time normalized to `[0, 1]`, when the file has one.
    pub times: Option<Vec<f64>>,
    /// Rows dropped for non-finite coordinates.
    pub dropped: usize,
}

impl ScanData {
    pub(crate) fn from_raw(raw: Vec<([f64; 3], Option<f64>)>) -> ScanData {
        let has_time = !raw.is_empty() && raw.iter().all(|(_, t)| t.is_some());
        let mut points = Vec::with_capacity(raw.len());
        let mut times = Vec::new();
        let mut dropped = 0;
        for (p, t) in raw {
            if p.iter().all(|c| c.is_finite()) && t.is_none_or(f64::is_finite) {
                points.push(Point3::from(p));
                if has_time {
                    times.push(t.unwrap());
                }
            } else {
                dropped += 1;
            }
        }
        let times = has_time.then(|| {
            let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            times
                .iter()
                .map(|&t| if hi > lo { (t - lo) / (hi - lo) } else { 1.0 })
                .collect()
        });
        ScanData { points, times, dropped }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    PlyBinary,
    PlyAscii,
    Obj,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Reads a point cloud, choosing the parser from the file extension.
pub fn read_scan(path: &Path) -> Result<ScanData> {
    let ext = extension(path);
    let name = display(path);
    match ext.as_str() {
        "pcd" => pcd::parse(&read_bytes(path)?, &name),
        "ply" => {
            let d = ply::parse(&read_bytes(path)?, &name)?;
            Ok(ScanData::from_raw(d.vertices.into_iter().map(|v| (v, None)).collect()))
        }
        "xyz" | "txt" => {
            let bytes = read_bytes(path)?;
            let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format(format!("{name}: not UTF-8 text")))?;
            parse_xyz(text, &name)
        }
        _ => Err(Error::Format(format!("{name}: unknown point cloud extension {ext:?}"))),
    }
}

/// Whitespace-separated `x y z` rows; extra columns are ignored.
pub fn parse_xyz(text: &str, name: &str) -> Result<ScanData> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut p = [0.0; 3];
        let mut tok = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
        for c in &mut p {
            let t = tok
                .next()
                .ok_or_else(|| Error::Format(format!("{name}:{}: expected 3 coordinates", i + 1)))?;
            *c = match t.to_ascii_lowercase().as_str() {
                "nan" | "-nan" => f64::NAN,
                _ => t
                    .parse()
                    .map_err(|_| Error::Format(format!("{name}:{}: bad coordinate {t:?}", i + 1)))?,
            };
        }
        raw.push((p, None));
    }
    Ok(ScanData::from_raw(raw))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes a point cloud as PCD (`.pcd`), PLY (`.ply`) or XYZ text.
pub fn write_scan(path: &Path, points: &[Point3<f64>], times: Option<&[f64]>, binary: bool) -> Result<()> {
    let mut w = create(path)?;
    let res = match extension(path).as_str() {
        "pcd" => pcd::write(&mut w, points, times, binary),
        "ply" => ply::write_points(&mut w, points, binary),
        _ => points.iter().try_for_each(|p| writeln!(w, "{} {} {}", p.x, p.y, p.z)),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format(format!("{}: not UTF-8 text", display(path))))?;
    trajectory::parse(text, &display(path))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    trajectory::write(&mut w, traj)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let mut w = create(path)?;
    let res = match format {
        MeshFormat::PlyBinary => ply::write_mesh(&mut w, mesh, true),
        MeshFormat::PlyAscii => ply::write_mesh(&mut w, mesh, false),
        MeshFormat::Obj => write_obj(&mut w, mesh),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_obj<W: Write>(w: &mut W, mesh: &TriangleMesh) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    if let Some(ns) = &mesh.normals {
        for n in ns {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z)?;
        }
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        if mesh.normals.is_some() {
            writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}")?;
        } else {
            writeln!(w, "f {a} {b} {c}")?;
        }
    }
    Ok(())
}

fn parse_obj(text: &str, name: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |m: &str| Error::Format(format!("{name}:{}: {m}", i + 1));
        let mut tok = line.split_whitespace();
        let floats = |tok: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            tok.map(|t| t.parse::<f64>().map_err(|_| err("bad number"))).collect()
        };
        match tok.next() {
            Some("v") => {
                let v = floats(tok)?;
                if v.len() < 3 {
                    return Err(err("vertex needs 3 coordinates"));
                }
                mesh.vertices.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("vn") => {
                let v = floats(tok)?;
                if v.len() < 3 {
                    return Err(err("normal needs 3 components"));
                }
                normals.push(Vector3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or_default();
                        match first.parse::<i64>() {
                            Ok(k) if k >= 1 => Ok((k - 1) as u32),
                            Ok(k) if k < 0 => Ok((mesh.vertices.len() as i64 + k) as u32),
                            _ => Err(err("bad face index")),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if !normals.is_empty() && normals.len() == mesh.vertices.len() {
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

/// Reads a triangle mesh from PLY or OBJ; polygons are fanned into triangles.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let name = display(path);
    let mesh = match extension(path).as_str() {
        "ply" => {
            let d = ply::parse(&read_bytes(path)?, &name)?;
            let mut triangles = Vec::new();
            for f in &d.faces {
                for k in 1..f.len().saturating_sub(1) {
                    triangles.push([f[0], f[k], f[k + 1]]);
                }
            }
            TriangleMesh {
                vertices: d.vertices.into_iter().map(Point3::from).collect(),
                triangles,
                normals: d.normals.map(|ns| ns.into_iter().map(Vector3::from).collect()),
            }
        }
        "obj" => {
            let bytes = read_bytes(path)?;
            let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format(format!("{name}: not UTF-8 text")))?;
            parse_obj(text, &name)?
        }
        ext => return Err(Error::Format(format!("{name}: unknown mesh extension {ext:?}"))),
    };
    if !mesh.is_valid() {
        return Err(Error::Format(format!("{name}: face index out of range or non-finite vertex")));
    }
    Ok(mesh)
}

pub fn save_grid(grid: &VoxelGrid, meta: SnapshotMeta, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    snapshot::write(&mut w, grid, meta).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<(VoxelGrid, SnapshotMeta)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    snapshot::read_sized(&mut BufReader::new(f), Some(len)).map_err(|e| match e {
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", display(path))),
        other => other,
    })
}

pub fn export_grid_csv(grid: &VoxelGrid, path: &Path, include: ExportSelection) -> Result<usize> {
    let mut w = create(path)?;
    let rows = export::write_csv(&mut w, grid, include).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

/// Voxel centers as a binary PCD cloud; returns the point count.
pub fn export_grid_pcd(grid: &VoxelGrid, path: &Path, include: ExportSelection) -> Result<usize> {
    let pts = export::voxel_centers(grid, include);
    write_scan(path, &pts, None, true)?;
    Ok(pts.len())
}
