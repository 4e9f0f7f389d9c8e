use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{Isometry3, Point3, Vector3};
use serde::Serialize;

use dbtsdf::io::{self, ExportSelection, MeshFormat, SnapshotMeta};
use dbtsdf::metrics::{evaluate, sample_mesh};
use dbtsdf::sim::{BoxRoom, SpinningLidar};
use dbtsdf::{extract_mesh, Error, Integrator, KernelBank, MetricsReport, Pose, Result, ScanFrame, VoxelGrid};

use crate::config::{ConfigFile, RunConfig, RESOLVED_CONFIG_NAME};

/// Scans further than this from the trajectory's time span are skipped.
pub const MAX_POSE_GAP_S: f64 = 0.05;
pub const SNAPSHOT_NAME: &str = "map.dbtsdf";
pub const STATS_NAME: &str = "stats.csv";
const SCAN_EXTENSIONS: [&str; 4] = ["pcd", "ply", "xyz", "txt"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// A scan file and the timestamp parsed from its name.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanEntry {
    pub timestamp: f64,
    pub path: PathBuf,
}

/// Scan files in `dir` in timestamp order; names that are not a number are
/// skipped with a warning.
pub fn list_scans(dir: &Path) -> Result<Vec<ScanEntry>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        if !SCAN_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        match path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<f64>().ok()) {
            Some(t) if t.is_finite() => out.push(ScanEntry { timestamp: t, path }),
            _ => warn!("skipping {}: file name is not a timestamp", path.display()),
        }
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then_with(|| a.path.cmp(&b.path)));
    Ok(out)
}

/// Reads scans and attaches trajectory poses; the previous scan's pose
/// becomes the start-of-sweep pose.
pub fn load_frames(scans_dir: &Path, trajectory: &Path) -> Result<(Vec<ScanFrame>, usize)> {
    let traj = io::read_trajectory(trajectory)?;
    if traj.is_empty() {
        return Err(Error::Format(format!("{}: trajectory has no poses", trajectory.display())));
    }
    let (t0, t1) = (traj.records[0].timestamp, traj.records[traj.len() - 1].timestamp);
    let mut frames = Vec::new();
    let mut skipped = 0;
    let mut prev: Option<Pose> = None;
    for entry in list_scans(scans_dir)? {
        if entry.timestamp < t0 - MAX_POSE_GAP_S || entry.timestamp > t1 + MAX_POSE_GAP_S {
            warn!(
                "skipping {}: no pose within {MAX_POSE_GAP_S} s of t = {}",
                entry.path.display(),
                entry.timestamp
            );
            skipped += 1;
            continue;
        }
        let pose = traj.lookup_pose(entry.timestamp);
        let data = io::read_scan(&entry.path)?;
        if data.dropped > 0 {
            warn!("{}: dropped {} non-finite rows", entry.path.display(), data.dropped);
        }
        frames.push(ScanFrame {
            points: data.points,
            times: data.times,
            pose,
            prev_pose: prev.or(Some(pose)),
        });
        prev = Some(pose);
    }
    Ok((frames, skipped))
}

fn build_grid(rc: &RunConfig) -> Result<VoxelGrid> {
    VoxelGrid::new(rc.dims, rc.voxel_size, Point3::from(rc.origin))
}

fn write_resolved_config(rc: &RunConfig) -> Result<PathBuf> {
    let path = rc.output.join(RESOLVED_CONFIG_NAME);
    std::fs::write(&path, rc.to_toml()).map_err(io_err(&path))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct FuseSummary {
    pub frames: usize,
    pub skipped_frames: usize,
    pub points: usize,
    pub discarded: usize,
    pub voxels_written: usize,
    pub mean_frame_ms: f64,
    pub memory_bytes: u64,
    pub snapshot: PathBuf,
    pub stats: PathBuf,
    pub config: PathBuf,
}

/// Fuses every scan of the configured sequence into one grid.
pub fn fuse(rc: &RunConfig) -> Result<FuseSummary> {
    let (scans, traj) = rc.validate_inputs()?;
    let bank = KernelBank::new(rc.kernel)?;
    let mut grid = build_grid(rc)?;
    let (frames, skipped) = load_frames(scans, traj)?;
    std::fs::create_dir_all(&rc.output).map_err(io_err(&rc.output))?;
    let config = write_resolved_config(rc)?;

    let integ = Integrator::exclusive(&mut grid, &bank, rc.integration, rc.threads)?;
    let stats_path = rc.output.join(STATS_NAME);
    let mut stats = create(&stats_path)?;
    writeln!(stats, "frame,points,discarded,ms").map_err(io_err(&stats_path))?;
    let (mut points, mut discarded, mut written, mut total_ms) = (0, 0, 0, 0.0);
    for (i, frame) in frames.iter().enumerate() {
        let s = integ.integrate_frame(frame)?;
        writeln!(stats, "{i},{},{},{:.3}", s.points_in, s.points_discarded, s.elapsed_ms)
            .map_err(io_err(&stats_path))?;
        info!("frame {i}: {} points, {} discarded, {:.1} ms", s.points_in, s.points_discarded, s.elapsed_ms);
        points += s.points_in;
        discarded += s.points_discarded;
        written += s.voxels_written;
        total_ms += s.elapsed_ms;
    }
    stats.flush().map_err(io_err(&stats_path))?;
    drop(integ);

    let snapshot = rc.output.join(SNAPSHOT_NAME);
    let meta = SnapshotMeta {
        h_max: rc.integration.h_max,
        threshold: rc.integration.threshold,
    };
    io::save_grid(&grid, meta, &snapshot)?;
    Ok(FuseSummary {
        frames: frames.len(),
        skipped_frames: skipped,
        points,
        discarded,
        voxels_written: written,
        mean_frame_ms: if frames.is_empty() { 0.0 } else { total_ms / frames.len() as f64 },
        memory_bytes: grid.memory_bytes(),
        snapshot,
        stats: stats_path,
        config,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub isolated_vertices: usize,
    pub output: PathBuf,
}

pub fn mesh_format_for(path: &Path) -> Result<MeshFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => Ok(MeshFormat::PlyBinary),
        Some("obj") => Ok(MeshFormat::Obj),
        _ => Err(Error::Format(format!(
            "{}: cannot infer mesh format, use .ply or .obj",
            path.display()
        ))),
    }
}

pub fn mesh(snapshot: &Path, out: &Path, format: Option<MeshFormat>, iso: f64, normals: bool) -> Result<MeshSummary> {
    let format = match format {
        Some(f) => f,
        None => mesh_format_for(out)?,
    };
    let (grid, _) = io::load_grid(snapshot)?;
    let mut mesh = extract_mesh(&grid, iso);
    let isolated = if normals { mesh.compute_vertex_normals() } else { 0 };
    io::write_mesh(&mesh, out, format)?;
    Ok(MeshSummary {
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        isolated_vertices: isolated,
        output: out.to_path_buf(),
    })
}

fn is_mesh_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ply" | "obj")
    )
}

/// Surface samples of a mesh file with faces, otherwise its points.
fn load_points(path: &Path, samples: usize, seed: u64) -> Result<(Vec<Point3<f64>>, bool)> {
    if is_mesh_path(path) {
        let m = io::read_mesh(path)?;
        if !m.triangles.is_empty() {
            return Ok((sample_mesh(&m, samples, seed)?, true));
        }
        return Ok((m.vertices, false));
    }
    Ok((io::read_scan(path)?.points, false))
}

/// Scores a predicted mesh or cloud against ground-truth points.
pub fn eval(pred: &Path, gt: &Path, threshold: f64, samples: usize, seed: u64, out: Option<&Path>) -> Result<MetricsReport> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(Error::Config(format!("threshold must be a non-negative number, got {threshold}")));
    }
    let (pred_pts, sampled) = load_points(pred, samples, seed)?;
    let gt_pts = if is_mesh_path(gt) {
        io::read_mesh(gt)?.vertices
    } else {
        io::read_scan(gt)?.points
    };
    if pred_pts.is_empty() {
        return Err(Error::Evaluation(format!("{}: no predicted points", pred.display())));
    }
    if gt_pts.is_empty() {
        return Err(Error::Evaluation(format!("{}: no ground-truth points", gt.display())));
    }
    let mut report = evaluate(&pred_pts, &gt_pts, threshold)?;
    report.seed = sampled.then_some(seed);
    if let Some(out) = out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(out, json + "\n").map_err(io_err(out))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportSummary {
    pub rows: usize,
    pub output: PathBuf,
}

pub fn export(snapshot: &Path, out: &Path, include: ExportSelection) -> Result<ExportSummary> {
    let (grid, _) = io::load_grid(snapshot)?;
    let ext = out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let rows = match ext.as_deref() {
        Some("csv") => io::export_grid_csv(&grid, out, include)?,
        Some("pcd") => io::export_grid_pcd(&grid, out, include)?,
        _ => {
            return Err(Error::Format(format!(
                "{}: export supports .csv and .pcd",
                out.display()
            )))
        }
    };
    Ok(ExportSummary {
        rows,
        output: out.to_path_buf(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub memory_bytes: u64,
    pub observed: usize,
    pub occupied: usize,
    pub h_max: u8,
    pub threshold: u8,
}

pub fn info(snapshot: &Path) -> Result<GridInfo> {
    let (grid, meta) = io::load_grid(snapshot)?;
    let observed = grid.voxels().filter(|v| v.is_observed()).count();
    let occupied = grid.voxels().filter(|v| v.is_observed() && v.is_occupied()).count();
    let o = grid.origin();
    Ok(GridInfo {
        dims: grid.dims(),
        voxel_size: grid.voxel_size(),
        origin: [o.x, o.y, o.z],
        memory_bytes: grid.memory_bytes(),
        observed,
        occupied,
        h_max: meta.h_max,
        threshold: meta.threshold,
    })
}

/// Fixed synthetic scan set used when a benchmark has no scans of its own.
#[derive(Debug, Clone)]
pub struct SyntheticScans {
    pub frames: Vec<ScanFrame>,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

/// `frames` sweeps of exactly `50 * azimuth_steps` returns inside an
/// 8 x 8 x 1.6 m room. The bounds leave room for a 21-voxel kernel at 0.3 m.
pub fn synthetic_scans(frames: usize, azimuth_steps: usize) -> SyntheticScans {
    let room = BoxRoom::new(Point3::new(-4.0, -4.0, -0.8), Point3::new(4.0, 4.0, 0.8));
    let lidar = SpinningLidar {
        beams: 50,
        elevation_min_deg: -30.0,
        elevation_max_deg: 30.0,
        azimuth_steps,
        max_range: 100.0,
    };
    let frames = (0..frames)
        .map(|i| {
            let s = i as f64;
            let pose: Pose = Isometry3::new(
                Vector3::new(0.4 * (0.7 * s).sin(), 0.4 * (0.5 * s).cos() - 0.4, 0.1 * (0.3 * s).sin()),
                Vector3::new(0.0, 0.0, 0.2 * s),
            );
            ScanFrame::new(lidar.scan(&room, &pose), pose)
        })
        .collect();
    SyntheticScans {
        frames,
        bounds_min: [-7.2, -7.2, -4.0],
        bounds_max: [7.2, 7.2, 4.0],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub memory_bytes: u64,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Mean per-frame latency of each repeat.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub points_per_frame: f64,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
    /// Largest over smallest mean latency.
    pub max_min_ratio: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Times frame integration over a fixed scan set and a fixed world extent at
/// each voxel size.
///
/// Scans come from `paths.scans` when configured, otherwise from
/// [`synthetic_scans`]. The extent is the configured bounds, or the
/// configured dims at the configured voxel size, or the synthetic bounds.
pub fn bench(cfg: &ConfigFile, voxel_sizes: &[f64], repeats: usize) -> Result<BenchReport> {
    if voxel_sizes.is_empty() {
        return Err(Error::Config("bench needs at least one voxel size".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("bench needs at least one repeat".into()));
    }
    if repeats < 2 {
        warn!("a single repeat gives no spread estimate");
    }
    let (frames, synthetic_bounds) = match (&cfg.paths.scans, &cfg.paths.trajectory) {
        (Some(s), Some(t)) => (load_frames(s, t)?.0, None),
        (None, None) => {
            let syn = synthetic_scans(2, 1000);
            (syn.frames, Some((syn.bounds_min, syn.bounds_max)))
        }
        _ => return Err(Error::Config("bench needs both paths.scans and paths.trajectory, or neither".into())),
    };
    if frames.is_empty() {
        return Err(Error::Config("bench has no frames to integrate".into()));
    }
    let g = &cfg.grid;
    let (lo, hi) = match (&g.bounds_min, &g.bounds_max, &g.dims, g.voxel_size, synthetic_bounds) {
        (Some(lo), Some(hi), _, _, _) if lo.len() == 3 && hi.len() == 3 => ([lo[0], lo[1], lo[2]], [hi[0], hi[1], hi[2]]),
        (None, None, Some(d), Some(vs), _) if d.len() == 3 => {
            let o = g.origin.clone().unwrap_or_else(|| vec![0.0; 3]);
            let o = [o[0], o[1], o[2]];
            (o, [0, 1, 2].map(|a| o[a] + d[a] as f64 * vs))
        }
        (None, None, None, _, Some(b)) => b,
        _ => {
            return Err(Error::Config(
                "bench needs grid bounds, or dims with voxel_size, to fix the world extent".into(),
            ))
        }
    };

    let mut setups = Vec::with_capacity(voxel_sizes.len());
    for &vs in voxel_sizes {
        let mut c = cfg.clone();
        c.grid.voxel_size = Some(vs);
        c.grid.dims = None;
        c.grid.origin = None;
        c.grid.bounds_min = Some(lo.to_vec());
        c.grid.bounds_max = Some(hi.to_vec());
        let rc = c.resolve()?;
        let bank = KernelBank::new(rc.kernel)?;
        setups.push((rc, bank));
    }
    // Sizes take turns frame by frame, so that drift in machine load
    // affects all of them alike.
    let mut samples = vec![Vec::with_capacity(repeats); setups.len()];
    let mut memory = vec![0; setups.len()];
    for _ in 0..repeats {
        let mut grids = Vec::with_capacity(setups.len());
        for (k, (rc, _)) in setups.iter().enumerate() {
            let grid = build_grid(rc)?;
            memory[k] = grid.memory_bytes();
            grids.push(grid);
        }
        let integs = grids
            .iter_mut()
            .zip(&setups)
            .map(|(g, (rc, bank))| Integrator::exclusive(g, bank, rc.integration, rc.threads))
            .collect::<Result<Vec<_>>>()?;
        let mut totals = vec![0.0; setups.len()];
        for f in &frames {
            for (k, integ) in integs.iter().enumerate() {
                totals[k] += integ.integrate_frame(f)?.elapsed_ms;
            }
        }
        for (k, t) in totals.into_iter().enumerate() {
            samples[k].push(t / frames.len() as f64);
        }
    }
    let mut rows = Vec::new();
    for (k, (rc, _)) in setups.iter().enumerate() {
        let (mean_ms, std_ms) = mean_std(&samples[k]);
        info!("voxel size {}: {mean_ms:.1} +- {std_ms:.1} ms per frame", rc.voxel_size);
        rows.push(BenchRow {
            voxel_size: rc.voxel_size,
            dims: rc.dims,
            memory_bytes: memory[k],
            mean_ms,
            std_ms,
            samples: std::mem::take(&mut samples[k]),
        });
    }
    let max = rows.iter().map(|r| r.mean_ms).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.mean_ms).fold(f64::INFINITY, f64::min);
    Ok(BenchReport {
        frames: frames.len(),
        points_per_frame: frames.iter().map(|f| f.points.len()).sum::<usize>() as f64 / frames.len() as f64,
        repeats,
        rows,
        max_min_ratio: max / min,
    })
}

pub fn write_bench_csv(report: &BenchReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from("voxel_size,nx,ny,nz,memory_bytes,mean_ms,std_ms,samples\n");
    for r in &report.rows {
        body += &format!(
            "{},{},{},{},{},{:.3},{:.3},{}\n",
            r.voxel_size, r.dims[0], r.dims[1], r.dims[2], r.memory_bytes, r.mean_ms, r.std_ms, r.samples.len()
        );
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}
