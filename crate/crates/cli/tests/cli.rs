mod common;

use common::*;
use dbtsdf::io;
use dbtsdf_cli::exit;

#[test]
fn fuse_writes_snapshot_stats_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, traj) = write_sequence(dir.path(), 3, &sparse_lidar());
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &scans, &traj, &out);
    let o = run(&["fuse", "--config", cfg.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["frames"], 3);

    let stats = std::fs::read_to_string(out.join("stats.csv")).unwrap();
    let lines: Vec<_> = stats.lines().collect();
    assert_eq!(lines[0], "frame,points,discarded,ms");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with(&format!("0,{},", 16 * 120)));

    let (grid, meta) = io::load_grid(&out.join("map.dbtsdf")).unwrap();
    assert_eq!(grid.dims(), [64, 64, 44]);
    assert_eq!((meta.h_max, meta.threshold), (255, 2));
    assert!(grid.voxels().any(|v| v.is_occupied()));
}

#[test]
fn resolved_config_reproduces_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, traj) = write_sequence(dir.path(), 3, &sparse_lidar());
    let out = dir.path().join("first");
    let cfg = write_config(dir.path(), &scans, &traj, &out);
    assert!(run(&["fuse", "--config", cfg.to_str().unwrap()]).status.success());

    let resolved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("dims = ["));
    assert!(resolved.contains("shadow_radius = 1"));
    let again = dir.path().join("again");
    let o = run(&[
        "fuse",
        "--config",
        out.join("config.toml").to_str().unwrap(),
        "--output",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(out.join("map.dbtsdf")).unwrap(),
        std::fs::read(again.join("map.dbtsdf")).unwrap()
    );
}

#[test]
fn flags_override_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, traj) = write_sequence(dir.path(), 2, &sparse_lidar());
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &scans, &traj, &out);
    let o = run(&[
        "fuse",
        "--config",
        cfg.to_str().unwrap(),
        "--threshold",
        "1",
        "--shadow-model",
        "cone",
        "--downsample",
        "2",
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, meta) = io::load_grid(&out.join("map.dbtsdf")).unwrap();
    assert_eq!(meta.threshold, 1);
    let resolved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("shadow_model = \"cone\""));
    assert!(resolved.contains("downsample = 2"));
    assert!(resolved.contains("threads = 2"));
}

#[test]
fn missing_trajectory_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, _) = write_sequence(dir.path(), 1, &sparse_lidar());
    let missing = dir.path().join("nowhere.txt");
    let cfg = write_config(dir.path(), &scans, &missing, &dir.path().join("out"));
    let o = run(&["fuse", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    assert!(stderr(&o).contains("nowhere.txt"));
}

#[test]
fn bad_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grid]\nvoxel_sise = 0.1\n").unwrap();
    let o = run(&["fuse", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    let o = run(&["fuse", "--voxel-size", "0.1"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
}

#[test]
fn mesh_export_info_on_a_fused_room() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, traj) = write_sequence(dir.path(), 4, &sparse_lidar());
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &scans, &traj, &out);
    assert!(run(&["fuse", "--config", cfg.to_str().unwrap()]).status.success());
    let snap = out.join("map.dbtsdf");

    for name in ["room.ply", "room.obj"] {
        let path = dir.path().join(name);
        let o = run(&["mesh", snap.to_str().unwrap(), "-o", path.to_str().unwrap(), "--normals", "--json"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let s: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        let mesh = io::read_mesh(&path).unwrap();
        assert!(!mesh.triangles.is_empty());
        assert_eq!(s["triangles"], mesh.triangles.len());
        assert!(mesh.normals.is_some());
    }

    let csv = dir.path().join("occ.csv");
    let o = run(&["export", snap.to_str().unwrap(), "-o", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count() - 1;

    let o = run(&["info", snap.to_str().unwrap(), "--json"]);
    let info: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(info["occupied"], rows);
    assert_eq!(info["memory_bytes"], 64 * 64 * 44 * 8);

    let bad = dir.path().join("bad.txt");
    let o = run(&["export", snap.to_str().unwrap(), "-o", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::FORMAT));
}

#[test]
fn fresh_snapshot_meshes_to_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dbtsdf::VoxelGrid::new([8, 8, 8], 0.1, nalgebra::Point3::origin()).unwrap();
    let snap = dir.path().join("fresh.dbtsdf");
    io::save_grid(&grid, io::SnapshotMeta { h_max: 255, threshold: 2 }, &snap).unwrap();
    let path = dir.path().join("empty.ply");
    let o = run(&["mesh", snap.to_str().unwrap(), "-o", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(io::read_mesh(&path).unwrap().is_empty());
}

#[test]
fn corrupt_snapshots_exit_with_the_corruption_code() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("bad.dbtsdf");
    std::fs::write(&snap, b"NOTMAGIC and some more bytes to pass the header length check......").unwrap();
    for cmd in ["mesh", "export", "info"] {
        let mut args = vec![cmd, snap.to_str().unwrap()];
        if cmd != "info" {
            args.extend(["-o", "/tmp/never-written.ply"]);
        }
        if cmd == "export" {
            args[3] = "/tmp/never-written.csv";
        }
        let o = run(&args);
        assert_eq!(o.status.code(), Some(exit::CORRUPTION), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn eval_reports_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let pts: Vec<_> = (0..200)
        .map(|i| nalgebra::Point3::new((i % 20) as f64 * 0.05, (i / 20) as f64 * 0.05, 0.0))
        .collect();
    let gt = dir.path().join("gt.xyz");
    io::write_scan(&gt, &pts, None, false).unwrap();
    let report = dir.path().join("report.json");
    let o = run(&["eval", gt.to_str().unwrap(), gt.to_str().unwrap(), "-o", report.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["fscore_pct"], 100.0);
    assert_eq!(r["chamfer_l1_m"], 0.0);
    for key in ["accuracy_m", "completeness_m", "recall_pct", "precision_pct", "threshold_m", "n_pred", "n_gt"] {
        assert!(r.get(key).is_some(), "{key}");
    }

    let empty = dir.path().join("empty.xyz");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["eval", empty.to_str().unwrap(), gt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::EVALUATION));
}

#[test]
fn unmatched_scans_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, traj) = write_sequence(dir.path(), 2, &sparse_lidar());
    std::fs::copy(scans.join("100.000.pcd"), scans.join("500.000.pcd")).unwrap();
    std::fs::write(scans.join("notes.pcd"), "x").unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &scans, &traj, &out);
    let o = run(&["fuse", "--config", cfg.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["frames"], 2);
    assert_eq!(s["skipped_frames"], 1);
    assert!(stderr(&o).contains("notes.pcd"));
}

#[test]
fn bench_reports_each_size() {
    let dir = tempfile::tempdir().unwrap();
    let (scans, traj) = write_sequence(dir.path(), 2, &sparse_lidar());
    let table = dir.path().join("bench.csv");
    let o = run(&[
        "bench",
        "--scans",
        scans.to_str().unwrap(),
        "--trajectory",
        traj.to_str().unwrap(),
        "--bounds-min",
        "-1.6",
        "-1.6",
        "-0.6",
        "--bounds-max",
        "1.6",
        "1.6",
        "1.6",
        "--kernel-size",
        "11",
        "--voxel-sizes",
        "0.1,0.05",
        "--repeats",
        "1",
        "--table",
        table.to_str().unwrap(),
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("repeat"));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 2);
    assert_eq!(r["rows"][1]["memory_bytes"], 64 * 64 * 44 * 8);
    let csv = std::fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("voxel_size,"));
}

#[test]
fn bench_statistics_and_downsampling() {
    use dbtsdf_cli::config::{ConfigFile, IntegrationSection};
    let r = dbtsdf_cli::commands::bench(&ConfigFile::default(), &[0.1], 5).unwrap();
    let row = &r.rows[0];
    assert_eq!(row.samples.len(), 5);
    let mean = row.samples.iter().sum::<f64>() / 5.0;
    let var = row.samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((row.mean_ms - mean).abs() < 1e-9);
    assert!((row.std_ms - var.sqrt()).abs() < 1e-9);

    let halved = ConfigFile {
        integration: IntegrationSection { downsample: Some(2), ..Default::default() },
        ..Default::default()
    };
    let d = dbtsdf_cli::commands::bench(&halved, &[0.1], 5).unwrap();
    assert!(d.rows[0].mean_ms < row.mean_ms, "{} vs {}", d.rows[0].mean_ms, row.mean_ms);
}
