#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dbtsdf::io::{self, PoseRecord, Trajectory};
use dbtsdf::sim::{BoxRoom, SpinningLidar};
use dbtsdf::Pose;
use nalgebra::{Isometry3, Point3, Vector3};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dbtsdf"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn small_room() -> BoxRoom {
    BoxRoom::new(Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, 1.0, 1.0))
}

/// Sensor poses on a slow loop in the middle of `small_room`.
pub fn loop_pose(i: usize, n: usize) -> Pose {
    let a = i as f64 / n.max(1) as f64 * std::f64::consts::TAU;
    Isometry3::new(
        Vector3::new(0.3 * a.cos(), 0.3 * a.sin(), 0.5),
        Vector3::new(0.0, 0.0, a),
    )
}

/// Writes `n` binary PCD scans named by timestamp and a matching TUM file.
pub fn write_sequence(dir: &Path, n: usize, lidar: &SpinningLidar) -> (PathBuf, PathBuf) {
    let scans = dir.join("scans");
    std::fs::create_dir_all(&scans).unwrap();
    let room = small_room();
    let mut records = Vec::new();
    for i in 0..n {
        let t = 100.0 + i as f64 * 0.1;
        let pose = loop_pose(i, n);
        let pts = lidar.scan(&room, &pose);
        io::write_scan(&scans.join(format!("{t:.3}.pcd")), &pts, None, true).unwrap();
        records.push(PoseRecord { timestamp: t, pose });
    }
    let traj = dir.join("traj.txt");
    io::write_trajectory(&traj, &Trajectory { records }).unwrap();
    (scans, traj)
}

/// Config for `small_room` at 5 cm.
pub fn write_config(dir: &Path, scans: &Path, traj: &Path, out: &Path) -> PathBuf {
    let text = format!(
        "threads = 1\n\n[grid]\nvoxel_size = 0.05\nbounds_min = [-1.6, -1.6, -0.6]\nbounds_max = [1.6, 1.6, 1.6]\n\n\
         [kernel]\nkernel_size = 11\nshadow_radius = 1\n\n[paths]\nscans = {:?}\ntrajectory = {:?}\noutput = {:?}\n",
        scans, traj, out
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn sparse_lidar() -> SpinningLidar {
    SpinningLidar {
        beams: 16,
        elevation_min_deg: -50.0,
        elevation_max_deg: 50.0,
        azimuth_steps: 120,
        max_range: 10.0,
    }
}
