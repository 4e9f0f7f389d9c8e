//! TUM trajectories: `timestamp tx ty tz qx qy qz qw` per line.

use std::io::Write;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::motion::{interpolate_pose, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub timestamp: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<PoseRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Interpolated pose at `t`, clamped to the first and last records.
    ///
    /// Panics on an empty trajectory.
    pub fn lookup_pose(&self, t: f64) -> Pose {
        let r = &self.records;
        assert!(!r.is_empty(), "pose lookup on an empty trajectory");
        if t <= r[0].timestamp {
            return r[0].pose;
        }
        if t >= r[r.len() - 1].timestamp {
            return r[r.len() - 1].pose;
        }
        let hi = r.partition_point(|rec| rec.timestamp <= t);
        let (a, b) = (&r[hi - 1], &r[hi]);
        if a.timestamp == t {
            return a.pose;
        }
        let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
        interpolate_pose(&a.pose, &b.pose, s)
    }

    /// Record whose timestamp is closest to `t`, if within `max_gap`.
    pub fn nearest(&self, t: f64, max_gap: f64) -> Option<&PoseRecord> {
        let hi = self.records.partition_point(|rec| rec.timestamp < t);
        [hi.checked_sub(1), Some(hi)]
            .into_iter()
            .flatten()
            .filter_map(|i| self.records.get(i))
            .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()))
            .filter(|rec| (rec.timestamp - t).abs() <= max_gap)
    }
}

pub fn parse(text: &str, name: &str) -> Result<Trajectory> {
    let mut records: Vec<PoseRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Error::Format(format!("{name}:{line_no}: {m}"));
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 8 {
            return Err(err(format!("expected 8 values, got {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if (q.norm() - 1.0).abs() > 1e-3 {
            return Err(err(format!("quaternion norm {} is not close to 1", q.norm())));
        }
        if let Some(last) = records.last() {
            if vals[0] <= last.timestamp {
                return Err(err(format!(
                    "timestamp {} does not increase (previous {})",
                    vals[0], last.timestamp
                )));
            }
        }
        records.push(PoseRecord {
            timestamp: vals[0],
            pose: Isometry3::from_parts(
                Translation3::new(vals[1], vals[2], vals[3]),
                UnitQuaternion::from_quaternion(q),
            ),
        });
    }
    Ok(Trajectory { records })
}

pub fn write<W: Write>(w: &mut W, traj: &Trajectory) -> std::io::Result<()> {
    writeln!(w, "# timestamp tx ty tz qx qy qz qw")?;
    for r in &traj.records {
        let t = r.pose.translation.vector;
        let q = r.pose.rotation.quaternion();
        writeln!(w, "{} {} {} {} {} {} {} {}", r.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn identity_and_order() {
        let t = parse("# comment\n0.0 0 0 0 0 0 0 1\n1.0 2 0 0 0 0 0 1\n", "t.txt").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.records[0].pose, Pose::identity());
        assert_eq!(t.records[1].pose.translation.vector, Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let e = parse("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n", "t.txt").unwrap_err();
        assert!(matches!(e, Error::Format(_)));
        assert!(e.to_string().contains("t.txt:2"));
        assert!(parse("1.0 0 0 0 0 0 0\n", "t.txt").unwrap_err().to_string().contains(":1"));
        assert!(parse("1.0 0 0 0 0 0 0 1.5\n", "t.txt").is_err());
        assert!(parse("1.0 0 0 0 0 0 zero 1\n", "t.txt").is_err());
    }

    #[test]
    fn renormalizes_near_unit_quaternions() {
        let t = parse("0 0 0 0 0 0 0 1.0005\n", "t.txt").unwrap();
        assert!((t.records[0].pose.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lookup_interpolates_and_clamps() {
        let t = parse("1.0 0 0 0 0 0 0 1\n3.0 2 0 0 0 0 0 1\n", "t.txt").unwrap();
        assert_eq!(t.lookup_pose(1.0), t.records[0].pose);
        assert_eq!(t.lookup_pose(3.0), t.records[1].pose);
        assert!((t.lookup_pose(2.0).translation.vector - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(t.lookup_pose(0.0), t.records[0].pose);
        assert_eq!(t.lookup_pose(9.0), t.records[1].pose);
    }

    #[test]
    fn nearest_respects_gap() {
        let t = parse("1.0 0 0 0 0 0 0 1\n2.0 2 0 0 0 0 0 1\n", "t.txt").unwrap();
        assert_eq!(t.nearest(1.04, 0.05).unwrap().timestamp, 1.0);
        assert_eq!(t.nearest(1.97, 0.05).unwrap().timestamp, 2.0);
        assert!(t.nearest(1.5, 0.05).is_none());
    }

    #[test]
    fn write_parse_round_trip() {
        let t = Trajectory {
            records: vec![PoseRecord {
                timestamp: 0.25,
                pose: Isometry3::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.1, 0.2, 0.3)),
            }],
        };
        let mut buf = Vec::new();
        write(&mut buf, &t).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap(), "w").unwrap();
        assert_eq!(back.records[0].timestamp, 0.25);
        assert!((back.records[0].pose.translation.vector - t.records[0].pose.translation.vector).norm() == 0.0);
        assert!(back.records[0].pose.rotation.angle_to(&t.records[0].pose.rotation) < 1e-12);
    }
}
