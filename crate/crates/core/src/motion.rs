//! Poses, pose interpolation and per-point motion compensation (deskewing).

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid transform from the sensor frame to the map frame.
pub type Pose = Isometry3<f64>;

/// Builds a pose from a rotation matrix, rejecting matrices that are not
/// proper rotations within 1e-9.
pub fn pose_from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Pose> {
    check_rotation(rotation)?;
    let rot = Rotation3::from_matrix_unchecked(*rotation);
    Ok(Isometry3::from_parts(
        Translation3::from(translation),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

pub fn check_rotation(m: &Matrix3<f64>) -> Result<()> {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    let det = m.determinant();
    if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) {
        return Err(Error::Config(format!(
            "rotation is not orthonormal with det +1 (orthogonality error {ortho:e}, det {det})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensationMode {
    #[default]
    None,
    YawOnly,
    FullSe3,
}

/// One sweep of returns in the sensor frame, with the pose at the end of
/// the sweep and optionally the pose at its start.
#[derive(Debug, Clone)]
pub struct ScanFrame {
    pub points: Vec<Point3<f64>>,
    /// Normalized per-point capture time in `[0, 1]`.
    pub times: Option<Vec<f64>>,
    pub pose: Pose,
    pub prev_pose: Option<Pose>,
}

impl ScanFrame {
    pub fn new(points: Vec<Point3<f64>>, pose: Pose) -> Self {
        ScanFrame {
            points,
            times: None,
            pose,
            prev_pose: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rotation(self.pose.rotation.to_rotation_matrix().matrix())?;
        if let Some(prev) = &self.prev_pose {
            check_rotation(prev.rotation.to_rotation_matrix().matrix())?;
        }
        if let Some(t) = &self.times {
            if t.len() != self.points.len() {
                return Err(Error::Config(format!(
                    "{} timestamps for {} points",
                    t.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    /// Capture time of point `i`, defaulting to `i / (n - 1)`.
    pub fn time_of(&self, i: usize) -> f64 {
        match &self.times {
            Some(t) => t[i].clamp(0.0, 1.0),
            None if self.points.len() > 1 => i as f64 / (self.points.len() - 1) as f64,
            None => 1.0,
        }
    }
}

/// Translation lerp plus rotation slerp between `a` (s = 0) and `b` (s = 1).
pub fn interpolate_pose(a: &Pose, b: &Pose, s: f64) -> Pose {
    let t = a.translation.vector.lerp(&b.translation.vector, s);
    let r = a
        .rotation
        .try_slerp(&b.rotation, s, 1e-12)
        .unwrap_or_else(|| a.rotation.nlerp(&b.rotation, s));
    Isometry3::from_parts(Translation3::from(t), r)
}

fn yaw_of(q: &UnitQuaternion<f64>) -> f64 {
    q.euler_angles().2
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU);
    w - std::f64::consts::PI
}

/// Sensor pose at normalized time `s` of a sweep from `prev` to `pose`.
pub fn pose_at(prev: &Pose, pose: &Pose, s: f64, mode: CompensationMode) -> Pose {
    match mode {
        CompensationMode::None => *pose,
        CompensationMode::FullSe3 => interpolate_pose(prev, pose, s),
        CompensationMode::YawOnly => {
            let t = prev.translation.vector.lerp(&pose.translation.vector, s);
            let dyaw = wrap_angle(yaw_of(&pose.rotation) - yaw_of(&prev.rotation));
            let back = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), (s - 1.0) * dyaw);
            Isometry3::from_parts(Translation3::from(t), back * pose.rotation)
        }
    }
}

/// Re-expresses every point in the end-of-sweep sensor frame, undoing the
/// sensor motion between its capture time and the end of the sweep.
pub fn motion_compensate(scan: &ScanFrame, mode: CompensationMode) -> Result<ScanFrame> {
    if mode == CompensationMode::None {
        return Ok(scan.clone());
    }
    let prev = scan.prev_pose.ok_or_else(|| {
        Error::Config(format!("compensation mode {mode:?} requires a previous pose"))
    })?;
    scan.validate()?;
    let end_inv = scan.pose.inverse();
    let points = scan
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let at = pose_at(&prev, &scan.pose, scan.time_of(i), mode);
            end_inv * (at * p)
        })
        .collect();
    Ok(ScanFrame {
        points,
        times: scan.times.clone(),
        pose: scan.pose,
        prev_pose: scan.prev_pose,
    })
}
