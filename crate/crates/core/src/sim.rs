//! Noise-free spinning-LiDAR simulation against simple analytic scenes.

use nalgebra::{Point3, Vector3};

use crate::motion::Pose;

/// Ray-castable scene.
pub trait Scene {
    /// Distance along unit direction `d` from `o` to the first surface.
    fn raycast(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64>;
}

/// Closed axis-aligned room, observed from the inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRoom {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl BoxRoom {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        BoxRoom { min, max }
    }

    /// Distance from `p` to the nearest wall plane of the room.
    pub fn distance_to_surface(&self, p: &Point3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..3 {
            // distance to the face rectangles at min[a] and max[a]
            for plane in [self.min[a], self.max[a]] {
                let mut d2 = (p[a] - plane).powi(2);
                for b in (0..3).filter(|&b| b != a) {
                    let c = p[b].clamp(self.min[b], self.max[b]);
                    d2 += (p[b] - c).powi(2);
                }
                best = best.min(d2.sqrt());
            }
        }
        best
    }

    /// Points on a regular lattice of the six faces, roughly `spacing` apart.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Point3<f64>> {
        let mut out = Vec::new();
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let nb = ((self.max[b] - self.min[b]) / spacing).round().max(1.0) as usize;
            let nc = ((self.max[c] - self.min[c]) / spacing).round().max(1.0) as usize;
            for plane in [self.min[a], self.max[a]] {
                for i in 0..=nb {
                    for j in 0..=nc {
                        let mut p = Point3::origin();
                        p[a] = plane;
                        p[b] = self.min[b] + (self.max[b] - self.min[b]) * i as f64 / nb as f64;
                        p[c] = self.min[c] + (self.max[c] - self.min[c]) * j as f64 / nc as f64;
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

impl Scene for BoxRoom {
    fn raycast(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t = f64::INFINITY;
        for a in 0..3 {
            if d[a] > 0.0 {
                t = t.min((self.max[a] - o[a]) / d[a]);
            } else if d[a] < 0.0 {
                t = t.min((self.min[a] - o[a]) / d[a]);
            }
        }
        (t.is_finite() && t > 0.0).then_some(t)
    }
}

/// Rotating multi-beam scanner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinningLidar {
    pub beams: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_steps: usize,
    pub max_range: f64,
}

impl Default for SpinningLidar {
    fn default() -> Self {
        SpinningLidar {
            beams: 64,
            elevation_min_deg: -45.0,
            elevation_max_deg: 45.0,
            azimuth_steps: 1024,
            max_range: 100.0,
        }
    }
}

impl SpinningLidar {
    /// Returns in the sensor frame, ordered by azimuth column then beam.
    pub fn scan<S: Scene>(&self, scene: &S, pose: &Pose) -> Vec<Point3<f64>> {
        let origin = Point3::from(pose.translation.vector);
        let mut out = Vec::with_capacity(self.beams * self.azimuth_steps);
        for a in 0..self.azimuth_steps {
            let az = a as f64 / self.azimuth_steps as f64 * std::f64::consts::TAU;
            for b in 0..self.beams {
                let f = if self.beams > 1 { b as f64 / (self.beams - 1) as f64 } else { 0.5 };
                let el = (self.elevation_min_deg + f * (self.elevation_max_deg - self.elevation_min_deg)).to_radians();
                let local = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                let world = pose.rotation * local;
                if let Some(t) = scene.raycast(&origin, &world) {
                    if t <= self.max_range {
                        out.push(Point3::from(local * t));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> BoxRoom {
        BoxRoom::new(Point3::new(-5.0, -5.0, 0.0), Point3::new(5.0, 5.0, 3.0))
    }

    #[test]
    fn raycast_hits_walls() {
        let r = room();
        let o = Point3::new(0.0, 0.0, 1.5);
        assert_eq!(r.raycast(&o, &Vector3::new(1.0, 0.0, 0.0)), Some(5.0));
        assert_eq!(r.raycast(&o, &Vector3::new(0.0, 0.0, -1.0)), Some(1.5));
        assert_eq!(r.raycast(&o, &Vector3::zeros()), None);
    }

    #[test]
    fn scan_points_lie_on_surfaces() {
        let r = room();
        let pose = Pose::new(Vector3::new(1.0, -0.5, 1.2), Vector3::new(0.0, 0.0, 0.3));
        let lidar = SpinningLidar { beams: 16, azimuth_steps: 90, ..Default::default() };
        let pts = lidar.scan(&r, &pose);
        assert_eq!(pts.len(), 16 * 90);
        for p in &pts {
            assert!(r.distance_to_surface(&(pose * p)) < 1e-9);
        }
    }

    #[test]
    fn surface_samples_cover_faces() {
        let pts = room().surface_samples(0.5);
        assert!(pts.iter().all(|p| room().distance_to_surface(p) < 1e-12));
        assert_eq!(room().distance_to_surface(&Point3::new(0.0, 0.0, 1.0)), 1.0);
        assert_eq!(room().distance_to_surface(&Point3::new(6.0, 0.0, 1.0)), 1.0);
    }
}
