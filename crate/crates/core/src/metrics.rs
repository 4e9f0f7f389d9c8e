//! Reconstruction quality: accuracy, completeness, Chamfer-L1, and
//! thresholded precision / recall / F-score between two point sets.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesher::TriangleMesh;

pub const DEFAULT_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy_m: f64,
    pub completeness_m: f64,
    pub chamfer_l1_m: f64,
    pub recall_pct: f64,
    pub precision_pct: f64,
    pub fscore_pct: f64,
    pub threshold_m: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    /// Seed used to sample the predicted mesh, when it was sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Area-uniform samples on the mesh surface, reproducible per seed.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Point3<f64>>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(t);
        total += (b - a).cross(&(c - a)).norm() * 0.5;
        cumulative.push(total);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Evaluation(format!(
            "cannot sample {n} points from a mesh with surface area {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        let s = rng.gen::<f64>().sqrt();
        let r = rng.gen::<f64>();
        out.push(Point3::from(
            a.coords * (1.0 - s) + b.coords * (s * (1.0 - r)) + c.coords * (s * r),
        ));
    }
    Ok(out)
}

const LEAF_SIZE: usize = 8;

/// Static kd-tree over 3-D points for exact nearest-neighbor queries.
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            order: (0..points.len() as u32).collect(),
            axis: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[lo..hi] {
            let p = self.points[i as usize];
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])))
            .unwrap();
        let mid = (lo + hi) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&i, &j| {
            points[i as usize][axis].total_cmp(&points[j as usize][axis])
        });
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Index and squared distance of the nearest point, `None` if empty.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.points.len(), &q, &mut best);
        Some(best)
    }

    fn search(&self, lo: usize, hi: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let d = dist2(&self.points[i as usize], q);
                if d < best.1 {
                    *best = (i as usize, d);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid] as usize;
        let p = &self.points[i];
        let d = dist2(p, q);
        if d < best.1 {
            *best = (i, d);
        }
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        if diff * diff < best.1 {
            self.search(far.0, far.1, q, best);
        }
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Euclidean distance from every point of `from` to its nearest point in `to`.
pub fn nn_distances(from: &[Point3<f64>], to: &[Point3<f64>]) -> Result<Vec<f64>> {
    if to.is_empty() {
        return Err(Error::Evaluation("nearest-neighbor target set is empty".into()));
    }
    let tree = KdTree::new(to);
    Ok(from
        .par_iter()
        .map(|p| tree.nearest(p).map(|(_, d2)| d2.sqrt()).unwrap())
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct_within(v: &[f64], t: f64) -> f64 {
    100.0 * v.iter().filter(|&&d| d <= t).count() as f64 / v.len() as f64
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn fscore(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn evaluate(pred: &[Point3<f64>], gt: &[Point3<f64>], threshold: f64) -> Result<MetricsReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Evaluation(format!(
            "need non-empty point sets, got {} predicted and {} reference points",
            pred.len(),
            gt.len()
        )));
    }
    let pred_to_gt = nn_distances(pred, gt)?;
    let gt_to_pred = nn_distances(gt, pred)?;
    let accuracy = mean(&pred_to_gt);
    let completeness = mean(&gt_to_pred);
    let precision = pct_within(&pred_to_gt, threshold);
    let recall = pct_within(&gt_to_pred, threshold);
    Ok(MetricsReport {
        accuracy_m: accuracy,
        completeness_m: completeness,
        chamfer_l1_m: (accuracy + completeness) / 2.0,
        recall_pct: recall,
        precision_pct: precision,
        fscore_pct: fscore(precision, recall),
        threshold_m: threshold,
        n_pred: pred.len(),
        n_gt: gt.len(),
        seed: None,
    })
}
