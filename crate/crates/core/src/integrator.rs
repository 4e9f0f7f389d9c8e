//! Scan fusion: stamps the shared distance kernel and the per-bin shadow
//! region around every return.
//!
//! All voxel updates are commutative (`fetch_and` on masks, saturating
//! increments on hit counters, sign derived from the counter), so the final
//! grid does not depend on point order or on the number of worker threads.

use std::collections::HashSet;
use std::sync::atomic::Ordering;
use std::time::Instant;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Sign, VoxelCell, VoxelGrid};
use crate::kernels::KernelBank;
use crate::motion::{motion_compensate, CompensationMode, ScanFrame};

pub const DEFAULT_H_MAX: u8 = 255;
pub const DEFAULT_THRESHOLD: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationParams {
    /// Hit counter saturation value.
    pub h_max: u8,
    /// Hits needed before a voxel is marked occupied.
    pub threshold: u8,
    pub compensation: CompensationMode,
    /// Keep every n-th return of a scan.
    pub downsample: usize,
    /// Integrate only the first return landing in each voxel of a frame.
    pub first_return_per_voxel: bool,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        IntegrationParams {
            h_max: DEFAULT_H_MAX,
            threshold: DEFAULT_THRESHOLD,
            compensation: CompensationMode::None,
            downsample: 1,
            first_return_per_voxel: false,
        }
    }
}

impl IntegrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.threshold && self.threshold <= self.h_max) {
            return Err(Error::Config(format!(
                "need 1 <= threshold <= h_max, got threshold {} and h_max {}",
                self.threshold, self.h_max
            )));
        }
        if self.downsample == 0 {
            return Err(Error::Config("downsample factor must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    /// Returns considered after sequential downsampling.
    pub points_in: usize,
    /// Returns dropped at the map boundary, too close to the sensor, or as
    /// repeated returns when first-return mode is on.
    pub points_discarded: usize,
    /// Voxels whose record changed.
    pub voxels_written: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointOutcome {
    Applied { voxels_written: usize },
    Discarded,
}

/// A return that passed the boundary test, ready to be stamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Stamp {
    /// Linear index of the voxel containing the return.
    center: usize,
    bin: usize,
}

/// Fuses scans into one grid with one kernel bank.
pub struct Integrator<'a> {
    grid: &'a VoxelGrid,
    bank: &'a KernelBank,
    params: IntegrationParams,
    /// Linear offset of the first voxel of each (y, z) row of the kernel cube.
    row_offsets: Vec<isize>,
    pool: Option<rayon::ThreadPool>,
    /// No other writer can reach the grid while this integrator lives.
    exclusive: bool,
}

impl<'a> Integrator<'a> {
    /// Integrator holding the only access to `grid`. With one thread it
    /// skips atomic read-modify-write instructions.
    pub fn exclusive(
        grid: &'a mut VoxelGrid,
        bank: &'a KernelBank,
        params: IntegrationParams,
        threads: usize,
    ) -> Result<Self> {
        let mut integ = Integrator::new(grid, bank, params, threads)?;
        integ.exclusive = true;
        Ok(integ)
    }

    /// Integrator sharing `grid`; other integrators may write to it
    /// concurrently. `threads == 1` runs everything on the calling thread.
    pub fn new(
        grid: &'a VoxelGrid,
        bank: &'a KernelBank,
        params: IntegrationParams,
        threads: usize,
    ) -> Result<Self> {
        params.validate()?;
        let k = bank.size();
        let r = bank.half_extent() as isize;
        let [nx, ny, _] = grid.dims().map(|n| n as isize);
        let mut row_offsets = Vec::with_capacity(k * k);
        for dz in -r..=r {
            for dy in -r..=r {
                row_offsets.push(-r + nx * (dy + ny * dz));
            }
        }
        let pool = match threads {
            0 => return Err(Error::Config("thread count must be >= 1".into())),
            1 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Resource(format!("cannot start worker pool: {e}")))?,
            ),
        };
        Ok(Integrator {
            grid,
            bank,
            params,
            row_offsets,
            pool,
            exclusive: false,
        })
    }

    pub fn params(&self) -> &IntegrationParams {
        &self.params
    }

    /// Boundary and degeneracy checks for one map-frame return.
    fn prepare(&self, p_map: &Point3<f64>, sensor: &Point3<f64>) -> Option<Stamp> {
        let ray = p_map - sensor;
        if !(ray.norm() >= self.grid.voxel_size()) {
            return None;
        }
        let c = self.grid.world_to_voxel(p_map)?;
        let r = self.bank.half_extent();
        let dims = self.grid.dims();
        if (0..3).any(|a| c[a] < r || c[a] + r >= dims[a]) {
            return None;
        }
        let bin = self.bank.select_bin(&ray).ok()?;
        Some(Stamp {
            center: self.grid.linear_index(c),
            bin,
        })
    }

    fn apply(&self, s: Stamp) -> usize {
        let cells = self.grid.cells();
        let k = self.bank.size();
        let masks = self.bank.distance_kernel();
        let (h_max, threshold) = (self.params.h_max, self.params.threshold);
        let plain = self.exclusive && self.pool.is_none();
        let mut written = 0;
        // Shadow first, so a voxel whose mask and hits both change is
        // counted once, by the mask pass.
        for i in self.bank.shadow_indices(s.bin) {
            let at = (s.center as isize + self.row_offsets[i / k]) as usize + i % k;
            let cell = &cells[at];
            let old = cell.mask.load(Ordering::Relaxed);
            let bumped = if plain {
                bump_hits_plain(cell, h_max, threshold)
            } else {
                bump_hits(cell, h_max, threshold)
            };
            written += (bumped && old & masks[i] == old) as usize;
        }
        for (row, &off) in self.row_offsets.iter().enumerate() {
            let start = (s.center as isize + off) as usize;
            let row_cells = &cells[start..start + k];
            let row_masks = &masks[row * k..(row + 1) * k];
            for (cell, &km) in row_cells.iter().zip(row_masks) {
                let old = cell.mask.load(Ordering::Relaxed);
                let new = old & km;
                if new != old {
                    if plain {
                        cell.mask.store(new, Ordering::Relaxed);
                    } else {
                        cell.mask.fetch_and(km, Ordering::Relaxed);
                    }
                    written += 1;
                }
            }
        }
        written
    }

    /// Integrates a single map-frame return observed from `sensor`.
    pub fn integrate_point(&self, p_map: &Point3<f64>, sensor: &Point3<f64>) -> PointOutcome {
        match self.prepare(p_map, sensor) {
            Some(s) => PointOutcome::Applied {
                voxels_written: self.apply(s),
            },
            None => PointOutcome::Discarded,
        }
    }

    /// Integrates map-frame returns that share one sensor origin.
    pub fn integrate_map_points(&self, points: &[Point3<f64>], sensor: &Point3<f64>) -> FrameStats {
        let start = Instant::now();
        let prepared: Vec<Option<Stamp>> = points.iter().map(|p| self.prepare(p, sensor)).collect();
        let mut stamps: Vec<Stamp> = Vec::with_capacity(prepared.len());
        let mut seen = HashSet::new();
        for s in prepared.into_iter().flatten() {
            if self.params.first_return_per_voxel && !seen.insert(s.center) {
                continue;
            }
            stamps.push(s);
        }
        let discarded = points.len() - stamps.len();
        // Updates commute, so apply them in Z-order for cache locality.
        stamps.sort_by_cached_key(|s| morton(self.grid.coords(s.center)));
        let written = match &self.pool {
            None => stamps.iter().map(|&s| self.apply(s)).sum(),
            Some(pool) => pool.install(|| stamps.par_iter().map(|&s| self.apply(s)).sum()),
        };
        FrameStats {
            points_in: points.len(),
            points_discarded: discarded,
            voxels_written: written,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }

    /// Downsamples, deskews, transforms to the map frame and integrates a scan.
    pub fn integrate_frame(&self, scan: &ScanFrame) -> Result<FrameStats> {
        if scan.points.is_empty() {
            return Ok(FrameStats::default());
        }
        let start = Instant::now();
        scan.validate()?;
        let n = self.params.downsample;
        let scan = if n > 1 {
            ScanFrame {
                points: scan.points.iter().step_by(n).copied().collect(),
                times: scan.times.as_ref().map(|t| t.iter().step_by(n).copied().collect()),
                pose: scan.pose,
                prev_pose: scan.prev_pose,
            }
        } else {
            scan.clone()
        };
        let scan = motion_compensate(&scan, self.params.compensation)?;
        let sensor = Point3::from(scan.pose.translation.vector);
        let map_points: Vec<Point3<f64>> = scan.points.iter().map(|p| scan.pose * p).collect();
        let mut stats = self.integrate_map_points(&map_points, &sensor);
        stats.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(stats)
    }
}

/// Interleaves the low 21 bits of each coordinate.
fn morton(c: [usize; 3]) -> u64 {
    fn spread(v: usize) -> u64 {
        let mut x = v as u64 & 0x1f_ffff;
        x = (x | x << 32) & 0x1f_0000_0000_ffff;
        x = (x | x << 16) & 0x1f_0000_ff00_00ff;
        x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
        x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
        x = (x | x << 2) & 0x1249_2492_4924_9249;
        x
    }
    spread(c[0]) | spread(c[1]) << 1 | spread(c[2]) << 2
}

/// [`bump_hits`] for a writer with exclusive access to the grid.
#[inline]
fn bump_hits_plain(cell: &VoxelCell, h_max: u8, threshold: u8) -> bool {
    let h = cell.hits.load(Ordering::Relaxed);
    if h >= h_max {
        return false;
    }
    cell.hits.store(h + 1, Ordering::Relaxed);
    if h + 1 >= threshold {
        cell.sign.store(Sign::Occupied as u8, Ordering::Relaxed);
    }
    true
}

/// Saturating increment; marks the voxel occupied once it reaches `threshold`.
#[inline]
fn bump_hits(cell: &VoxelCell, h_max: u8, threshold: u8) -> bool {
    let mut h = cell.hits.load(Ordering::Relaxed);
    loop {
        if h >= h_max {
            return false;
        }
        match cell
            .hits
            .compare_exchange_weak(h, h + 1, Ordering::Relaxed, Ordering::Relaxed)
        {
            Ok(_) => {
                if h + 1 >= threshold {
                    cell.sign.store(Sign::Occupied as u8, Ordering::Relaxed);
                }
                return true;
            }
            Err(cur) => h = cur,
        }
    }
}

/// One-off point integration; builds a fresh [`Integrator`] each call.
pub fn integrate_point(
    grid: &VoxelGrid,
    bank: &KernelBank,
    p_map: &Point3<f64>,
    sensor: &Point3<f64>,
    params: &IntegrationParams,
) -> Result<PointOutcome> {
    Ok(Integrator::new(grid, bank, *params, 1)?.integrate_point(p_map, sensor))
}

pub fn integrate_frame(
    grid: &VoxelGrid,
    bank: &KernelBank,
    scan: &ScanFrame,
    params: &IntegrationParams,
    threads: usize,
) -> Result<FrameStats> {
    Integrator::new(grid, bank, *params, threads)?.integrate_frame(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Voxel;
    use crate::kernels::KernelParams;
    use crate::motion::Pose;
    use nalgebra::Vector3;

    fn bank(rs: usize) -> KernelBank {
        KernelBank::new(KernelParams { shadow_radius: rs, ..Default::default() }).unwrap()
    }

    fn snapshot(g: &VoxelGrid) -> Vec<Voxel> {
        g.voxels().collect()
    }

    #[test]
    fn morton_interleaves_bits() {
        assert_eq!(morton([1, 0, 0]), 1);
        assert_eq!(morton([0, 1, 0]), 2);
        assert_eq!(morton([0, 0, 1]), 4);
        assert_eq!(morton([3, 3, 3]), 63);
        assert_eq!(morton([0x1f_ffff, 0, 0]), 0x1249_2492_4924_9249);
    }

    #[test]
    fn single_point_stamps_distance_field() {
        let grid = VoxelGrid::new([41, 41, 41], 1.0, Point3::origin()).unwrap();
        let bank = bank(1);
        let params = IntegrationParams { threshold: 1, ..Default::default() };
        let out = integrate_point(
            &grid,
            &bank,
            &Point3::new(20.5, 20.5, 20.5),
            &Point3::new(0.5, 20.5, 20.5),
            &params,
        )
        .unwrap();
        assert!(matches!(out, PointOutcome::Applied { .. }));
        assert_eq!(grid.voxel([20, 20, 20]).distance(), 0);
        assert_eq!(grid.voxel([23, 20, 20]).distance(), 3);
        assert_eq!(grid.voxel([20, 17, 20]).distance(), 3);
        assert_eq!(grid.voxel([21, 22, 20]).distance(), 3); // ceil(sqrt 5)
        assert_eq!(grid.voxel([30, 30, 30]).distance(), 18);
        assert!(!grid.voxel([31, 20, 20]).is_observed());
        assert!(grid.voxel([20, 20, 20]).is_occupied());
        assert!(grid.voxel([21, 20, 20]).is_occupied()); // behind the hit
        assert!(!grid.voxel([19, 20, 20]).is_occupied()); // in front of it
        assert_eq!(grid.signed_distance([23, 20, 20]), Some(3.0));
    }

    #[test]
    fn repeated_point_only_changes_hits() {
        let grid = VoxelGrid::new([41, 41, 41], 0.1, Point3::origin()).unwrap();
        let bank = bank(2);
        let integ = Integrator::new(&grid, &bank, IntegrationParams::default(), 1).unwrap();
        let p = Point3::new(2.05, 2.05, 2.05);
        let s = Point3::new(0.3, 0.7, 1.1);
        integ.integrate_point(&p, &s);
        let once = snapshot(&grid);
        integ.integrate_point(&p, &s);
        let twice = snapshot(&grid);
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(a.mask, b.mask);
            if a.hits > 0 {
                assert_eq!(b.hits, a.hits + 1);
                assert_eq!(b.sign, Sign::Occupied);
            } else {
                assert_eq!(b.hits, 0);
            }
        }
    }

    #[test]
    fn boundary_neighborhood_is_discarded() {
        let grid = VoxelGrid::new([41, 41, 41], 1.0, Point3::origin()).unwrap();
        let bank = bank(1);
        let integ = Integrator::new(&grid, &bank, IntegrationParams::default(), 1).unwrap();
        let before = snapshot(&grid);
        // voxel 9 has a neighborhood reaching index -1
        let out = integ.integrate_point(&Point3::new(9.5, 20.5, 20.5), &Point3::new(30.5, 20.5, 20.5));
        assert_eq!(out, PointOutcome::Discarded);
        let out = integ.integrate_point(&Point3::new(20.5, 20.5, 31.5), &Point3::new(20.5, 20.5, 10.5));
        assert_eq!(out, PointOutcome::Discarded);
        assert_eq!(before, snapshot(&grid));
        // voxel 10 and 30 are the extreme valid centers
        assert!(matches!(
            integ.integrate_point(&Point3::new(10.5, 30.5, 20.5), &Point3::new(20.5, 20.5, 20.5)),
            PointOutcome::Applied { .. }
        ));
    }

    #[test]
    fn return_at_sensor_is_discarded() {
        let grid = VoxelGrid::new([41, 41, 41], 1.0, Point3::origin()).unwrap();
        let bank = bank(1);
        let integ = Integrator::new(&grid, &bank, IntegrationParams::default(), 1).unwrap();
        let p = Point3::new(20.5, 20.5, 20.5);
        assert_eq!(integ.integrate_point(&p, &(p + Vector3::new(0.5, 0.0, 0.0))), PointOutcome::Discarded);
    }

    #[test]
    fn empty_frame_is_noop() {
        let grid = VoxelGrid::new([21, 21, 21], 1.0, Point3::origin()).unwrap();
        let bank = bank(1);
        let stats = integrate_frame(
            &grid,
            &bank,
            &ScanFrame::new(vec![], Pose::identity()),
            &IntegrationParams::default(),
            1,
        )
        .unwrap();
        assert_eq!(stats, FrameStats::default());
    }

    #[test]
    fn invalid_params() {
        let grid = VoxelGrid::new([21, 21, 21], 1.0, Point3::origin()).unwrap();
        let bank = bank(1);
        for p in [
            IntegrationParams { threshold: 0, ..Default::default() },
            IntegrationParams { h_max: 3, threshold: 4, ..Default::default() },
            IntegrationParams { downsample: 0, ..Default::default() },
        ] {
            assert!(matches!(Integrator::new(&grid, &bank, p, 1), Err(Error::Config(_))));
        }
        assert!(Integrator::new(&grid, &bank, IntegrationParams::default(), 0).is_err());
    }

    #[test]
    fn hits_saturate_at_h_max() {
        let grid = VoxelGrid::new([21, 21, 21], 1.0, Point3::origin()).unwrap();
        let bank = bank(0);
        let params = IntegrationParams { h_max: 3, threshold: 2, ..Default::default() };
        let integ = Integrator::new(&grid, &bank, params, 1).unwrap();
        let p = Point3::new(10.5, 10.5, 10.5);
        let s = Point3::new(0.5, 10.5, 10.5);
        integ.integrate_point(&p, &s);
        assert_eq!(grid.voxel([10, 10, 10]).hits, 1);
        assert_eq!(grid.voxel([10, 10, 10]).sign, Sign::Free);
        for _ in 0..5 {
            integ.integrate_point(&p, &s);
        }
        let v = grid.voxel([10, 10, 10]);
        assert_eq!(v.hits, 3);
        assert_eq!(v.sign, Sign::Occupied);
        assert_eq!(integ.integrate_point(&p, &s), PointOutcome::Applied { voxels_written: 0 });
    }

    #[test]
    fn downsampling_and_first_return() {
        let grid = VoxelGrid::new([41, 41, 41], 1.0, Point3::origin()).unwrap();
        let bank = bank(1);
        let pts = [Point3::new(20.2, 20.5, 20.5), Point3::new(20.7, 20.5, 20.5), Point3::new(21.5, 20.5, 20.5)];
        let pose = Pose::translation(0.5, 20.0, 20.0);
        let local: Vec<_> = pts.iter().map(|p| pose.inverse() * p).collect();
        let scan = ScanFrame::new(local, pose);

        let first = IntegrationParams { first_return_per_voxel: true, ..Default::default() };
        let s = integrate_frame(&grid, &bank, &scan, &first, 1).unwrap();
        assert_eq!((s.points_in, s.points_discarded), (3, 1));

        let ds = IntegrationParams { downsample: 2, ..Default::default() };
        let s = integrate_frame(&grid, &bank, &scan, &ds, 1).unwrap();
        assert_eq!((s.points_in, s.points_discarded), (2, 0));
    }
}
