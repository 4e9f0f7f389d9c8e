//! Brute-force reference field for small scenes.
//!
//! Recomputes what the bitmask integrator should produce using plain integer
//! minima and direct geometric shadow tests, without touching the kernel
//! bank or any mask arithmetic.

use std::fmt;

use nalgebra::{Point3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::integrator::IntegrationParams;
use crate::kernels::{bin_direction, bin_index, KernelParams, ShadowModel};

/// Largest scene the oracle accepts, in voxels.
pub const MAX_ORACLE_VOXELS: usize = 64 * 64 * 64;

/// Grid geometry shared by the oracle and the fast path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: Point3<f64>,
}

impl GridGeometry {
    pub fn of(grid: &VoxelGrid) -> Self {
        GridGeometry {
            dims: grid.dims(),
            voxel_size: grid.voxel_size(),
            origin: grid.origin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleField {
    pub geometry: GridGeometry,
    /// Distance in voxel cells, 32 where no hit is within reach.
    pub distance: Vec<u32>,
    pub hits: Vec<u32>,
    pub occupied: Vec<bool>,
}

fn ceil_sqrt(n: i64) -> u32 {
    let mut k = 0i64;
    while k * k < n {
        k += 1;
    }
    k as u32
}

/// Field obtained by applying every `(map point, ray direction)` hit.
///
/// The ray direction is quantized to its bin center, as the fast path does.
pub fn brute_force_field(
    hits: &[(Point3<f64>, Vector3<f64>)],
    geometry: GridGeometry,
    kernel: &KernelParams,
    params: &IntegrationParams,
) -> Result<OracleField> {
    let [nx, ny, nz] = geometry.dims;
    let total = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .filter(|&v| v <= MAX_ORACLE_VOXELS)
        .ok_or_else(|| {
            Error::Config(format!("oracle scene {:?} exceeds {MAX_ORACLE_VOXELS} voxels", geometry.dims))
        })?;
    let r = (kernel.size / 2) as i64;
    let rs = kernel.shadow_radius as f64;

    let mut distance = vec![32u32; total];
    let mut count = vec![0u32; total];

    for (p, d) in hits {
        if d.norm() < geometry.voxel_size {
            continue;
        }
        let mut c = [0i64; 3];
        let mut inside = true;
        for a in 0..3 {
            let f = ((p[a] - geometry.origin[a]) / geometry.voxel_size).floor();
            if !(f >= 0.0 && f < geometry.dims[a] as f64) {
                inside = false;
                break;
            }
            c[a] = f as i64;
            if c[a] - r < 0 || c[a] + r >= geometry.dims[a] as i64 {
                inside = false;
                break;
            }
        }
        if !inside {
            continue;
        }
        let Ok((b_az, b_el)) = bin_index(d, kernel.bins_az, kernel.bins_el) else {
            continue;
        };
        let dir = bin_direction(b_az, b_el, kernel.bins_az, kernel.bins_el);

        for z in c[2] - r..=c[2] + r {
            for y in c[1] - r..=c[1] + r {
                for x in c[0] - r..=c[0] + r {
                    let o = [x - c[0], y - c[1], z - c[2]];
                    let n2 = o[0] * o[0] + o[1] * o[1] + o[2] * o[2];
                    let idx = (x as usize) + nx * ((y as usize) + ny * (z as usize));
                    distance[idx] = distance[idx].min(ceil_sqrt(n2));

                    let len = (n2 as f64).sqrt();
                    if len > rs {
                        continue;
                    }
                    let dot = o[0] as f64 * dir.x + o[1] as f64 * dir.y + o[2] as f64 * dir.z;
                    let shadowed = n2 == 0
                        || match kernel.shadow_model {
                            ShadowModel::Hemisphere => dot >= 0.0,
                            ShadowModel::Cone { half_angle_deg } => {
                                dot >= len * half_angle_deg.to_radians().cos()
                            }
                        };
                    if shadowed {
                        count[idx] += 1;
                    }
                }
            }
        }
    }

    let h_max = params.h_max as u32;
    let hits: Vec<u32> = count.into_iter().map(|c| c.min(h_max)).collect();
    let occupied = hits.iter().map(|&h| h >= params.threshold as u32).collect();
    Ok(OracleField {
        geometry,
        distance,
        hits,
        occupied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VoxelState {
    pub distance: u32,
    pub hits: u32,
    pub occupied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffEntry {
    pub voxel: [usize; 3],
    pub grid: VoxelState,
    pub oracle: VoxelState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub voxels_compared: usize,
    pub mismatches: Vec<DiffEntry>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mismatches.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diff report serializes")
    }
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} mismatching voxels out of {}",
            self.mismatches.len(),
            self.voxels_compared
        )?;
        for e in &self.mismatches {
            writeln!(
                f,
                "  {:?}: grid d={} h={} occ={} | oracle d={} h={} occ={}",
                e.voxel,
                e.grid.distance,
                e.grid.hits,
                e.grid.occupied,
                e.oracle.distance,
                e.oracle.hits,
                e.oracle.occupied
            )?;
        }
        Ok(())
    }
}

/// Voxel-by-voxel comparison of distance, hits and occupancy.
///
/// Panics if the grid and the oracle were built for different geometries.
pub fn compare(grid: &VoxelGrid, field: &OracleField) -> DiffReport {
    assert_eq!(
        GridGeometry::of(grid),
        field.geometry,
        "grid and oracle field have different geometry"
    );
    let mut mismatches = Vec::new();
    for (i, v) in grid.voxels().enumerate() {
        let g = VoxelState {
            distance: v.mask.count_ones(),
            hits: v.hits as u32,
            occupied: v.is_occupied(),
        };
        let o = VoxelState {
            distance: field.distance[i],
            hits: field.hits[i],
            occupied: field.occupied[i],
        };
        if g != o {
            mismatches.push(DiffEntry {
                voxel: grid.coords(i),
                grid: g,
                oracle: o,
            });
        }
    }
    DiffReport {
        voxels_compared: grid.len(),
        mismatches,
    }
}
