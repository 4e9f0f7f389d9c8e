//! Voxel exports: CSV rows and PCD clouds of voxel centers.

use std::io::Write;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::grid::{signed_distance_of, VoxelGrid};

pub const CSV_HEADER: &str = "x,y,z,sdf,hits,sign";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportSelection {
    OccupiedOnly,
    Observed,
}

fn selected(grid: &VoxelGrid, include: ExportSelection) -> impl Iterator<Item = (usize, crate::grid::Voxel)> + '_ {
    grid.voxels().enumerate().filter(move |(_, v)| match include {
        ExportSelection::Observed => v.is_observed(),
        ExportSelection::OccupiedOnly => v.is_observed() && v.is_occupied(),
    })
}

/// One row per selected voxel; returns the row count.
pub fn write_csv<W: Write>(w: &mut W, grid: &VoxelGrid, include: ExportSelection) -> std::io::Result<usize> {
    writeln!(w, "{CSV_HEADER}")?;
    let mut rows = 0;
    for (i, v) in selected(grid, include) {
        let c = grid.voxel_center(grid.coords(i));
        let sdf = signed_distance_of(&v, grid.voxel_size()).unwrap();
        writeln!(w, "{},{},{},{},{},{}", c.x, c.y, c.z, sdf, v.hits, v.sign as u8)?;
        rows += 1;
    }
    Ok(rows)
}

pub fn voxel_centers(grid: &VoxelGrid, include: ExportSelection) -> Vec<Point3<f64>> {
    selected(grid, include)
        .map(|(i, _)| grid.voxel_center(grid.coords(i)))
        .collect()
}
