//! Dense voxel grid storage.
//!
//! Every voxel is an 8-byte record holding a distance mask, a sign flag and a
//! saturating hit counter. The distance mask is a contiguous run of low bits
//! whose population count is the truncated distance in voxel cells, so
//! intersecting two masks with `&` yields the smaller distance.

use std::sync::atomic::{AtomicU32, AtomicU8, Ordering};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Mask of a voxel that has never been touched by a kernel.
pub const FRESH_MASK: u32 = u32::MAX;

/// Bytes of payload per voxel.
pub const VOXEL_BYTES: usize = 8;

/// Default ceiling on a single grid allocation (8 GiB).
pub const DEFAULT_MEMORY_CAP: u64 = 8 << 30;

/// Low-bit run mask of length `k` (`k` is clamped to 32).
#[inline]
pub fn run_mask(k: u32) -> u32 {
    match k {
        0 => 0,
        k => u32::MAX >> (32 - k.min(32)),
    }
}

/// True when `mask` is of the form `0…01…1`.
#[inline]
pub fn is_run_mask(mask: u32) -> bool {
    mask & mask.wrapping_add(1) == 0
}

/// Number of voxel cells encoded by `mask`.
pub fn decode_distance(mask: u32) -> Result<u32> {
    if !is_run_mask(mask) {
        return Err(Error::Corruption(format!(
            "distance mask {mask:#010x} is not a contiguous low-bit run"
        )));
    }
    Ok(mask.count_ones())
}

/// Occupancy flag. The numeric values are the on-disk encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Sign {
    Occupied = 0,
    Free = 1,
}

impl Sign {
    pub fn from_byte(b: u8) -> Option<Sign> {
        match b {
            0 => Some(Sign::Occupied),
            1 => Some(Sign::Free),
            _ => None,
        }
    }
}

/// Plain copy of one voxel record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Voxel {
    pub mask: u32,
    pub sign: Sign,
    pub hits: u8,
}

impl Voxel {
    pub const FRESH: Voxel = Voxel {
        mask: FRESH_MASK,
        sign: Sign::Free,
        hits: 0,
    };

    /// Truncated distance in voxel cells.
    #[inline]
    pub fn distance(&self) -> u32 {
        debug_assert!(is_run_mask(self.mask), "corrupted mask {:#x}", self.mask);
        self.mask.count_ones()
    }

    #[inline]
    pub fn is_observed(&self) -> bool {
        !(self.mask == FRESH_MASK && self.hits == 0)
    }

    #[inline]
    pub fn is_occupied(&self) -> bool {
        self.sign == Sign::Occupied
    }

    /// Record layout: mask (LE u32), sign, hits, two reserved zero bytes.
    pub fn to_bytes(&self) -> [u8; VOXEL_BYTES] {
        let m = self.mask.to_le_bytes();
        [m[0], m[1], m[2], m[3], self.sign as u8, self.hits, 0, 0]
    }

    pub fn from_bytes(b: &[u8; VOXEL_BYTES]) -> Result<Voxel> {
        let mask = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !is_run_mask(mask) {
            return Err(Error::Corruption(format!("voxel mask {mask:#010x} is not a run")));
        }
        let sign = Sign::from_byte(b[4])
            .ok_or_else(|| Error::Corruption(format!("invalid sign byte {}", b[4])))?;
        if b[6] != 0 || b[7] != 0 {
            return Err(Error::Corruption("reserved voxel bytes are not zero".into()));
        }
        Ok(Voxel {
            mask,
            sign,
            hits: b[5],
        })
    }
}

/// Shared-mutable voxel record. Same 8-byte footprint as [`Voxel::to_bytes`].
#[repr(C)]
#[derive(Debug)]
pub struct VoxelCell {
    pub(crate) mask: AtomicU32,
    pub(crate) sign: AtomicU8,
    pub(crate) hits: AtomicU8,
    _reserved: [u8; 2],
}

const _: () = assert!(std::mem::size_of::<VoxelCell>() == VOXEL_BYTES);

impl VoxelCell {
    fn new(v: Voxel) -> Self {
        VoxelCell {
            mask: AtomicU32::new(v.mask),
            sign: AtomicU8::new(v.sign as u8),
            hits: AtomicU8::new(v.hits),
            _reserved: [0; 2],
        }
    }

    #[inline]
    pub fn load(&self) -> Voxel {
        let sign = match self.sign.load(Ordering::Relaxed) {
            0 => Sign::Occupied,
            _ => Sign::Free,
        };
        Voxel {
            mask: self.mask.load(Ordering::Relaxed),
            sign,
            hits: self.hits.load(Ordering::Relaxed),
        }
    }

    #[inline]
    pub(crate) fn store(&self, v: Voxel) {
        self.mask.store(v.mask, Ordering::Relaxed);
        self.sign.store(v.sign as u8, Ordering::Relaxed);
        self.hits.store(v.hits, Ordering::Relaxed);
    }
}

/// Dense, fixed-size, axis-aligned voxel grid.
///
/// Linear index is `ix + nx * (iy + ny * iz)`. `origin` is the world
/// position of the minimum corner of voxel `(0, 0, 0)`.
#[derive(Debug)]
pub struct VoxelGrid {
    dims: [usize; 3],
    voxel_size: f64,
    origin: Point3<f64>,
    cells: Vec<VoxelCell>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], voxel_size: f64, origin: Point3<f64>) -> Result<Self> {
        Self::with_memory_cap(dims, voxel_size, origin, DEFAULT_MEMORY_CAP)
    }

    pub fn with_memory_cap(
        dims: [usize; 3],
        voxel_size: f64,
        origin: Point3<f64>,
        cap_bytes: u64,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Config(format!("grid dimensions must be >= 1, got {dims:?}")));
        }
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::Config(format!("voxel size must be > 0, got {voxel_size}")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        let bytes = payload_bytes(dims)
            .ok_or_else(|| Error::Resource(format!("grid {dims:?} overflows the address space")))?;
        if bytes > cap_bytes {
            return Err(Error::Resource(format!(
                "grid {dims:?} needs {bytes} bytes, above the cap of {cap_bytes}"
            )));
        }
        let count = dims[0] * dims[1] * dims[2];
        let mut cells = Vec::new();
        cells
            .try_reserve_exact(count)
            .map_err(|e| Error::Resource(format!("cannot allocate {bytes} bytes: {e}")))?;
        cells.extend((0..count).map(|_| VoxelCell::new(Voxel::FRESH)));
        Ok(VoxelGrid {
            dims,
            voxel_size,
            origin,
            cells,
        })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    #[inline]
    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Measured voxel payload in bytes.
    pub fn memory_bytes(&self) -> u64 {
        std::mem::size_of_val(self.cells.as_slice()) as u64
    }

    /// Voxel containing `p`, or `None` when `p` lies outside the grid.
    pub fn world_to_voxel(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            // NaN fails both comparisons
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    #[inline]
    pub fn linear_index(&self, [ix, iy, iz]: [usize; 3]) -> usize {
        assert!(
            ix < self.dims[0] && iy < self.dims[1] && iz < self.dims[2],
            "voxel ({ix}, {iy}, {iz}) outside grid {:?}",
            self.dims
        );
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    #[inline]
    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [linear % nx, (linear / nx) % ny, linear / (nx * ny)]
    }

    pub fn voxel_center(&self, [ix, iy, iz]: [usize; 3]) -> Point3<f64> {
        self.origin
            + Vector3::new(ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5) * self.voxel_size
    }

    #[inline]
    pub fn voxel(&self, idx: [usize; 3]) -> Voxel {
        self.cells[self.linear_index(idx)].load()
    }

    #[inline]
    pub fn voxel_at(&self, linear: usize) -> Voxel {
        self.cells[linear].load()
    }

    /// Overwrites a voxel record. Used when loading snapshots.
    pub fn set_voxel(&mut self, linear: usize, v: Voxel) {
        self.cells[linear].store(v);
    }

    #[inline]
    pub(crate) fn cells(&self) -> &[VoxelCell] {
        &self.cells
    }

    pub fn voxels(&self) -> impl Iterator<Item = Voxel> + '_ {
        self.cells.iter().map(VoxelCell::load)
    }

    /// Signed distance in meters, negative inside occupied space.
    /// `None` for voxels never touched by a kernel.
    ///
    /// Panics if `idx` is outside the grid.
    pub fn signed_distance(&self, idx: [usize; 3]) -> Option<f64> {
        signed_distance_of(&self.voxel(idx), self.voxel_size)
    }
}

/// Signed distance of a single record at the given voxel size.
#[inline]
pub fn signed_distance_of(v: &Voxel, voxel_size: f64) -> Option<f64> {
    if !v.is_observed() {
        return None;
    }
    let d = v.distance() as f64 * voxel_size;
    Some(match v.sign {
        Sign::Occupied => -d,
        Sign::Free => d,
    })
}

/// `Nx * Ny * Nz * 8`, or `None` on overflow.
pub fn payload_bytes(dims: [usize; 3]) -> Option<u64> {
    (dims[0] as u64)
        .checked_mul(dims[1] as u64)?
        .checked_mul(dims[2] as u64)?
        .checked_mul(VOXEL_BYTES as u64)
}
