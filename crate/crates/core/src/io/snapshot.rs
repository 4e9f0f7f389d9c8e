//! `DBTSDF01` grid snapshots.
//!
//! Layout (little-endian): 8-byte magic, `nx ny nz` as u32, voxel size as
//! f64, origin as three f64, `h_max` and `threshold` as u8, six zero bytes,
//! then one 8-byte record per voxel in linear-index order.

use std::io::{Read, Write};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::grid::{Voxel, VoxelGrid, VOXEL_BYTES};

pub const MAGIC: &[u8; 8] = b"DBTSDF01";
pub const HEADER_BYTES: usize = 8 + 12 + 8 + 24 + 2 + 6;

/// Integration parameters stored alongside the voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotMeta {
    pub h_max: u8,
    pub threshold: u8,
}

pub fn write<W: Write>(w: &mut W, grid: &VoxelGrid, meta: SnapshotMeta) -> Result<()> {
    let to_io = |e| Error::io("<snapshot>", e);
    let mut header = Vec::with_capacity(HEADER_BYTES);
    header.extend_from_slice(MAGIC);
    for n in grid.dims() {
        let n = u32::try_from(n).map_err(|_| Error::Config(format!("dimension {n} exceeds u32")))?;
        header.extend_from_slice(&n.to_le_bytes());
    }
    header.extend_from_slice(&grid.voxel_size().to_le_bytes());
    for c in grid.origin().iter() {
        header.extend_from_slice(&c.to_le_bytes());
    }
    header.push(meta.h_max);
    header.push(meta.threshold);
    header.extend_from_slice(&[0; 6]);
    debug_assert_eq!(header.len(), HEADER_BYTES);
    w.write_all(&header).map_err(to_io)?;

    let mut buf = Vec::with_capacity(1 << 16);
    for v in grid.voxels() {
        buf.extend_from_slice(&v.to_bytes());
        if buf.len() >= 1 << 16 {
            w.write_all(&buf).map_err(to_io)?;
            buf.clear();
        }
    }
    w.write_all(&buf).map_err(to_io)
}

pub fn read<R: Read>(r: &mut R) -> Result<(VoxelGrid, SnapshotMeta)> {
    read_sized(r, None)
}

/// Like [`read`], but checks the payload size against `file_len` before
/// allocating the grid.
pub fn read_sized<R: Read>(r: &mut R, file_len: Option<u64>) -> Result<(VoxelGrid, SnapshotMeta)> {
    let mut header = [0u8; HEADER_BYTES];
    r.read_exact(&mut header)
        .map_err(|_| Error::Corruption("snapshot shorter than its header".into()))?;
    if &header[..8] != MAGIC {
        return Err(Error::Corruption(format!(
            "bad snapshot magic {:?}",
            String::from_utf8_lossy(&header[..8])
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let dims = [u32_at(8), u32_at(12), u32_at(16)];
    let voxel_size = f64_at(20);
    let origin = Point3::new(f64_at(28), f64_at(36), f64_at(44));
    let meta = SnapshotMeta {
        h_max: header[52],
        threshold: header[53],
    };
    if dims.contains(&0) {
        return Err(Error::Corruption(format!("snapshot dimensions {dims:?} contain zero")));
    }
    if header[54..60].iter().any(|&b| b != 0) {
        return Err(Error::Corruption("snapshot reserved header bytes are not zero".into()));
    }
    if let Some(len) = file_len {
        let expected = crate::grid::payload_bytes(dims).map(|p| p + HEADER_BYTES as u64);
        if expected != Some(len) {
            return Err(Error::Corruption(format!(
                "snapshot of {len} bytes does not match header dimensions {dims:?}"
            )));
        }
    }
    let mut grid = VoxelGrid::new(dims, voxel_size, origin).map_err(|e| match e {
        Error::Config(m) | Error::Resource(m) => Error::Corruption(format!("snapshot header: {m}")),
        other => other,
    })?;
    let mut buf = vec![0u8; VOXEL_BYTES * 8192];
    let total = grid.len();
    let mut i = 0;
    while i < total {
        let n = (total - i).min(8192);
        let chunk = &mut buf[..n * VOXEL_BYTES];
        r.read_exact(chunk).map_err(|_| {
            Error::Corruption(format!(
                "snapshot truncated: {total} voxels expected, payload ends near voxel {i} (byte {})",
                HEADER_BYTES + i * VOXEL_BYTES
            ))
        })?;
        for (k, rec) in chunk.chunks_exact(VOXEL_BYTES).enumerate() {
            let v = Voxel::from_bytes(rec.try_into().unwrap()).map_err(|e| {
                Error::Corruption(format!("voxel {} (byte {}): {e}", i + k, HEADER_BYTES + (i + k) * VOXEL_BYTES))
            })?;
            grid.set_voxel(i + k, v);
        }
        i += n;
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io("<snapshot>", e))? != 0 {
        return Err(Error::Corruption("trailing bytes after snapshot payload".into()));
    }
    Ok((grid, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{run_mask, Sign};
    use rand::{Rng, SeedableRng};

    fn random_grid() -> VoxelGrid {
        let mut g = VoxelGrid::new([7, 5, 3], 0.125, Point3::new(-1.0, 2.5, 0.3)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for i in 0..g.len() {
            let sign = if rng.gen() { Sign::Occupied } else { Sign::Free };
            g.set_voxel(i, Voxel { mask: run_mask(rng.gen_range(0..=32)), sign, hits: rng.gen() });
        }
        g
    }

    fn bytes_of(g: &VoxelGrid) -> Vec<u8> {
        let mut b = Vec::new();
        write(&mut b, g, SnapshotMeta { h_max: 255, threshold: 2 }).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let g = random_grid();
        let b = bytes_of(&g);
        assert_eq!(b.len(), HEADER_BYTES + g.len() * 8);
        let (back, meta) = read(&mut b.as_slice()).unwrap();
        assert_eq!(meta, SnapshotMeta { h_max: 255, threshold: 2 });
        assert_eq!(back.dims(), g.dims());
        assert_eq!(back.origin(), g.origin());
        assert_eq!(back.voxel_size(), g.voxel_size());
        assert!(back.voxels().eq(g.voxels()));
        assert_eq!(bytes_of(&back), b);
    }

    #[test]
    fn corrupt_inputs() {
        let b = bytes_of(&random_grid());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read(&mut bad.as_slice()), Err(Error::Corruption(_))));
        let mut zero = b.clone();
        zero[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read(&mut zero.as_slice()), Err(Error::Corruption(_))));
        assert!(matches!(read(&mut &b[..b.len() - 4]), Err(Error::Corruption(_))));
        assert!(matches!(read(&mut &b[..20]), Err(Error::Corruption(_))));
        let mut huge = b.clone();
        huge[8..20].copy_from_slice(&[0xFF; 12]);
        assert!(matches!(read(&mut huge.as_slice()), Err(Error::Corruption(_))));
        let mut big = b.clone();
        big[8..12].copy_from_slice(&1000u32.to_le_bytes());
        let len = big.len() as u64;
        assert!(matches!(read_sized(&mut big.as_slice(), Some(len)), Err(Error::Corruption(_))));
        let mut bad_rec = b.clone();
        bad_rec[HEADER_BYTES] = 0b101;
        bad_rec[HEADER_BYTES + 1..HEADER_BYTES + 4].fill(0);
        assert!(matches!(read(&mut bad_rec.as_slice()), Err(Error::Corruption(_))));
        let mut trailing = b;
        trailing.push(0);
        assert!(matches!(read(&mut trailing.as_slice()), Err(Error::Corruption(_))));
    }
}
