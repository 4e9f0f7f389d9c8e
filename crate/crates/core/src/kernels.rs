//! Direction bins, the shared distance-mask kernel and per-bin shadow masks.
//!
//! The distance mask of an offset only depends on its length, so a single
//! `K³` table of masks is shared by every bin. What differs per bin is the
//! shadow region: the set of offsets behind the contact voxel that collect
//! occupancy evidence. Each shadow region is stored as a `K³`-bit bitset.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::run_mask;

pub const DEFAULT_KERNEL_SIZE: usize = 21;
pub const DEFAULT_BINS: usize = 40;
pub const DEFAULT_CONE_HALF_ANGLE_DEG: f64 = 30.0;
/// Physical radius used to derive the default shadow radius in voxels.
pub const DEFAULT_SHADOW_RADIUS_M: f64 = 0.05;

/// Shape of the occupancy region stamped behind each return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum ShadowModel {
    #[default]
    Hemisphere,
    Cone { half_angle_deg: f64 },
}


/// `max(1, round(0.05 m / voxel_size))`, capped at the kernel half extent.
pub fn default_shadow_radius(voxel_size: f64, half_extent: usize) -> usize {
    let r = (DEFAULT_SHADOW_RADIUS_M / voxel_size).round();
    let r = if r.is_finite() { r.max(1.0) as usize } else { 1 };
    r.min(half_extent)
}

/// Azimuth/elevation bin of a direction `p` (need not be normalized).
pub fn bin_index(p: &Vector3<f64>, bins_az: usize, bins_el: usize) -> Result<(usize, usize)> {
    let norm = p.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidDirection(format!(
            "cannot bin direction ({}, {}, {})",
            p.x, p.y, p.z
        )));
    }
    let mut az = p.y.atan2(p.x);
    if az < 0.0 {
        az += TAU;
    }
    let el = (p.z / norm).clamp(-1.0, 1.0).asin();
    let b_az = ((az / TAU) * bins_az as f64).floor() as usize;
    let b_el = (((el + FRAC_PI_2) / PI) * bins_el as f64).floor() as usize;
    Ok((b_az.min(bins_az - 1), b_el.min(bins_el - 1)))
}

/// Unit vector through the center of bin `(b_az, b_el)`.
///
/// Panics if either index is out of range.
pub fn bin_direction(b_az: usize, b_el: usize, bins_az: usize, bins_el: usize) -> Vector3<f64> {
    assert!(
        b_az < bins_az && b_el < bins_el,
        "bin ({b_az}, {b_el}) outside {bins_az}x{bins_el}"
    );
    let a = (b_az as f64 + 0.5) * TAU / bins_az as f64;
    let e = (b_el as f64 + 0.5) * PI / bins_el as f64 - FRAC_PI_2;
    Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
}

/// Distance mask for an integer voxel offset: a run of `ceil(|o|)` bits.
pub fn make_distance_mask(o: [i32; 3]) -> u32 {
    let r2 = o.iter().map(|&c| (c as i64) * (c as i64)).sum::<i64>();
    if r2 == 0 {
        return 0;
    }
    let bits = (r2 as f64).sqrt().ceil() as u32;
    run_mask(bits)
}

/// Offsets inside the cube of half extent `half_extent` that belong to the
/// shadow region for direction `d`.
///
/// Offsets are listed in kernel order (x fastest, then y, then z).
pub fn build_shadow_mask(
    d: &Vector3<f64>,
    shadow_radius: usize,
    half_extent: usize,
    model: ShadowModel,
) -> Result<Vec<[i32; 3]>> {
    if shadow_radius > half_extent {
        return Err(Error::Config(format!(
            "shadow radius {shadow_radius} exceeds kernel half extent {half_extent}"
        )));
    }
    let cos_half = match model {
        ShadowModel::Hemisphere => None,
        ShadowModel::Cone { half_angle_deg } => {
            if !(half_angle_deg > 0.0 && half_angle_deg <= 180.0) {
                return Err(Error::Config(format!(
                    "cone half angle must be in (0, 180] degrees, got {half_angle_deg}"
                )));
            }
            Some(half_angle_deg.to_radians().cos())
        }
    };
    let r = half_extent as i32;
    let rs2 = (shadow_radius * shadow_radius) as i32;
    let mut out = Vec::new();
    for z in -r..=r {
        for y in -r..=r {
            for x in -r..=r {
                let n2 = x * x + y * y + z * z;
                if n2 > rs2 {
                    continue;
                }
                let dot = x as f64 * d.x + y as f64 * d.y + z as f64 * d.z;
                let inside = n2 == 0
                    || match cos_half {
                        None => dot >= 0.0,
                        Some(c) => dot >= (n2 as f64).sqrt() * c,
                    };
                if inside {
                    out.push([x, y, z]);
                }
            }
        }
    }
    Ok(out)
}

/// Parameters that fully determine a [`KernelBank`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Kernel edge length in voxels; must be odd.
    pub size: usize,
    pub bins_az: usize,
    pub bins_el: usize,
    /// Shadow radius in voxels.
    pub shadow_radius: usize,
    pub shadow_model: ShadowModel,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            size: DEFAULT_KERNEL_SIZE,
            bins_az: DEFAULT_BINS,
            bins_el: DEFAULT_BINS,
            shadow_radius: 1,
            shadow_model: ShadowModel::Hemisphere,
        }
    }
}

impl KernelParams {
    pub fn half_extent(&self) -> usize {
        self.size / 2
    }
}

/// Precomputed kernels, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    params: KernelParams,
    distance_kernel: Vec<u32>,
    /// `bins * words_per_mask` words; bit `i` of a mask is kernel index `i`.
    shadow_bits: Vec<u64>,
    words_per_mask: usize,
    bin_dirs: Vec<Vector3<f64>>,
}

impl KernelBank {
    pub fn new(params: KernelParams) -> Result<Self> {
        let k = params.size;
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {k}")));
        }
        if params.bins_az == 0 || params.bins_el == 0 {
            return Err(Error::Config("bin counts must be >= 1".into()));
        }
        let half = params.half_extent();
        // distance masks saturate at 32 bits
        if (3.0f64).sqrt() * half as f64 > 32.0 {
            return Err(Error::Config(format!("kernel size {k} exceeds the 32-bit mask range")));
        }
        if params.shadow_radius > half {
            return Err(Error::Config(format!(
                "shadow radius {} exceeds kernel half extent {half}",
                params.shadow_radius
            )));
        }

        let volume = k * k * k;
        let mut distance_kernel = Vec::with_capacity(volume);
        for i in 0..volume {
            distance_kernel.push(make_distance_mask(offset_of(i, k)));
        }

        let bins = params.bins_az * params.bins_el;
        let words_per_mask = volume.div_ceil(64);
        let mut shadow_bits = vec![0u64; bins * words_per_mask];
        let mut bin_dirs = Vec::with_capacity(bins);
        for b_el in 0..params.bins_el {
            for b_az in 0..params.bins_az {
                let bin = bin_dirs.len();
                let d = bin_direction(b_az, b_el, params.bins_az, params.bins_el);
                let words = &mut shadow_bits[bin * words_per_mask..(bin + 1) * words_per_mask];
                for o in build_shadow_mask(&d, params.shadow_radius, half, params.shadow_model)? {
                    let i = index_of(o, k);
                    words[i / 64] |= 1 << (i % 64);
                }
                bin_dirs.push(d);
            }
        }

        Ok(KernelBank {
            params,
            distance_kernel,
            shadow_bits,
            words_per_mask,
            bin_dirs,
        })
    }

    #[inline]
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.params.size
    }

    #[inline]
    pub fn half_extent(&self) -> usize {
        self.params.half_extent()
    }

    #[inline]
    pub fn volume(&self) -> usize {
        self.distance_kernel.len()
    }

    #[inline]
    pub fn bin_count(&self) -> usize {
        self.bin_dirs.len()
    }

    /// Distance masks in kernel order.
    #[inline]
    pub fn distance_kernel(&self) -> &[u32] {
        &self.distance_kernel
    }

    /// Bin id for a ray direction; `b_el * bins_az + b_az`.
    pub fn select_bin(&self, d: &Vector3<f64>) -> Result<usize> {
        let (a, e) = bin_index(d, self.params.bins_az, self.params.bins_el)?;
        Ok(e * self.params.bins_az + a)
    }

    #[inline]
    pub fn bin_direction(&self, bin: usize) -> Vector3<f64> {
        self.bin_dirs[bin]
    }

    #[inline]
    pub fn shadow_words(&self, bin: usize) -> &[u64] {
        &self.shadow_bits[bin * self.words_per_mask..(bin + 1) * self.words_per_mask]
    }

    #[inline]
    pub fn in_shadow(&self, bin: usize, kernel_index: usize) -> bool {
        self.shadow_words(bin)[kernel_index / 64] >> (kernel_index % 64) & 1 == 1
    }

    /// Kernel indices of the shadow region of `bin`, ascending.
    pub fn shadow_indices(&self, bin: usize) -> impl Iterator<Item = usize> + '_ {
        self.shadow_words(bin)
            .iter()
            .enumerate()
            .flat_map(|(w, &word)| BitIter(word).map(move |b| w * 64 + b))
    }

    pub fn shadow_len(&self, bin: usize) -> usize {
        self.shadow_words(bin).iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    pub fn offset(&self, kernel_index: usize) -> [i32; 3] {
        offset_of(kernel_index, self.params.size)
    }

    #[inline]
    pub fn kernel_index(&self, o: [i32; 3]) -> usize {
        index_of(o, self.params.size)
    }

    /// Bytes held by the kernel tables.
    pub fn memory_bytes(&self) -> usize {
        self.distance_kernel.len() * 4 + self.shadow_bits.len() * 8 + self.bin_dirs.len() * 24
    }
}

struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}

#[inline]
fn offset_of(i: usize, k: usize) -> [i32; 3] {
    let r = (k / 2) as i32;
    [
        (i % k) as i32 - r,
        ((i / k) % k) as i32 - r,
        (i / (k * k)) as i32 - r,
    ]
}

#[inline]
fn index_of(o: [i32; 3], k: usize) -> usize {
    let r = (k / 2) as i32;
    let [x, y, z] = o.map(|c| (c + r) as usize);
    x + k * (y + k * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn bin_index_examples() {
        assert_eq!(bin_index(&Vector3::new(1.0, 0.0, 0.0), 40, 40).unwrap(), (0, 20));
        assert_eq!(bin_index(&Vector3::new(0.0, 0.0, 1.0), 40, 40).unwrap(), (0, 39));
        assert_eq!(bin_index(&Vector3::new(0.0, -1.0, 0.0), 40, 40).unwrap(), (30, 20));
        assert_eq!(bin_index(&Vector3::new(0.0, 0.0, -1.0), 40, 40).unwrap(), (0, 0));
        assert!(matches!(
            bin_index(&Vector3::zeros(), 40, 40),
            Err(Error::InvalidDirection(_))
        ));
        assert!(bin_index(&Vector3::new(f64::NAN, 0.0, 0.0), 40, 40).is_err());
    }

    #[test]
    fn azimuth_just_below_full_turn_stays_in_range() {
        let (a, _) = bin_index(&Vector3::new(1.0, -1e-300, 0.0), 40, 40).unwrap();
        assert_eq!(a, 39);
    }

    #[test]
    fn bin_direction_example() {
        let v = bin_direction(0, 20, 40, 40);
        let az = 4.5f64.to_radians();
        let el = 2.25f64.to_radians();
        let expect = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        assert!((v - expect).norm() < 1e-12);
    }

    #[test]
    fn bin_round_trip_all_bins() {
        for b_el in 0..40 {
            for b_az in 0..40 {
                let d = bin_direction(b_az, b_el, 40, 40);
                assert!((d.norm() - 1.0).abs() < 1e-12);
                assert_eq!(bin_index(&d, 40, 40).unwrap(), (b_az, b_el));
            }
        }
    }

    #[test]
    #[should_panic]
    fn bin_direction_out_of_range() {
        bin_direction(40, 0, 40, 40);
    }

    #[test]
    fn distance_mask_examples() {
        assert_eq!(make_distance_mask([0, 0, 0]), 0);
        assert_eq!(make_distance_mask([1, 0, 0]), 1);
        assert_eq!(make_distance_mask([1, 2, 0]), 7);
        assert_eq!(make_distance_mask([0, 0, -3]), 0b111);
        assert_eq!(make_distance_mask([10, 10, 10]).count_ones(), 18);
    }

    fn brute_hemisphere(d: Vector3<f64>, rs: i32) -> BTreeSet<[i32; 3]> {
        let mut s = BTreeSet::new();
        for x in -rs..=rs {
            for y in -rs..=rs {
                for z in -rs..=rs {
                    let n = ((x * x + y * y + z * z) as f64).sqrt();
                    let dot = x as f64 * d.x + y as f64 * d.y + z as f64 * d.z;
                    if n <= rs as f64 && dot >= 0.0 {
                        s.insert([x, y, z]);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn hemisphere_radius_one_along_x() {
        let d = Vector3::new(1.0, 0.0, 0.0);
        let got: BTreeSet<_> = build_shadow_mask(&d, 1, 10, ShadowModel::Hemisphere)
            .unwrap()
            .into_iter()
            .collect();
        let expect: BTreeSet<_> =
            [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                .into_iter()
                .collect();
        assert_eq!(got, expect);
        assert_eq!(got, brute_hemisphere(d, 1));
    }

    #[test]
    fn zero_radius_is_center_only() {
        for model in [ShadowModel::Hemisphere, ShadowModel::Cone { half_angle_deg: 30.0 }] {
            let d = bin_direction(7, 13, 40, 40);
            assert_eq!(build_shadow_mask(&d, 0, 10, model).unwrap(), vec![[0, 0, 0]]);
        }
    }

    #[test]
    fn cone_is_subset_of_hemisphere() {
        let d = Vector3::new(1.0, 0.0, 0.0);
        let hemi = brute_hemisphere(d, 2);
        let cone = build_shadow_mask(&d, 2, 10, ShadowModel::Cone { half_angle_deg: 45.0 }).unwrap();
        assert!(cone.contains(&[0, 0, 0]));
        assert!(cone.contains(&[2, 0, 0]));
        assert!(!cone.contains(&[0, 1, 0]));
        assert!(cone.iter().all(|o| hemi.contains(o)));
        assert!(cone.len() < hemi.len());
    }

    #[test]
    fn shadow_radius_beyond_kernel_is_config_error() {
        let d = Vector3::new(1.0, 0.0, 0.0);
        assert!(matches!(
            build_shadow_mask(&d, 11, 10, ShadowModel::Hemisphere),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_bank_shape() {
        let bank = KernelBank::new(KernelParams { shadow_radius: 3, ..Default::default() }).unwrap();
        assert_eq!(bank.bin_count(), 1600);
        assert_eq!(bank.volume(), 9261);
        assert_eq!(bank.distance_kernel()[bank.kernel_index([0, 0, 0])], 0);
        let max_bits = bank.distance_kernel().iter().map(|m| m.count_ones()).max().unwrap();
        assert_eq!(max_bits, 18);
        assert!(bank.memory_bytes() < 2_000_000);
        let center = bank.kernel_index([0, 0, 0]);
        for bin in 0..bank.bin_count() {
            assert!(bank.in_shadow(bin, center));
            for i in bank.shadow_indices(bin) {
                let [x, y, z] = bank.offset(i);
                assert!(x * x + y * y + z * z <= 9);
            }
        }
    }

    #[test]
    fn minimal_bank() {
        let bank = KernelBank::new(KernelParams {
            size: 3,
            bins_az: 1,
            bins_el: 1,
            shadow_radius: 1,
            shadow_model: ShadowModel::Hemisphere,
        })
        .unwrap();
        assert_eq!(bank.volume(), 27);
        assert_eq!(bank.distance_kernel()[13], 0);
        assert_eq!(bank.bin_count(), 1);
    }

    #[test]
    fn invalid_bank_params() {
        let even = KernelParams { size: 20, ..Default::default() };
        assert!(matches!(KernelBank::new(even), Err(Error::Config(_))));
        let no_bins = KernelParams { bins_az: 0, ..Default::default() };
        assert!(matches!(KernelBank::new(no_bins), Err(Error::Config(_))));
        let too_wide = KernelParams { shadow_radius: 11, ..Default::default() };
        assert!(matches!(KernelBank::new(too_wide), Err(Error::Config(_))));
    }

    #[test]
    fn distance_kernel_is_isotropic() {
        let bank = KernelBank::new(KernelParams::default()).unwrap();
        for i in 0..bank.volume() {
            let [x, y, z] = bank.offset(i);
            let m = bank.distance_kernel()[i];
            for p in [[x, y, z], [y, z, x], [z, x, y], [y, x, z], [x, z, y], [z, y, x]] {
                for s in 0..8 {
                    let q = [
                        if s & 1 == 0 { p[0] } else { -p[0] },
                        if s & 2 == 0 { p[1] } else { -p[1] },
                        if s & 4 == 0 { p[2] } else { -p[2] },
                    ];
                    assert_eq!(bank.distance_kernel()[bank.kernel_index(q)], m);
                }
            }
        }
    }

    #[test]
    fn hemisphere_reflection_symmetry() {
        for bin in (0..1600).step_by(7) {
            let d = bin_direction(bin % 40, bin / 40, 40, 40);
            let fwd: BTreeSet<_> = build_shadow_mask(&d, 4, 10, ShadowModel::Hemisphere)
                .unwrap()
                .into_iter()
                .map(|[x, y, z]| [-x, -y, -z])
                .collect();
            let back: BTreeSet<_> = build_shadow_mask(&-d, 4, 10, ShadowModel::Hemisphere)
                .unwrap()
                .into_iter()
                .collect();
            assert_eq!(fwd, back);
        }
    }

    #[test]
    fn bank_is_deterministic() {
        let p = KernelParams { shadow_radius: 2, ..Default::default() };
        assert_eq!(KernelBank::new(p).unwrap(), KernelBank::new(p).unwrap());
    }

    #[test]
    fn default_shadow_radius_heuristic() {
        assert_eq!(default_shadow_radius(0.05, 10), 1);
        assert_eq!(default_shadow_radius(0.3, 10), 1);
        assert_eq!(default_shadow_radius(0.01, 10), 5);
        assert_eq!(default_shadow_radius(0.001, 10), 10);
    }
}
