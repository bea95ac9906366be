//! Volumetric scans: data model, cropping, resampling, synthetic phantoms and
//! a small MetaImage-style file format.
//!
//! Voxels are stored x-fastest. Positions are world coordinates in mm and
//! refer to voxel centers: voxel `(i, j, k)` sits at `origin + (i, j, k) * spacing`.

mod io;
mod phantom;
mod resample;

pub use io::{read_volume, write_volume, ElementType};
pub use phantom::{make_phantom, PhantomSpec};
pub use resample::{resample_grid, resample_slice, resample_to_spacing, resample_volume, Slice2D};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A 3D scalar grid with physical spacing and origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    spacing: [T; 3],
    origin: [T; 3],
    voxels: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(dims: [usize; 3], spacing: [T; 3], origin: [T; 3], voxels: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("dims", format!("{dims:?} has a zero axis")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > T::zero())) {
            return Err(Error::invalid("spacing", format!("{spacing:?} must be finite and > 0")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("origin", format!("{origin:?} must be finite")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: voxels.len(),
            });
        }
        Ok(Volume {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    /// Builds a volume by evaluating `f(x, y, z)` in storage order.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [T; 3],
        origin: [T; 3],
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut voxels = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    voxels.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, origin, voxels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [T; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [T; 3] {
        self.origin
    }

    pub fn voxels(&self) -> &[T] {
        &self.voxels
    }

    pub fn nz(&self) -> usize {
        self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.voxels[self.index(x, y, z)]
    }

    /// Voxels of axial slice `k`, x-fastest.
    pub fn slice(&self, k: usize) -> Result<&[T]> {
        if k >= self.nz() {
            return Err(Error::OutOfBounds {
                what: "slice",
                index: k,
                limit: self.nz(),
            });
        }
        let n = self.dims[0] * self.dims[1];
        Ok(&self.voxels[k * n..(k + 1) * n])
    }

    /// World z of slice `k`.
    #[inline]
    pub fn slice_z(&self, k: usize) -> T {
        self.origin[2] + T::from_usize_lossy(k) * self.spacing[2]
    }

    /// Physical extent `dim * spacing` along `axis`.
    pub fn extent(&self, axis: usize) -> T {
        T::from_usize_lossy(self.dims[axis]) * self.spacing[axis]
    }

    /// Same voxels, moved to a different origin.
    pub fn with_origin(mut self, origin: [T; 3]) -> Self {
        self.origin = origin;
        self
    }

    /// Continuous voxel index of world coordinate `w` along `axis`.
    #[inline]
    pub fn continuous_index(&self, axis: usize, w: T) -> T {
        (w - self.origin[axis]) / self.spacing[axis]
    }

    /// Trilinear interpolation at a continuous voxel index, clamping to the edge voxels.
    pub fn sample_index(&self, ci: [T; 3]) -> T {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut fr = [T::zero(); 3];
        for a in 0..3 {
            let (l, h, f) = clamp_bracket(ci[a], self.dims[a]);
            lo[a] = l;
            hi[a] = h;
            fr[a] = f;
        }
        let one = T::one();
        let mut acc = T::zero();
        for (dz, wz) in [(lo[2], one - fr[2]), (hi[2], fr[2])] {
            if wz == T::zero() {
                continue;
            }
            for (dy, wy) in [(lo[1], one - fr[1]), (hi[1], fr[1])] {
                if wy == T::zero() {
                    continue;
                }
                let row = self.dims[0] * (dy + self.dims[1] * dz);
                let v0 = self.voxels[row + lo[0]];
                let v1 = self.voxels[row + hi[0]];
                acc += wz * wy * (v0 + fr[0] * (v1 - v0));
            }
        }
        acc
    }

    /// Keeps slices `start..start + n_slices`; world z of every kept slice is unchanged.
    pub fn crop_subvolume(&self, start_slice: usize, n_slices: usize) -> Result<Self> {
        if n_slices == 0 || start_slice + n_slices > self.nz() {
            return Err(Error::OutOfBounds {
                what: "crop end slice",
                index: start_slice + n_slices,
                limit: self.nz(),
            });
        }
        let n = self.dims[0] * self.dims[1];
        let voxels = self.voxels[start_slice * n..(start_slice + n_slices) * n].to_vec();
        let mut origin = self.origin;
        origin[2] = self.slice_z(start_slice);
        Ok(Volume {
            dims: [self.dims[0], self.dims[1], n_slices],
            spacing: self.spacing,
            origin,
            voxels,
        })
    }
}

/// Lower/upper neighbours and fraction for a continuous index on an axis of length `n`.
#[inline]
pub(crate) fn clamp_bracket<T: Real>(c: T, n: usize) -> (usize, usize, T) {
    let max = T::from_usize_lossy(n - 1);
    let c = if c.is_nan() {
        T::zero()
    } else {
        c.max(T::zero()).min(max)
    };
    let f = c.floor();
    let lo = f.to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, c - f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume<f64> {
        Volume::from_fn(dims, [1.0, 1.0, 2.0], [0.0, 0.0, 0.0], |x, y, z| {
            (x + 10 * y + 100 * z) as f64
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::<f64>::new([0, 1, 1], [1.0; 3], [0.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3], vec![0.0]).is_err());
        assert!(matches!(
            Volume::new([2, 1, 1], [1.0; 3], [0.0; 3], vec![0.0]),
            Err(Error::ShapeMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn full_crop_is_identity() {
        let v = ramp([3, 4, 5]);
        assert_eq!(v.crop_subvolume(0, 5).unwrap(), v);
    }

    #[test]
    fn crop_moves_origin_to_first_kept_slice() {
        let v = ramp([2, 2, 40]);
        let c = v.crop_subvolume(10, 20).unwrap();
        assert_eq!(c.origin()[2], 20.0);
        assert_eq!(c.dims(), [2, 2, 20]);
        for k in 0..20 {
            assert_eq!(c.slice_z(k), v.slice_z(k + 10));
            assert_eq!(c.slice(k).unwrap(), v.slice(k + 10).unwrap());
        }
    }

    #[test]
    fn crop_out_of_range() {
        let v = ramp([2, 2, 10]);
        assert!(matches!(v.crop_subvolume(5, 6), Err(Error::OutOfBounds { .. })));
        assert!(v.crop_subvolume(0, 0).is_err());
        assert!(v.slice(10).is_err());
    }

    #[test]
    fn trilinear_reproduces_linear_field_and_clamps() {
        let v = ramp([4, 4, 4]);
        let got = v.sample_index([1.25, 2.5, 0.75]);
        assert!((got - (1.25 + 25.0 + 75.0)).abs() < 1e-12);
        // clamped at the far corner
        assert_eq!(v.sample_index([9.0, 9.0, 9.0]), v.get(3, 3, 3));
        assert_eq!(v.sample_index([-1.0, -1.0, -1.0]), v.get(0, 0, 0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn crop_composes((nz, a, n, b, m) in (2usize..40)
                .prop_flat_map(|nz| (Just(nz), 0..nz))
                .prop_flat_map(|(nz, a)| (Just(nz), Just(a), 1..=nz - a))
                .prop_flat_map(|(nz, a, n)| (Just(nz), Just(a), Just(n), 0..n))
                .prop_flat_map(|(nz, a, n, b)| (Just(nz), Just(a), Just(n), Just(b), 1..=n - b))) {
                let v = Volume::from_fn([2, 3, nz], [1.0, 1.0, 1.5], [0.0, 0.0, -7.0], |x, y, z| (x * 7 + y * 3 + z * 11) as f64).unwrap();
                let lhs = v.crop_subvolume(a, n).unwrap().crop_subvolume(b, m).unwrap();
                let rhs = v.crop_subvolume(a + b, m).unwrap();
                prop_assert_eq!(lhs.voxels(), rhs.voxels());
                prop_assert_eq!(lhs.dims(), rhs.dims());
                for k in 0..m {
                    prop_assert_eq!(lhs.slice_z(k), v.slice_z(a + b + k));
                }
            }
        }
    }
}
