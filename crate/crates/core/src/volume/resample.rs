//! Voxel-center anchored resampling with edge clamping.

use super::{clamp_bracket, Volume};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A 2D scalar image, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice2D<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Slice2D<T> {
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x + self.width * y]
    }

    /// Block-average down to `side x side`. Both dimensions must be multiples of `side`.
    pub fn block_mean(&self, side: usize) -> Result<Slice2D<T>> {
        if side == 0 || !self.width.is_multiple_of(side) || !self.height.is_multiple_of(side) {
            return Err(Error::invalid(
                "feature side",
                format!("{side} does not divide {}x{}", self.width, self.height),
            ));
        }
        let bx = self.width / side;
        let by = self.height / side;
        let norm = T::from_usize_lossy(bx * by);
        let mut data = Vec::with_capacity(side * side);
        for oy in 0..side {
            for ox in 0..side {
                let mut acc = T::zero();
                for y in oy * by..(oy + 1) * by {
                    for x in ox * bx..(ox + 1) * bx {
                        acc += self.get(x, y);
                    }
                }
                data.push(acc / norm);
            }
        }
        Ok(Slice2D {
            width: side,
            height: side,
            data,
        })
    }
}

/// Continuous source index of output sample `j` when `n_in` voxels are mapped onto `n_out`
/// voxels covering the same extent.
#[inline]
fn source_index<T: Real>(j: usize, n_in: usize, n_out: usize) -> T {
    if n_in == n_out {
        return T::from_usize_lossy(j);
    }
    let half = T::lit(0.5);
    (T::from_usize_lossy(j) + half) * T::from_usize_lossy(n_in) / T::from_usize_lossy(n_out) - half
}

/// Bilinear resampling of axial slice `k` onto a `width x height` grid spanning the same
/// physical extent as the slice.
pub fn resample_slice<T: Real>(vol: &Volume<T>, k: usize, (width, height): (usize, usize)) -> Result<Slice2D<T>> {
    let src = vol.slice(k)?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("output size", "must be at least 1x1"));
    }
    let [nx, ny, _] = vol.dims();
    let xs: Vec<_> = (0..width)
        .map(|i| clamp_bracket(source_index::<T>(i, nx, width), nx))
        .collect();
    let ys: Vec<_> = (0..height)
        .map(|j| clamp_bracket(source_index::<T>(j, ny, height), ny))
        .collect();
    let mut data = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * nx..(y0 + 1) * nx];
        let r1 = &src[y1 * nx..(y1 + 1) * nx];
        for &(x0, x1, fx) in &xs {
            let a = r0[x0] + fx * (r0[x1] - r0[x0]);
            let b = r1[x0] + fx * (r1[x1] - r1[x0]);
            data.push(a + fy * (b - a));
        }
    }
    Ok(Slice2D { width, height, data })
}

/// Resamples onto `dims` voxels of `spacing`, centered so that the new grid's voxel-center
/// hull starts half an output voxel inside the old grid's physical start.
pub fn resample_grid<T: Real>(vol: &Volume<T>, dims: [usize; 3], spacing: [T; 3]) -> Result<Volume<T>> {
    let half = T::lit(0.5);
    let src_dims = vol.dims();
    let src_spacing = vol.spacing();
    let mut origin = vol.origin();
    let mut axes: [Vec<(usize, usize, T)>; 3] = Default::default();
    for a in 0..3 {
        if dims[a] == 0 {
            return Err(Error::invalid("dims", "resample target has a zero axis"));
        }
        if dims[a] == src_dims[a] && spacing[a] == src_spacing[a] {
            axes[a] = (0..dims[a]).map(|j| (j, j, T::zero())).collect();
            continue;
        }
        let start = vol.origin()[a] - half * src_spacing[a];
        origin[a] = start + half * spacing[a];
        axes[a] = (0..dims[a])
            .map(|j| {
                let w = origin[a] + T::from_usize_lossy(j) * spacing[a];
                clamp_bracket(vol.continuous_index(a, w), src_dims[a])
            })
            .collect();
    }
    let one = T::one();
    let mut voxels = Vec::with_capacity(dims.iter().product());
    for &(z0, z1, fz) in &axes[2] {
        for &(y0, y1, fy) in &axes[1] {
            for &(x0, x1, fx) in &axes[0] {
                let lerp_x = |y: usize, z: usize| {
                    let v0 = vol.get(x0, y, z);
                    v0 + fx * (vol.get(x1, y, z) - v0)
                };
                let c0 = lerp_x(y0, z0) * (one - fy) + lerp_x(y1, z0) * fy;
                let c1 = if fz == T::zero() {
                    T::zero()
                } else {
                    lerp_x(y0, z1) * (one - fy) + lerp_x(y1, z1) * fy
                };
                voxels.push(c0 * (one - fz) + c1 * fz);
            }
        }
    }
    Volume::new(dims, spacing, origin, voxels)
}

/// Downsamples every axis longer than `max_dims` to exactly `max_dims`, keeping the
/// physical extent. Shorter axes are left untouched.
pub fn resample_volume<T: Real>(vol: &Volume<T>, max_dims: [usize; 3]) -> Result<Volume<T>> {
    if max_dims.contains(&0) {
        return Err(Error::invalid("max_dims", "must be at least 1 per axis"));
    }
    let src = vol.dims();
    if (0..3).all(|a| src[a] <= max_dims[a]) {
        return Ok(vol.clone());
    }
    let mut dims = src;
    let mut spacing = vol.spacing();
    for a in 0..3 {
        if src[a] > max_dims[a] {
            dims[a] = max_dims[a];
            spacing[a] = vol.extent(a) / T::from_usize_lossy(max_dims[a]);
        }
    }
    resample_grid(vol, dims, spacing)
}

/// Resamples to the given voxel spacing; the voxel count per axis is the rounded ratio of
/// physical extent to spacing (at least 1).
pub fn resample_to_spacing<T: Real>(vol: &Volume<T>, spacing: [T; 3]) -> Result<Volume<T>> {
    let mut dims = [0usize; 3];
    for a in 0..3 {
        if !(spacing[a].is_finite() && spacing[a] > T::zero()) {
            return Err(Error::invalid("spacing", "must be finite and > 0"));
        }
        dims[a] = (vol.extent(a) / spacing[a]).round().to_usize().unwrap_or(1).max(1);
    }
    resample_grid(vol, dims, spacing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp3(dims: [usize; 3], spacing: [f64; 3]) -> Volume<f64> {
        Volume::from_fn(dims, spacing, [5.0, -3.0, 10.0], |x, y, z| {
            let w = [
                5.0 + x as f64 * spacing[0],
                -3.0 + y as f64 * spacing[1],
                10.0 + z as f64 * spacing[2],
            ];
            0.5 * w[0] - 2.0 * w[1] + 3.0 * w[2]
        })
        .unwrap()
    }

    #[test]
    fn small_volume_untouched() {
        let v = ramp3([64, 64, 64], [1.0, 1.0, 1.0]);
        assert_eq!(resample_volume(&v, [128, 128, 128]).unwrap(), v);
    }

    #[test]
    fn constant_survives_resampling() {
        let v = Volume::from_fn([30, 17, 50], [0.7, 1.1, 2.5], [0.0; 3], |_, _, _| 42.0f64).unwrap();
        let r = resample_volume(&v, [8, 8, 9]).unwrap();
        assert!(r.voxels().iter().all(|&x| (x - 42.0).abs() < 1e-12));
        let r = resample_to_spacing(&v, [0.3, 2.0, 1.0]).unwrap();
        assert!(r.voxels().iter().all(|&x| (x - 42.0).abs() < 1e-12));
    }

    #[test]
    fn ramp_downsampled_matches_analytic() {
        let sp = [1.0, 2.0, 1.5];
        let v = ramp3([40, 20, 60], sp);
        let r = resample_volume(&v, [20, 10, 30]).unwrap();
        assert_eq!(r.dims(), [20, 10, 30]);
        assert_eq!(r.spacing(), [2.0, 4.0, 3.0]);
        for z in 0..30 {
            for y in 0..10 {
                for x in 0..20 {
                    let w = [
                        r.origin()[0] + x as f64 * 2.0,
                        r.origin()[1] + y as f64 * 4.0,
                        r.origin()[2] + z as f64 * 3.0,
                    ];
                    let want = 0.5 * w[0] - 2.0 * w[1] + 3.0 * w[2];
                    assert!((r.get(x, y, z) - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn extent_preserved_within_one_spacing() {
        let v = ramp3([37, 5, 211], [0.9, 1.0, 1.25]);
        for target in [[128, 128, 128], [10, 3, 7], [1, 1, 1]] {
            let r = resample_volume(&v, target).unwrap();
            for a in 0..3 {
                assert!((r.extent(a) - v.extent(a)).abs() < r.spacing()[a]);
            }
        }
        let r = resample_to_spacing(&v, [2.0, 2.0, 3.3]).unwrap();
        for a in 0..3 {
            assert!((r.extent(a) - v.extent(a)).abs() < r.spacing()[a]);
        }
    }

    #[test]
    fn slice_identity_at_128() {
        let v = Volume::from_fn([128, 128, 2], [1.0; 3], [0.0; 3], |x, y, z| {
            ((x * 31 + y * 17 + z) % 97) as f64
        })
        .unwrap();
        let s = resample_slice(&v, 1, (128, 128)).unwrap();
        assert_eq!(s.data.as_slice(), v.slice(1).unwrap());
    }

    #[test]
    fn slice_constant_and_gradient() {
        let c = Volume::from_fn([20, 33, 1], [1.0; 3], [0.0; 3], |_, _, _| -7.5f64).unwrap();
        assert!(resample_slice(&c, 0, (128, 128))
            .unwrap()
            .data
            .iter()
            .all(|&v| v == -7.5));

        let g = Volume::from_fn([32, 48, 1], [1.0; 3], [0.0; 3], |x, y, _| {
            3.0 * x as f64 - 0.5 * y as f64
        })
        .unwrap();
        let s = resample_slice(&g, 0, (128, 128)).unwrap();
        for j in 0..128 {
            for i in 0..128 {
                let cx = (i as f64 + 0.5) * 32.0 / 128.0 - 0.5;
                let cy = (j as f64 + 0.5) * 48.0 / 128.0 - 0.5;
                if (0.0..=31.0).contains(&cx) && (0.0..=47.0).contains(&cy) {
                    assert!((s.get(i, j) - (3.0 * cx - 0.5 * cy)).abs() < 1e-6);
                }
            }
        }
        assert!(resample_slice(&g, 1, (128, 128)).is_err());
    }

    #[test]
    fn block_mean_averages() {
        let s = Slice2D {
            width: 4,
            height: 2,
            data: vec![1.0f64, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0],
        };
        assert!(s.block_mean(3).is_err());
        let b = s.block_mean(2).unwrap();
        assert_eq!(b.data, vec![2.0, 6.0, 2.0, 6.0]);
    }
}
