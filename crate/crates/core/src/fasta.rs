//! Brute-force translation search minimizing the mean squared intensity difference.
//!
//! The moving scan is resampled to at most `max_dims` voxels, the fixed scan to the moving
//! scan's resulting spacing, and every translation on a regular grid is evaluated. Only
//! moving voxels whose translated centers fall inside the fixed scan's voxel-center hull
//! contribute; there is no padding value.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::align::{AlignmentResult, Method};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{resample_to_spacing, resample_volume, Volume};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FastaConfig<T> {
    /// Grid points per axis (x, y, z).
    pub grid_samples: [usize; 3],
    /// Inclusive `(min, max)` translation per axis in mm; `None` uses [`default_ranges`].
    pub range_mm: Option<[(T, T); 3]>,
    pub max_dims: [usize; 3],
    /// Minimum fraction of moving voxels that must land inside the fixed scan.
    pub min_overlap_fraction: T,
}

impl<T: Real> Default for FastaConfig<T> {
    fn default() -> Self {
        FastaConfig {
            grid_samples: [3, 3, 71],
            range_mm: None,
            max_dims: [128, 128, 128],
            min_overlap_fraction: T::lit(0.25),
        }
    }
}

impl<T: Real> FastaConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.grid_samples.contains(&0) {
            return Err(Error::invalid("grid_samples", "need at least one sample per axis"));
        }
        if self.max_dims.contains(&0) {
            return Err(Error::invalid("max_dims", "must be at least 1 per axis"));
        }
        if let Some(r) = &self.range_mm {
            if r.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
                return Err(Error::invalid("range_mm", "each range must be finite with min <= max"));
            }
        }
        let f = self.min_overlap_fraction;
        if !(f > T::zero() && f <= T::one()) {
            return Err(Error::invalid("min_overlap_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// A grid translation and its cost; `ssd` is `None` when the overlap is too small.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Translation3D<T> {
    pub t: [T; 3],
    pub ssd: Option<T>,
}

impl<T: Real> Translation3D<T> {
    fn norm2(&self) -> T {
        self.t.iter().map(|&c| c * c).sum()
    }
}

/// x, y within +-10% of the fixed extent; z over every placement where the two slabs overlap.
pub fn default_ranges<T: Real>(fixed: &Volume<T>, moving: &Volume<T>) -> [(T, T); 3] {
    let tenth = T::lit(0.1);
    let half = T::lit(0.5);
    let slab = |v: &Volume<T>| {
        let lo = v.origin()[2] - half * v.spacing()[2];
        (lo, lo + v.extent(2))
    };
    let (f_lo, f_hi) = slab(fixed);
    let (m_lo, m_hi) = slab(moving);
    [
        (-tenth * fixed.extent(0), tenth * fixed.extent(0)),
        (-tenth * fixed.extent(1), tenth * fixed.extent(1)),
        (f_lo - m_hi, f_hi - m_lo),
    ]
}

/// `n` uniformly spaced values over `[lo, hi]`, endpoints included; the midpoint when `n == 1`.
pub fn grid_axis<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::lit(0.5) * (lo + hi)];
    }
    let step = (hi - lo) / T::from_usize_lossy(n - 1);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + T::from_usize_lossy(i) * step
            }
        })
        .collect()
}

struct AxisMap<T> {
    lo: usize,
    hi: usize,
    frac: T,
    inside: bool,
}

fn axis_map<T: Real>(fixed: &Volume<T>, moving: &Volume<T>, axis: usize, shift: T) -> Vec<AxisMap<T>> {
    let n = fixed.dims()[axis];
    let max = T::from_usize_lossy(n - 1);
    let tol = T::lit(1e-6);
    (0..moving.dims()[axis])
        .map(|j| {
            let w = moving.origin()[axis] + T::from_usize_lossy(j) * moving.spacing()[axis] + shift;
            let c = fixed.continuous_index(axis, w);
            let inside = c >= -tol && c <= max + tol;
            let c = c.max(T::zero()).min(max);
            let f = c.floor();
            let lo = f.to_usize().unwrap_or(0).min(n - 1);
            AxisMap {
                lo,
                hi: (lo + 1).min(n - 1),
                frac: c - f,
                inside,
            }
        })
        .collect()
}

/// Mean squared difference between `moving` translated by `t` and trilinearly sampled
/// `fixed`; `None` if fewer than `min_overlap_fraction` of moving voxels overlap.
pub fn ssd_at<T: Real>(fixed: &Volume<T>, moving: &Volume<T>, t: [T; 3], min_overlap_fraction: T) -> Option<T> {
    let maps: Vec<Vec<AxisMap<T>>> = (0..3).map(|a| axis_map(fixed, moving, a, t[a])).collect();
    let counts: Vec<usize> = maps.iter().map(|m| m.iter().filter(|e| e.inside).count()).collect();
    let overlap = counts[0] * counts[1] * counts[2];
    if overlap == 0 || T::from_usize_lossy(overlap) < min_overlap_fraction * T::from_usize_lossy(moving.len()) {
        return None;
    }
    let [fnx, fny, _] = fixed.dims();
    let fv = fixed.voxels();
    let one = T::one();
    let mut acc = T::zero();
    for (kz, mz) in maps[2].iter().enumerate().filter(|(_, m)| m.inside) {
        for (ky, my) in maps[1].iter().enumerate().filter(|(_, m)| m.inside) {
            let rows = [
                (fnx * (my.lo + fny * mz.lo), (one - my.frac) * (one - mz.frac)),
                (fnx * (my.hi + fny * mz.lo), my.frac * (one - mz.frac)),
                (fnx * (my.lo + fny * mz.hi), (one - my.frac) * mz.frac),
                (fnx * (my.hi + fny * mz.hi), my.frac * mz.frac),
            ];
            let mrow = moving.index(0, ky, kz);
            for (kx, mx) in maps[0].iter().enumerate().filter(|(_, m)| m.inside) {
                let mut v = T::zero();
                for &(base, w) in &rows {
                    if w != T::zero() {
                        let a = fv[base + mx.lo];
                        v += w * (a + mx.frac * (fv[base + mx.hi] - a));
                    }
                }
                let d = moving.voxels()[mrow + kx] - v;
                acc += d * d;
            }
        }
    }
    Some(acc / T::from_usize_lossy(overlap))
}

#[derive(Clone, Debug)]
pub struct FastaOutcome<T> {
    pub result: AlignmentResult<T>,
    pub best: Translation3D<T>,
    /// Every evaluated grid point, x-fastest; empty unless requested.
    pub grid: Vec<Translation3D<T>>,
}

/// Lexicographic `(ssd, |t|, t)` order over feasible points.
fn better<T: Real>(a: &Translation3D<T>, b: &Translation3D<T>) -> bool {
    let (Some(sa), Some(sb)) = (a.ssd, b.ssd) else {
        return a.ssd.is_some();
    };
    if sa != sb {
        return sa < sb;
    }
    let (na, nb) = (a.norm2(), b.norm2());
    if na != nb {
        return na < nb;
    }
    a.t.partial_cmp(&b.t) == Some(std::cmp::Ordering::Less)
}

pub fn fasta_search<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    cfg: &FastaConfig<T>,
    keep_grid: bool,
) -> Result<FastaOutcome<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let ranges = cfg.range_mm.unwrap_or_else(|| default_ranges(fixed, moving));
    let mov = resample_volume(moving, cfg.max_dims)?;
    let fix = resample_to_spacing(fixed, mov.spacing())?;

    let axes: Vec<Vec<T>> = (0..3)
        .map(|a| grid_axis(ranges[a].0, ranges[a].1, cfg.grid_samples[a]))
        .collect();
    let mut points = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for &tz in &axes[2] {
        for &ty in &axes[1] {
            for &tx in &axes[0] {
                points.push([tx, ty, tz]);
            }
        }
    }
    let grid: Vec<Translation3D<T>> = points
        .par_iter()
        .map(|&t| Translation3D {
            t,
            ssd: ssd_at(&fix, &mov, t, cfg.min_overlap_fraction),
        })
        .collect();
    let best = grid
        .iter()
        .fold(None::<&Translation3D<T>>, |acc, p| match acc {
            Some(b) if !better(p, b) => Some(b),
            _ => Some(p),
        })
        .copied()
        .filter(|b| b.ssd.is_some())
        .ok_or(Error::NoFeasibleTranslation)?;

    let half = T::lit(0.5) * mov.spacing()[2];
    let f_lo = fixed.origin()[2] - T::lit(0.5) * fixed.spacing()[2];
    let m_lo = mov.origin()[2] - half + best.t[2];
    let overlap = (f_lo + fixed.extent(2)).min(m_lo + mov.extent(2)) - f_lo.max(m_lo);
    let result = AlignmentResult {
        method: Method::Fasta,
        z_offset_mm: best.t[2],
        residual: best.ssd.unwrap_or_else(T::zero),
        overlap_mm: overlap.max(T::zero()),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok(FastaOutcome {
        result,
        best,
        grid: if keep_grid { grid } else { Vec::new() },
    })
}

pub fn fasta_align<T: Real>(fixed: &Volume<T>, moving: &Volume<T>, cfg: &FastaConfig<T>) -> Result<AlignmentResult<T>> {
    fasta_search(fixed, moving, cfg, false).map(|o| o.result)
}

/// CSV `tx_mm,ty_mm,tz_mm,ssd,feasible`; infeasible points have an empty `ssd`.
pub fn write_grid_csv<T: Real>(grid: &[Translation3D<T>], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "tx_mm,ty_mm,tz_mm,ssd,feasible")?;
    for p in grid {
        let ssd = p.ssd.map(|s| s.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{ssd},{}", p.t[0], p.t[1], p.t[2], p.ssd.is_some())?;
    }
    fs::write(path, out).map_err(Error::at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_phantom, PhantomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noiseless(seed: u64) -> Volume<f64> {
        let mut spec = PhantomSpec::standard(seed);
        spec.noise_sigma = 0.0;
        spec.dims = [16, 16, 80];
        spec.spacing = [16.0, 16.0, 5.0];
        make_phantom(&spec).unwrap()
    }

    #[test]
    fn self_ssd_zero() {
        let v = noiseless(1);
        assert_eq!(ssd_at(&v, &v, [0.0; 3], 0.25), Some(0.0));
    }

    #[test]
    fn constant_offset_volumes() {
        let a = Volume::from_fn([6, 5, 12], [2.0, 2.0, 3.0], [0.0; 3], |_, _, _| 10.0f64).unwrap();
        let b = Volume::from_fn([6, 5, 8], [2.0, 2.0, 3.0], [0.0; 3], |_, _, _| 13.0f64).unwrap();
        for t in [[0.0, 0.0, 0.0], [1.0, -1.5, 7.3], [0.0, 0.0, 12.0]] {
            let s = ssd_at(&a, &b, t, 0.25).unwrap();
            assert!((s - 9.0).abs() < 1e-12);
        }
        // pushed entirely outside
        assert_eq!(ssd_at(&a, &b, [0.0, 0.0, 500.0], 0.25), None);
    }

    #[test]
    fn true_offset_beats_every_grid_point() {
        let v = noiseless(2);
        let c = v.crop_subvolume(20, 40).unwrap();
        let at_truth = ssd_at(&v, &c, [0.0; 3], 0.25).unwrap();
        assert_eq!(at_truth, 0.0);
        let cfg = FastaConfig::<f64>::default();
        let out = fasta_search(&v, &c, &cfg, true).unwrap();
        assert_eq!(out.grid.len(), 3 * 3 * 71);
        for p in out.grid.iter().filter_map(|p| p.ssd) {
            assert!(at_truth <= p);
        }
        // exhaustive minimum equals the reported winner
        let min = out.grid.iter().filter_map(|p| p.ssd).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.ssd, Some(min));
    }

    #[test]
    fn self_alignment_on_grid_containing_zero() {
        let v = noiseless(3);
        let cfg = FastaConfig {
            grid_samples: [3, 3, 5],
            range_mm: Some([(-10.0, 10.0), (-10.0, 10.0), (-50.0, 50.0)]),
            ..FastaConfig::default()
        };
        let out = fasta_search(&v, &v, &cfg, false).unwrap();
        assert_eq!(out.best.t, [0.0, 0.0, 0.0]);
        assert_eq!(out.result.z_offset_mm, 0.0);
        assert_eq!(out.result.method, Method::Fasta);
    }

    #[test]
    fn crops_recovered_within_one_cell() {
        let v = noiseless(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = FastaConfig::<f64>::default();
        for _ in 0..10 {
            let n = rng.random_range(40..=80);
            let a = rng.random_range(0..=80 - n);
            let c = v.crop_subvolume(a, n).unwrap();
            let r = default_ranges(&v, &c)[2];
            let cell = (r.1 - r.0) / 70.0;
            let res = fasta_align(&v, &c, &cfg).unwrap();
            assert!(res.z_offset_mm.abs() <= cell, "offset {} cell {cell}", res.z_offset_mm);
        }
    }

    #[test]
    fn pure_z_grid_matches_full_grid_on_xy_homogeneous_volume() {
        let mut spec = PhantomSpec::standard(6);
        spec.noise_sigma = 0.0;
        spec.texture_scale = 0.0;
        spec.dims = [8, 8, 60];
        let v = make_phantom::<f64>(&spec).unwrap();
        let c = v.crop_subvolume(13, 30).unwrap();
        let full = fasta_align(&v, &c, &FastaConfig::default()).unwrap();
        let z_only = fasta_align(
            &v,
            &c,
            &FastaConfig {
                grid_samples: [1, 1, 71],
                ..FastaConfig::default()
            },
        )
        .unwrap();
        assert_eq!(full.z_offset_mm, z_only.z_offset_mm);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let v = noiseless(7);
        let c = v.crop_subvolume(5, 30).unwrap();
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| {
                    let o = fasta_search(&v, &c, &FastaConfig::default(), true).unwrap();
                    (o.best, o.grid)
                })
        };
        assert_eq!(run(1), run(6));
    }

    #[test]
    fn infeasible_everywhere() {
        let v = noiseless(8);
        let cfg = FastaConfig {
            range_mm: Some([(0.0, 0.0), (0.0, 0.0), (5000.0, 6000.0)]),
            ..FastaConfig::default()
        };
        assert!(matches!(fasta_align(&v, &v, &cfg), Err(Error::NoFeasibleTranslation)));
        assert!(fasta_align(
            &v,
            &v,
            &FastaConfig {
                grid_samples: [0, 1, 1],
                ..FastaConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn grid_axis_endpoints() {
        assert_eq!(grid_axis(-1.0f64, 1.0, 3), vec![-1.0, 0.0, 1.0]);
        assert_eq!(grid_axis(-4.0f64, 2.0, 1), vec![-1.0]);
        let g = grid_axis(-400.0f64, 400.0, 71);
        assert_eq!((g[0], g[70]), (-400.0, 400.0));
    }

    #[test]
    fn grid_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let g = vec![
            Translation3D {
                t: [0.0f64, 0.0, 1.5],
                ssd: Some(2.0),
            },
            Translation3D {
                t: [0.0, 0.0, 99.0],
                ssd: None,
            },
        ];
        write_grid_csv(&g, &p).unwrap();
        assert_eq!(
            fs::read_to_string(p).unwrap(),
            "tx_mm,ty_mm,tz_mm,ssd,feasible\n0,0,1.5,2,true\n0,0,99,,false\n"
        );
    }
}
