//! Score-based z-prealignment.
//!
//! Offsets are reported as the translation (mm) that maps moving world z onto fixed world z.
//! Two methods are provided: a three-slice estimate that assumes scores are linear in z on
//! the fixed scan, and an exhaustive integer shift search over score curves resampled to a
//! common spacing, minimizing the mean absolute score difference over the overlap.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scorer::{ScoreCurve, SliceScorer};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fast,
    L1,
    Fasta,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fast, Method::L1, Method::Fasta];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fast => "fast",
            Method::L1 => "l1",
            Method::Fasta => "fasta",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" => Ok(Method::Fast),
            "l1" => Ok(Method::L1),
            "fasta" => Ok(Method::Fasta),
            other => Err(Error::invalid("method", format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult<T> {
    pub method: Method,
    pub z_offset_mm: T,
    pub residual: T,
    pub overlap_mm: T,
    pub elapsed_s: f64,
}

impl<T: Real> AlignmentResult<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Estimate from three `(z, score)` samples: the first and last fixed slices and the moving
/// center slice (z in the moving scan's own world frame).
pub fn fast_prealign<T: Real>(
    fixed_first: (T, T),
    fixed_last: (T, T),
    moving_center: (T, T),
) -> Result<AlignmentResult<T>> {
    let start = Instant::now();
    let (z0, s0) = fixed_first;
    let (z1, s1) = fixed_last;
    let (z_local, s_mc) = moving_center;
    if !(z1 > z0) {
        return Err(Error::invalid("fixed slices", "last slice must lie above the first"));
    }
    let eps = T::lit(1e-9) * (z1 - z0);
    if (s1 - s0).abs() <= eps {
        return Err(Error::DegenerateScoreGradient((s1 - s0).as_f64()));
    }
    let z_hat = z0 + (s_mc - s0) * (z1 - z0) / (s1 - s0);
    Ok(AlignmentResult {
        method: Method::Fast,
        z_offset_mm: z_hat - z_local,
        residual: T::zero(),
        overlap_mm: T::zero(),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Slab `[z_first - dz/2, z_last + dz/2]` covered by a scan.
fn slab<T: Real>(vol: &Volume<T>) -> (T, T) {
    let half = T::lit(0.5) * vol.spacing()[2];
    (vol.slice_z(0) - half, vol.slice_z(vol.nz() - 1) + half)
}

fn slab_overlap<T: Real>(fixed: (T, T), moving: (T, T), offset: T) -> T {
    let lo = fixed.0.max(moving.0 + offset);
    let hi = fixed.1.min(moving.1 + offset);
    (hi - lo).max(T::zero())
}

/// Scores slices `0` and `nz - 1` of `fixed` and `floor(nz / 2)` of `moving`: exactly three
/// scorer calls.
pub fn fast_prealign_volumes<T: Real, S: SliceScorer<T> + ?Sized>(
    scorer: &S,
    fixed: &Volume<T>,
    moving: &Volume<T>,
) -> Result<AlignmentResult<T>> {
    let start = Instant::now();
    let last = fixed.nz() - 1;
    let center = moving.nz() / 2;
    let first = (fixed.slice_z(0), scorer.score_slice(fixed, 0)?);
    let last = (fixed.slice_z(last), scorer.score_slice(fixed, last)?);
    let mc = (moving.slice_z(center), scorer.score_slice(moving, center)?);
    let mut res = fast_prealign(first, last, mc)?;
    res.overlap_mm = slab_overlap(slab(fixed), slab(moving), res.z_offset_mm);
    res.elapsed_s = start.elapsed().as_secs_f64();
    Ok(res)
}

/// Linear interpolation onto `z_min + j * spacing` for every grid point not beyond `z_max`.
pub fn resample_curve<T: Real>(curve: &ScoreCurve<T>, spacing: T) -> Result<ScoreCurve<T>> {
    if curve.len() < 2 {
        return Err(Error::CurveTooShort(curve.len()));
    }
    if !(spacing.is_finite() && spacing > T::zero()) {
        return Err(Error::invalid("spacing", "must be finite and > 0"));
    }
    let z = curve.z_mm();
    let s = curve.scores();
    let z0 = z[0];
    let z_end = z[z.len() - 1];
    let n = ((z_end - z0) / spacing + T::lit(1e-9)).floor().to_usize().unwrap_or(0) + 1;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for j in 0..n {
        let g = z0 + T::from_usize_lossy(j) * spacing;
        while i + 2 < z.len() && z[i + 1] <= g {
            i += 1;
        }
        let v = if g <= z[i] {
            s[i]
        } else if g >= z[i + 1] {
            s[i + 1]
        } else {
            let t = (g - z[i]) / (z[i + 1] - z[i]);
            s[i] + t * (s[i + 1] - s[i])
        };
        out.push(v);
    }
    ScoreCurve::uniform(z0, spacing, out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1Config<T> {
    /// Common resampling spacing; `None` uses the coarser of the two curves' spacings.
    pub common_spacing_mm: Option<T>,
    /// Minimum overlap in samples; `None` uses `max(20, 10% of the shorter curve)`, capped
    /// at the shorter curve's length.
    pub min_overlap_samples: Option<usize>,
}

impl<T> Default for L1Config<T> {
    fn default() -> Self {
        L1Config {
            common_spacing_mm: None,
            min_overlap_samples: None,
        }
    }
}

/// Winner of the integer shift search. `moving[j]` is compared against `fixed[j + shift]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftSearch<T> {
    pub shift: isize,
    pub cost: T,
    pub overlap: usize,
}

/// Index range of `fixed` overlapped by `moving` at `shift`.
#[inline]
fn overlap_range(n_fixed: usize, n_moving: usize, shift: isize) -> (usize, usize) {
    let lo = shift.max(0);
    let hi = (n_fixed as isize).min(n_moving as isize + shift);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Mean absolute difference minimized over every shift with at least `min_overlap`
/// overlapping samples. Ties go to the smallest `|shift|`, then the negative shift.
///
/// Shifts are visited in that tie order and a candidate is abandoned as soon as its running
/// mean exceeds the best cost so far; the sums of surviving candidates are accumulated in
/// ascending fixed index, so the winner is identical to a plain exhaustive scan.
pub fn best_shift<T: Real>(fixed: &[T], moving: &[T], min_overlap: usize) -> Result<ShiftSearch<T>> {
    let min_overlap = min_overlap.max(1);
    let (nf, nm) = (fixed.len(), moving.len());
    if nf < min_overlap || nm < min_overlap {
        return Err(Error::NoFeasibleShift { min_overlap });
    }
    let lo = min_overlap as isize - nm as isize;
    let hi = nf as isize - min_overlap as isize;
    let mut best: Option<ShiftSearch<T>> = None;
    let reach = lo.unsigned_abs().max(hi.unsigned_abs()) as isize;
    for mag in 0..=reach {
        let candidates: &[isize] = if mag == 0 { &[0] } else { &[-mag, mag] };
        for &shift in candidates {
            if shift < lo || shift > hi {
                continue;
            }
            let (a, b) = overlap_range(nf, nm, shift);
            let len = b - a;
            if len < min_overlap {
                continue;
            }
            let denom = T::from_usize_lossy(len);
            let mut acc = T::zero();
            let mut abandoned = false;
            for i in a..b {
                acc += (fixed[i] - moving[(i as isize - shift) as usize]).abs();
                if let Some(bst) = &best {
                    if acc / denom > bst.cost {
                        abandoned = true;
                        break;
                    }
                }
            }
            if abandoned {
                continue;
            }
            let cost = acc / denom;
            if best.as_ref().is_none_or(|bst| cost < bst.cost) {
                best = Some(ShiftSearch {
                    shift,
                    cost,
                    overlap: len,
                });
            }
        }
    }
    best.ok_or(Error::NoFeasibleShift { min_overlap })
}

fn on_grid<T: Real>(curve: &ScoreCurve<T>, spacing: T) -> Result<ScoreCurve<T>> {
    match curve.spacing_mm() {
        Some(sp) if (sp - spacing).abs() <= T::lit(1e-12) * spacing => Ok(curve.clone()),
        _ => resample_curve(curve, spacing),
    }
}

pub fn l1_align<T: Real>(
    fixed: &ScoreCurve<T>,
    moving: &ScoreCurve<T>,
    cfg: &L1Config<T>,
) -> Result<AlignmentResult<T>> {
    let start = Instant::now();
    let spacing = match cfg.common_spacing_mm {
        Some(s) => s,
        None => {
            let f = fixed.nominal_spacing().ok_or(Error::CurveTooShort(fixed.len()))?;
            let m = moving.nominal_spacing().ok_or(Error::CurveTooShort(moving.len()))?;
            f.max(m)
        }
    };
    if !(spacing.is_finite() && spacing > T::zero()) {
        return Err(Error::invalid("common_spacing_mm", "must be finite and > 0"));
    }
    let f = on_grid(fixed, spacing)?;
    let m = on_grid(moving, spacing)?;
    let shorter = f.len().min(m.len());
    let min_overlap = cfg
        .min_overlap_samples
        .unwrap_or_else(|| 20.max(shorter.div_ceil(10)).min(shorter));
    let hit = best_shift(f.scores(), m.scores(), min_overlap)?;
    let z_offset = f.z_mm()[0] - m.z_mm()[0] + T::lit(hit.shift as f64) * spacing;
    Ok(AlignmentResult {
        method: Method::L1,
        z_offset_mm: z_offset,
        residual: hit.cost,
        overlap_mm: T::from_usize_lossy(hit.overlap) * spacing,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Scores every slice of both scans, then runs [`l1_align`].
pub fn l1_align_volumes<T: Real, S: SliceScorer<T> + ?Sized>(
    scorer: &S,
    fixed: &Volume<T>,
    moving: &Volume<T>,
    cfg: &L1Config<T>,
) -> Result<AlignmentResult<T>> {
    let start = Instant::now();
    for v in [fixed, moving] {
        if v.nz() < 2 {
            return Err(Error::VolumeTooShort { nz: v.nz(), needed: 2 });
        }
    }
    let fc = scorer.score_all(fixed)?;
    let mc = scorer.score_all(moving)?;
    let mut res = l1_align(&fc, &mc, cfg)?;
    res.elapsed_s = start.elapsed().as_secs_f64();
    Ok(res)
}
