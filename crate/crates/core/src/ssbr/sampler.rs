use rand::Rng;

use crate::error::{Error, Result};

/// `m` equidistant slice indices drawn from one volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackSample {
    pub volume_id: usize,
    pub slice_indices: Vec<usize>,
    pub slice_gap: usize,
}

/// Largest gap that still fits `m` slices into `nz`.
pub(crate) fn max_gap(nz: usize, m: usize) -> usize {
    if m <= 1 {
        1
    } else {
        ((nz - 1) / (m - 1)).max(1)
    }
}

pub(crate) fn draw_start<R: Rng + ?Sized>(nz: usize, m: usize, gap: usize, rng: &mut R) -> usize {
    let last_start = nz - 1 - (m - 1) * gap;
    rng.random_range(0..=last_start)
}

/// Gap uniform in `[1, max_gap]`, then start uniform over every position that fits.
pub fn sample_stack<R: Rng + ?Sized>(volume_id: usize, nz: usize, m: usize, rng: &mut R) -> Result<StackSample> {
    if m == 0 {
        return Err(Error::invalid("m", "stack needs at least one slice"));
    }
    if nz < m {
        return Err(Error::VolumeTooShort { nz, needed: m });
    }
    let gap = rng.random_range(1..=max_gap(nz, m));
    let start = draw_start(nz, m, gap, rng);
    Ok(StackSample {
        volume_id,
        slice_indices: (0..m).map(|i| start + i * gap).collect(),
        slice_gap: gap,
    })
}
