//! Benchmark harness: random crop pairs from phantoms, every method on every pair, errors
//! binned into four categories against the known ground truth.

mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{fast_prealign_volumes, l1_align_volumes, L1Config, Method};
use crate::error::{Error, Result};
use crate::fasta::{fasta_align, FastaConfig};
use crate::scalar::Real;
use crate::scorer::SliceScorer;
use crate::ssbr::pearson;
use crate::volume::{make_phantom, PhantomSpec, Volume};

pub use report::{curve_overlay_svg, write_report, PairPlot};

/// Shortest crop the pair protocol produces.
pub const MIN_PAIR_SLICES: usize = 20;
/// Slices kept clear of the top when drawing the start slice.
const END_MARGIN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryThresholds {
    pub cat1_mm: f64,
    pub cat2_mm: f64,
    pub cat3_mm: f64,
}

impl Default for CategoryThresholds {
    fn default() -> Self {
        CategoryThresholds {
            cat1_mm: 5.0,
            cat2_mm: 20.0,
            cat3_mm: 80.0,
        }
    }
}

impl CategoryThresholds {
    pub fn new(cat1_mm: f64, cat2_mm: f64, cat3_mm: f64) -> Result<Self> {
        let t = CategoryThresholds {
            cat1_mm,
            cat2_mm,
            cat3_mm,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cat1_mm > 0.0
            && self.cat1_mm < self.cat2_mm
            && self.cat2_mm < self.cat3_mm
            && self.cat3_mm.is_finite())
        {
            return Err(Error::invalid("thresholds", "need finite 0 < cat1 < cat2 < cat3"));
        }
        Ok(())
    }
}

impl FromStr for CategoryThresholds {
    type Err = Error;

    /// `"5,20,80"`.
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid("thresholds", e.to_string()))?;
        match v[..] {
            [a, b, c] => Self::new(a, b, c),
            _ => Err(Error::invalid(
                "thresholds",
                format!("expected 3 values, got {}", v.len()),
            )),
        }
    }
}

impl fmt::Display for CategoryThresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.cat1_mm, self.cat2_mm, self.cat3_mm)
    }
}

/// Boundaries are inclusive: an error of exactly `cat2_mm` is category 2. NaN is a failure.
pub fn categorize(error_mm: f64, t: &CategoryThresholds) -> u8 {
    if error_mm <= t.cat1_mm {
        1
    } else if error_mm <= t.cat2_mm {
        2
    } else if error_mm <= t.cat3_mm {
        3
    } else {
        4
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub pair_id: usize,
    pub fixed_volume_id: usize,
    pub start_slice: usize,
    pub n_slices: usize,
    /// Offset that maps the moving scan back onto the fixed one.
    pub true_offset_mm: f64,
    pub seed: u64,
}

/// Draws a crop `(start, n)` from a scan with `nz` slices.
///
/// With at least 121 slices the start is uniform in `[0, nz - 101]`; shorter scans fall back to
/// `[0, max(0, nz - 21)]`. The length is then uniform in `[20, nz - start]`.
pub fn sample_crop<R: Rng + ?Sized>(nz: usize, rng: &mut R) -> Result<(usize, usize)> {
    if nz < MIN_PAIR_SLICES {
        return Err(Error::VolumeTooShort {
            nz,
            needed: MIN_PAIR_SLICES,
        });
    }
    let last_start = if nz > END_MARGIN + MIN_PAIR_SLICES {
        nz - END_MARGIN - 1
    } else {
        nz.saturating_sub(MIN_PAIR_SLICES + 1)
    };
    let start = rng.random_range(0..=last_start);
    let n = rng.random_range(MIN_PAIR_SLICES..=nz - start);
    Ok((start, n))
}

/// Crop spec for one scan. Crops keep world z, so the true offset is `-z_shift_mm`, the shift
/// applied afterwards to the moving origin (zero when no shift is applied).
pub fn sample_pair_spec<T: Real, R: Rng + ?Sized>(
    fixed_volume_id: usize,
    vol: &Volume<T>,
    z_shift_mm: f64,
    rng: &mut R,
) -> Result<PairSpec> {
    let (start_slice, n_slices) = sample_crop(vol.nz(), rng)?;
    Ok(PairSpec {
        pair_id: 0,
        fixed_volume_id,
        start_slice,
        n_slices,
        true_offset_mm: if z_shift_mm == 0.0 { 0.0 } else { -z_shift_mm },
        seed: 0,
    })
}

/// Builds the moving scan of a pair.
pub fn moving_for<T: Real>(fixed: &Volume<T>, spec: &PairSpec) -> Result<Volume<T>> {
    let crop = fixed.crop_subvolume(spec.start_slice, spec.n_slices)?;
    if spec.true_offset_mm == 0.0 {
        return Ok(crop);
    }
    let mut o = crop.origin();
    o[2] -= T::lit(spec.true_offset_mm);
    Ok(crop.with_origin(o))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pair_id: usize,
    pub method: Method,
    pub z_offset_mm: Option<f64>,
    pub true_offset_mm: f64,
    pub error_mm: Option<f64>,
    pub category: u8,
    pub elapsed_s: f64,
    pub failure: Option<String>,
}

impl EvalRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig<T> {
    pub n_pairs: usize,
    pub methods: Vec<Method>,
    pub thresholds: CategoryThresholds,
    pub seed: u64,
    pub l1: L1Config<T>,
    pub fasta: FastaConfig<T>,
    /// Shift applied to every moving origin; `None` keeps world-anchored crops.
    pub z_shift_mm: Option<f64>,
    /// Number of leading pairs for which score curves are kept for plotting.
    pub plot_pairs: usize,
}

impl<T: Real> Default for BenchConfig<T> {
    fn default() -> Self {
        BenchConfig {
            n_pairs: 100,
            methods: Method::ALL.to_vec(),
            thresholds: CategoryThresholds::default(),
            seed: 0,
            l1: L1Config::default(),
            fasta: FastaConfig::default(),
            z_shift_mm: None,
            plot_pairs: 0,
        }
    }
}

impl<T: Real> BenchConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "at least one method is required"));
        }
        if self.n_pairs == 0 {
            return Err(Error::invalid("n_pairs", "must be >= 1"));
        }
        self.thresholds.validate()?;
        self.fasta.validate()?;
        if let Some(s) = self.z_shift_mm {
            if !s.is_finite() {
                return Err(Error::invalid("z_shift_mm", "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_score: f64,
    pub counts: [usize; 4],
    /// Over successful runs only; `None` when every run failed.
    pub mean_error_mm: Option<f64>,
    pub median_error_mm: Option<f64>,
    pub mean_elapsed_s: f64,
    pub median_elapsed_s: f64,
    pub failures: usize,
}

pub type Summary = BTreeMap<Method, MethodSummary>;

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub pairs: Vec<PairSpec>,
    pub records: Vec<EvalRecord>,
    pub summary: Summary,
    pub plots: Vec<PairPlot>,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(records: &[EvalRecord]) -> Summary {
    let mut by: BTreeMap<Method, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.method).or_default().push(r);
    }
    by.into_iter()
        .map(|(m, rs)| {
            let mut counts = [0usize; 4];
            for r in &rs {
                counts[usize::from(r.category.clamp(1, 4)) - 1] += 1;
            }
            let mut errors: Vec<f64> = rs.iter().filter_map(|r| r.error_mm).collect();
            let mut times: Vec<f64> = rs.iter().map(|r| r.elapsed_s).collect();
            let s = MethodSummary {
                mean_score: rs.iter().map(|r| f64::from(r.category)).sum::<f64>() / rs.len() as f64,
                counts,
                mean_error_mm: mean(&errors),
                median_error_mm: median(&mut errors),
                mean_elapsed_s: mean(&times).unwrap_or(0.0),
                median_elapsed_s: median(&mut times).unwrap_or(0.0),
                failures: rs.iter().filter(|r| r.failed()).count(),
            };
            (m, s)
        })
        .collect()
}

/// Runs one method on one pair, converting any error into a category-4 record.
fn run_method<T: Real, S: SliceScorer<T> + ?Sized>(
    method: Method,
    scorer: &S,
    fixed: &Volume<T>,
    moving: &Volume<T>,
    cfg: &BenchConfig<T>,
) -> (Result<T>, f64) {
    let start = Instant::now();
    let res = match method {
        Method::Fast => fast_prealign_volumes(scorer, fixed, moving),
        Method::L1 => l1_align_volumes(scorer, fixed, moving, &cfg.l1),
        Method::Fasta => fasta_align(fixed, moving, &cfg.fasta),
    };
    (res.map(|r| r.z_offset_mm), start.elapsed().as_secs_f64())
}

/// Every configured method on a single `(fixed, moving)` pair.
pub fn evaluate_pair<T: Real, S: SliceScorer<T> + ?Sized>(
    pair_id: usize,
    scorer: &S,
    fixed: &Volume<T>,
    moving: &Volume<T>,
    true_offset_mm: f64,
    cfg: &BenchConfig<T>,
) -> Vec<EvalRecord> {
    cfg.methods
        .iter()
        .map(|&method| {
            let (res, elapsed_s) = run_method(method, scorer, fixed, moving, cfg);
            let est = res.map(|z| z.as_f64()).and_then(|z| {
                if z.is_finite() {
                    Ok(z)
                } else {
                    Err(Error::invalid("z_offset_mm", "method returned a non-finite offset"))
                }
            });
            match est {
                Ok(z) => {
                    let err = (z - true_offset_mm).abs();
                    EvalRecord {
                        pair_id,
                        method,
                        z_offset_mm: Some(z),
                        true_offset_mm,
                        error_mm: Some(err),
                        category: categorize(err, &cfg.thresholds),
                        elapsed_s,
                        failure: None,
                    }
                }
                Err(e) => EvalRecord {
                    pair_id,
                    method,
                    z_offset_mm: None,
                    true_offset_mm,
                    error_mm: None,
                    category: 4,
                    elapsed_s,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Pair `i` draws from its own ChaCha stream `(seed, i)`, so the pair list does not depend on
/// how pairs are scheduled.
pub fn generate_pairs<T: Real>(
    volumes: &[Volume<T>],
    n_pairs: usize,
    seed: u64,
    z_shift_mm: Option<f64>,
) -> Result<Vec<PairSpec>> {
    let eligible: Vec<usize> = (0..volumes.len())
        .filter(|&i| volumes[i].nz() >= MIN_PAIR_SLICES)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleVolumes);
    }
    (0..n_pairs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let vid = eligible[rng.random_range(0..eligible.len())];
            let spec = sample_pair_spec(vid, &volumes[vid], z_shift_mm.unwrap_or(0.0), &mut rng)?;
            Ok(PairSpec {
                pair_id: i,
                seed,
                ..spec
            })
        })
        .collect()
}

fn plot_for<T: Real, S: SliceScorer<T> + ?Sized>(
    scorer: &S,
    fixed: &Volume<T>,
    moving: &Volume<T>,
    pair_id: usize,
    records: &[EvalRecord],
) -> Result<PairPlot> {
    let curve = |v: &Volume<T>| -> Result<Vec<(f64, f64)>> {
        let c = scorer.score_all(v)?;
        Ok(c.z_mm()
            .iter()
            .zip(c.scores())
            .map(|(z, s)| (z.as_f64(), s.as_f64()))
            .collect())
    };
    // prefer the curve-based estimate for the "after" overlay
    let pick = |m: Method| records.iter().find(|r| r.method == m).and_then(|r| r.z_offset_mm);
    let offset_mm = pick(Method::L1)
        .or_else(|| pick(Method::Fast))
        .or_else(|| pick(Method::Fasta))
        .unwrap_or(0.0);
    Ok(PairPlot {
        pair_id,
        fixed: curve(fixed)?,
        moving: curve(moving)?,
        offset_mm,
    })
}

/// Generates `cfg.n_pairs` crop pairs and runs every method on each. Method failures become
/// category-4 records; only configuration problems abort.
pub fn run_benchmark<T: Real, S: SliceScorer<T> + ?Sized>(
    volumes: &[Volume<T>],
    scorer: &S,
    cfg: &BenchConfig<T>,
) -> Result<BenchOutcome> {
    cfg.validate()?;
    let pairs = generate_pairs(volumes, cfg.n_pairs, cfg.seed, cfg.z_shift_mm)?;
    let per_pair: Vec<(Vec<EvalRecord>, Option<PairPlot>)> = pairs
        .par_iter()
        .map(|p| {
            let fixed = &volumes[p.fixed_volume_id];
            let moving = moving_for(fixed, p)?;
            let recs = evaluate_pair(p.pair_id, scorer, fixed, &moving, p.true_offset_mm, cfg);
            let plot = if p.pair_id < cfg.plot_pairs {
                Some(plot_for(scorer, fixed, &moving, p.pair_id, &recs)?)
            } else {
                None
            };
            Ok((recs, plot))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(pairs.len() * cfg.methods.len());
    let mut plots = Vec::new();
    for (r, p) in per_pair {
        records.extend(r);
        plots.extend(p);
    }
    let summary = summarize(&records);
    Ok(BenchOutcome {
        pairs,
        records,
        summary,
        plots,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearsonReport {
    /// `None` where the scores are constant.
    pub per_volume: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub undefined: usize,
}

/// Pearson correlation of each scan's slice scores with the slice index.
pub fn pearson_report<T: Real, S: SliceScorer<T> + ?Sized>(scorer: &S, volumes: &[Volume<T>]) -> Result<PearsonReport> {
    let per_volume = volumes
        .iter()
        .map(|v| {
            if v.nz() < 2 {
                return Err(Error::VolumeTooShort { nz: v.nz(), needed: 2 });
            }
            let scores: Vec<f64> = scorer.score_all(v)?.scores().iter().map(|s| s.as_f64()).collect();
            let idx: Vec<f64> = (0..scores.len()).map(|i| i as f64).collect();
            match pearson(&scores, &idx) {
                Ok(r) => Ok(Some(r)),
                Err(Error::UndefinedCorrelation) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut defined: Vec<f64> = per_volume.iter().flatten().copied().collect();
    Ok(PearsonReport {
        undefined: per_volume.len() - defined.len(),
        mean: mean(&defined),
        min: defined.iter().copied().reduce(f64::min),
        median: median(&mut defined),
        per_volume,
    })
}

/// `count` standard phantoms with seeds `seed, seed + 1, ...`.
pub fn standard_phantoms<T: Real>(count: usize, seed: u64) -> Result<Vec<Volume<T>>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| make_phantom(&PhantomSpec::standard(seed.wrapping_add(i))))
        .collect()
}
