//! Slice scorers and the score curves they produce.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mix::Mixer;
use crate::scalar::Real;
use crate::ssbr::{slice_features, SliceModel};
use crate::volume::Volume;

/// Tolerance on `|z[i+1] - z[i] - spacing|`, relative to `max(1, |z|)`.
const UNIFORM_TOL: f64 = 1e-6;

/// Per-slice scores at world z positions (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCurve<T> {
    z_mm: Vec<T>,
    scores: Vec<T>,
    spacing_mm: Option<T>,
}

impl<T: Real> ScoreCurve<T> {
    pub fn new(z_mm: Vec<T>, scores: Vec<T>, spacing_mm: Option<T>) -> Result<Self> {
        if z_mm.len() != scores.len() {
            return Err(Error::ShapeMismatch {
                expected: z_mm.len(),
                got: scores.len(),
            });
        }
        if z_mm.is_empty() {
            return Err(Error::EmptyCurve);
        }
        if let Some(i) = z_mm.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneZ { line: i + 2 });
        }
        if let Some(sp) = spacing_mm {
            if !(sp > T::zero()) {
                return Err(Error::invalid("spacing_mm", "must be > 0"));
            }
            let tol = T::lit(UNIFORM_TOL);
            if z_mm
                .windows(2)
                .any(|w| (w[1] - w[0] - sp).abs() > tol * w[1].abs().max(T::one()))
            {
                return Err(Error::invalid("spacing_mm", "z positions are not uniformly spaced"));
            }
        }
        Ok(ScoreCurve {
            z_mm,
            scores,
            spacing_mm,
        })
    }

    /// Uniform curve with `z_k = z0 + k * spacing`.
    pub fn uniform(z0: T, spacing: T, scores: Vec<T>) -> Result<Self> {
        let z = (0..scores.len())
            .map(|k| z0 + T::from_usize_lossy(k) * spacing)
            .collect();
        Self::new(z, scores, Some(spacing))
    }

    pub fn len(&self) -> usize {
        self.z_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_mm.is_empty()
    }

    pub fn z_mm(&self) -> &[T] {
        &self.z_mm
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn spacing_mm(&self) -> Option<T> {
        self.spacing_mm
    }

    /// Declared spacing, or the mean point spacing for non-uniform curves.
    pub fn nominal_spacing(&self) -> Option<T> {
        self.spacing_mm.or_else(|| {
            (self.len() >= 2).then(|| (self.z_mm[self.len() - 1] - self.z_mm[0]) / T::from_usize_lossy(self.len() - 1))
        })
    }

    /// Contiguous sub-curve `start..start + n`.
    pub fn window(&self, start: usize, n: usize) -> Result<Self> {
        if n == 0 || start + n > self.len() {
            return Err(Error::OutOfBounds {
                what: "curve window end",
                index: start + n,
                limit: self.len(),
            });
        }
        Ok(ScoreCurve {
            z_mm: self.z_mm[start..start + n].to_vec(),
            scores: self.scores[start..start + n].to_vec(),
            spacing_mm: self.spacing_mm,
        })
    }

    /// Applies `s -> alpha * s + beta` to every score.
    pub fn map_scores(&self, f: impl Fn(T) -> T) -> Self {
        ScoreCurve {
            z_mm: self.z_mm.clone(),
            scores: self.scores.iter().map(|&s| f(s)).collect(),
            spacing_mm: self.spacing_mm,
        }
    }

    /// Moves every position by `dz` mm.
    pub fn shift_z(&self, dz: T) -> Self {
        ScoreCurve {
            z_mm: self.z_mm.iter().map(|&z| z + dz).collect(),
            scores: self.scores.clone(),
            spacing_mm: self.spacing_mm,
        }
    }
}

/// Assigns a scalar score to an axial slice. Implementations must be deterministic.
pub trait SliceScorer<T: Real>: Sync {
    fn score_slice(&self, vol: &Volume<T>, k: usize) -> Result<T>;

    /// One score per slice, in slice order.
    fn score_all(&self, vol: &Volume<T>) -> Result<ScoreCurve<T>> {
        let scores = (0..vol.nz())
            .into_par_iter()
            .map(|k| self.score_slice(vol, k))
            .collect::<Result<Vec<_>>>()?;
        let z = (0..vol.nz()).map(|k| vol.slice_z(k)).collect();
        ScoreCurve::new(z, scores, Some(vol.spacing()[2]))
    }
}

pub fn score_all<T: Real, S: SliceScorer<T> + ?Sized>(scorer: &S, vol: &Volume<T>) -> Result<ScoreCurve<T>> {
    scorer.score_all(vol)
}

impl<T: Real, S: SliceScorer<T> + ?Sized> SliceScorer<T> for &S {
    fn score_slice(&self, vol: &Volume<T>, k: usize) -> Result<T> {
        (**self).score_slice(vol, k)
    }

    fn score_all(&self, vol: &Volume<T>) -> Result<ScoreCurve<T>> {
        (**self).score_all(vol)
    }
}

impl<T: Real, S: SliceScorer<T> + ?Sized + Send> SliceScorer<T> for Box<S> {
    fn score_slice(&self, vol: &Volume<T>, k: usize) -> Result<T> {
        (**self).score_slice(vol, k)
    }

    fn score_all(&self, vol: &Volume<T>) -> Result<ScoreCurve<T>> {
        (**self).score_all(vol)
    }
}

/// Test double for a trained network: `score = slope * z + offset + noise`.
///
/// The noise for a slice is drawn from a stream keyed by the slice's voxel content and its
/// world z (rounded to 1 um), so a physically identical slice scores identically in any
/// crop of the volume.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleScorer<T> {
    pub slope: T,
    pub offset: T,
    pub noise_sigma: T,
    pub seed: u64,
}

impl<T: Real> OracleScorer<T> {
    pub fn new(slope: T, offset: T, noise_sigma: T, seed: u64) -> Self {
        OracleScorer {
            slope,
            offset,
            noise_sigma,
            seed,
        }
    }

    /// Noise-free `score = z`.
    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), 0)
    }

    fn slice_key(&self, slice: &[T], z: T) -> u64 {
        let mut h = Mixer::new(self.seed);
        h.push((z.as_f64() * 1000.0).round() as i64 as u64);
        for v in slice {
            h.push(v.bits64());
        }
        h.finish()
    }
}

impl<T: Real> SliceScorer<T> for OracleScorer<T> {
    fn score_slice(&self, vol: &Volume<T>, k: usize) -> Result<T> {
        let slice = vol.slice(k)?;
        let z = vol.slice_z(k);
        let mut s = self.slope * z + self.offset;
        if self.noise_sigma != T::zero() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.slice_key(slice, z));
            let n: f64 = StandardNormal.sample(&mut rng);
            s += self.noise_sigma * T::lit(n);
        }
        Ok(s)
    }
}

/// Scores slices with a trained regressor through its own feature pipeline.
#[derive(Clone, Debug)]
pub struct LearnedScorer<T> {
    model: SliceModel<T>,
}

impl<T: Real> LearnedScorer<T> {
    pub fn new(model: SliceModel<T>) -> Result<Self> {
        model.features.validate()?;
        if model.params.input_len() != model.features.len() {
            return Err(Error::ShapeMismatch {
                expected: model.features.len(),
                got: model.params.input_len(),
            });
        }
        Ok(LearnedScorer { model })
    }

    pub fn model(&self) -> &SliceModel<T> {
        &self.model
    }
}

impl<T: Real> SliceScorer<T> for LearnedScorer<T> {
    fn score_slice(&self, vol: &Volume<T>, k: usize) -> Result<T> {
        let x = slice_features(vol, k, &self.model.features)?;
        self.model.params.forward(&x)
    }
}

/// Replays scores from a Score-CSV, looking slices up by world z.
#[derive(Clone, Debug)]
pub struct FileScorer<T> {
    curve: ScoreCurve<T>,
}

impl<T: Real> FileScorer<T> {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(FileScorer {
            curve: read_curve(path)?,
        })
    }

    pub fn from_curve(curve: ScoreCurve<T>) -> Self {
        FileScorer { curve }
    }
}

impl<T: Real> SliceScorer<T> for FileScorer<T> {
    fn score_slice(&self, vol: &Volume<T>, k: usize) -> Result<T> {
        vol.slice(k)?;
        let z = vol.slice_z(k);
        let tol = T::lit(UNIFORM_TOL) * z.abs().max(T::one());
        let zs = self.curve.z_mm();
        let i = zs.partition_point(|&v| v < z - tol);
        match zs.get(i) {
            Some(&v) if (v - z).abs() <= tol => Ok(self.curve.scores()[i]),
            _ => Err(Error::ScoreNotFound(z.as_f64())),
        }
    }
}

/// Counts calls to `score_slice` on the wrapped scorer.
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        CountingScorer {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: Real, S: SliceScorer<T>> SliceScorer<T> for CountingScorer<S> {
    fn score_slice(&self, vol: &Volume<T>, k: usize) -> Result<T> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_slice(vol, k)
    }
}

const CSV_HEADER: &str = "index,z_mm,score";

/// Score-CSV: header `index,z_mm,score`, one row per slice.
pub fn write_curve<T: Real>(curve: &ScoreCurve<T>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{CSV_HEADER}")?;
    for (i, (z, s)) in curve.z_mm().iter().zip(curve.scores()).enumerate() {
        writeln!(out, "{i},{z},{s}")?;
    }
    fs::write(path, out).map_err(Error::at_path(path))
}

pub fn parse_curve<T: Real>(text: &str) -> Result<ScoreCurve<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        None => return Err(Error::EmptyCurve),
        Some((_, l)) if l.trim().trim_start_matches('\u{feff}') == CSV_HEADER => {}
        Some((i, _)) => {
            return Err(Error::MalformedRow {
                line: i + 1,
                reason: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut z = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::RowLengthMismatch {
                line: line_no,
                found: fields.len(),
            });
        }
        let bad = |what: &str| Error::MalformedRow {
            line: line_no,
            reason: format!("cannot parse {what}"),
        };
        let index: usize = fields[0].parse().map_err(|_| bad("index"))?;
        if index != z.len() {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: format!("index {index} out of sequence"),
            });
        }
        let zi: T = fields[1].parse().map_err(|_| bad("z_mm"))?;
        let si: T = fields[2].parse().map_err(|_| bad("score"))?;
        if !(zi.is_finite() && si.is_finite()) {
            return Err(bad("non-finite value"));
        }
        if let Some(&prev) = z.last() {
            if !(zi > prev) {
                return Err(Error::NonMonotoneZ { line: line_no });
            }
        }
        z.push(zi);
        scores.push(si);
    }
    if z.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let spacing = (z.len() >= 2).then(|| z[1] - z[0]).filter(|&sp| {
        let tol = T::lit(UNIFORM_TOL);
        z.windows(2)
            .all(|w| (w[1] - w[0] - sp).abs() <= tol * w[1].abs().max(T::one()))
    });
    ScoreCurve::new(z, scores, spacing)
}

pub fn read_curve<T: Real>(path: &Path) -> Result<ScoreCurve<T>> {
    let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
    parse_curve(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssbr::{DenseLayer, FeatureSpec, RegressorParams};
    use crate::volume::{make_phantom, PhantomSpec};

    fn vol(nz: usize, oz: f64, sz: f64) -> Volume<f64> {
        Volume::from_fn([4, 4, nz], [1.0, 1.0, sz], [0.0, 0.0, oz], |x, y, z| {
            (x + 3 * y + 7 * z) as f64
        })
        .unwrap()
    }

    #[test]
    fn oracle_identity_is_z() {
        let v = vol(3, 0.0, 2.0);
        let c = OracleScorer::identity().score_all(&v).unwrap();
        assert_eq!(c.z_mm(), &[0.0, 2.0, 4.0]);
        assert_eq!(c.scores(), &[0.0, 2.0, 4.0]);
        assert_eq!(c.spacing_mm(), Some(2.0));
        let one = vol(1, 5.0, 2.0);
        assert_eq!(score_all(&OracleScorer::identity(), &one).unwrap().len(), 1);
    }

    #[test]
    fn oracle_world_anchored_under_crop() {
        let v = make_phantom::<f64>(&PhantomSpec::standard(4)).unwrap();
        let o = OracleScorer::new(0.7, -3.0, 2.0, 9);
        let full = o.score_all(&v).unwrap();
        let crop = o.score_all(&v.crop_subvolume(10, 20).unwrap()).unwrap();
        assert_eq!(crop, full.window(10, 20).unwrap());
    }

    #[test]
    fn oracle_noise_variance() {
        let v = Volume::from_fn([2, 2, 10_000], [1.0, 1.0, 0.5], [0.0; 3], |x, _, z| (x + z) as f64).unwrap();
        let o = OracleScorer::new(0.0, 0.0, 2.0, 1);
        let c = o.score_all(&v).unwrap();
        let n = c.len() as f64;
        let mean = c.scores().iter().sum::<f64>() / n;
        let var = c.scores().iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 4.0).abs() < 0.4, "variance {var}");
    }

    #[test]
    fn learned_scorer_behaviour() {
        let spec = FeatureSpec {
            side: 4,
            intensity_scale: 0.01,
        };
        let zero = RegressorParams::new(vec![
            DenseLayer::<f64>::zeros(16, 3, crate::ssbr::Activation::Tanh),
            DenseLayer::zeros(3, 1, crate::ssbr::Activation::Identity),
        ])
        .unwrap();
        let s = LearnedScorer::new(SliceModel {
            params: zero,
            features: spec,
        })
        .unwrap();
        let v = vol(5, 0.0, 1.0);
        assert!(s.score_all(&v).unwrap().scores().iter().all(|&x| x == 0.0));

        let rnd = LearnedScorer::new(SliceModel {
            params: RegressorParams::init(16, &[5], 3).unwrap(),
            features: spec,
        })
        .unwrap();
        let c = Volume::from_fn([7, 9, 6], [1.0; 3], [0.0; 3], |_, _, _| 33.0f64).unwrap();
        let curve = rnd.score_all(&c).unwrap();
        assert!(curve.scores().iter().all(|&x| x == curve.scores()[0]));

        let p = make_phantom::<f64>(&PhantomSpec {
            dims: [16, 16, 12],
            ..PhantomSpec::standard(2)
        })
        .unwrap();
        let all = rnd.score_all(&p).unwrap();
        for k in 0..p.nz() {
            assert_eq!(all.scores()[k], rnd.score_slice(&p, k).unwrap());
        }

        let mismatched = SliceModel {
            params: RegressorParams::<f64>::init(15, &[5], 3).unwrap(),
            features: spec,
        };
        assert!(matches!(
            LearnedScorer::new(mismatched),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip_and_file_scorer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let v = vol(9, -12.5, 2.5);
        let curve = OracleScorer::new(0.37, 1.0 / 3.0, 0.5, 2).score_all(&v).unwrap();
        write_curve(&curve, &p).unwrap();
        let back = read_curve::<f64>(&p).unwrap();
        assert_eq!(back.z_mm(), curve.z_mm());
        assert_eq!(back.scores(), curve.scores());
        assert_eq!(back.spacing_mm(), Some(2.5));

        let fs = FileScorer::<f64>::open(&p).unwrap();
        assert_eq!(fs.score_all(&v).unwrap().scores(), curve.scores());
        assert_eq!(
            fs.score_all(&v.crop_subvolume(2, 4).unwrap()).unwrap().scores(),
            &curve.scores()[2..6]
        );
        assert!(matches!(
            fs.score_slice(&vol(3, 1000.0, 2.5), 0),
            Err(Error::ScoreNotFound(_))
        ));
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_curve::<f64>(""), Err(Error::EmptyCurve)));
        assert!(matches!(
            parse_curve::<f64>("index,z_mm,score\n"),
            Err(Error::EmptyCurve)
        ));
        assert!(matches!(
            parse_curve::<f64>("index,z_mm,score\n0,2.0,1\n1,1.0,2\n"),
            Err(Error::NonMonotoneZ { line: 3 })
        ));
        assert!(matches!(
            parse_curve::<f64>("index,z_mm,score\n0,2.0\n"),
            Err(Error::RowLengthMismatch { line: 2, found: 2 })
        ));
        assert!(matches!(
            parse_curve::<f64>("index,z_mm,score\n0,abc,1\n"),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            parse_curve::<f64>("z,score\n0,1\n"),
            Err(Error::MalformedRow { line: 1, .. })
        ));
        let c = parse_curve::<f64>("index,z_mm,score\n0,0,1\n1,1,2\n2,3,2\n").unwrap();
        assert_eq!(c.spacing_mm(), None);
    }

    #[test]
    fn counting_wrapper() {
        let c = CountingScorer::new(OracleScorer::<f64>::identity());
        c.score_all(&vol(6, 0.0, 1.0)).unwrap();
        assert_eq!(c.calls(), 6);
    }
}
