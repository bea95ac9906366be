//! Self-supervised slice-score regression: loss, stack sampling, a small regressor and
//! its training loop.

mod loss;
mod regressor;
mod sampler;
mod train;

pub use loss::{grad_loss_ssbr, loss_dist, loss_order, loss_ssbr, sigmoid, smooth_l1, softplus};
pub use regressor::{Activation, DenseLayer, RegressorParams, SliceModel};
pub use sampler::{sample_stack, StackSample};
pub use train::{train_regressor, write_loss_trace, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{resample_slice, Volume};

/// Side length slices are resampled to before feature pooling.
pub const SLICE_RESAMPLE_SIZE: usize = 128;

/// How a slice becomes a regressor input: resample to 128x128, block-average down to
/// `side x side`, multiply by `intensity_scale`, flatten x-fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub side: usize,
    pub intensity_scale: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            side: 16,
            intensity_scale: 1e-3,
        }
    }
}

impl FeatureSpec {
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || !SLICE_RESAMPLE_SIZE.is_multiple_of(self.side) {
            return Err(Error::invalid(
                "feature side",
                format!("{} must divide {SLICE_RESAMPLE_SIZE}", self.side),
            ));
        }
        if !(self.intensity_scale.is_finite() && self.intensity_scale != 0.0) {
            return Err(Error::invalid("intensity_scale", "must be finite and nonzero"));
        }
        Ok(())
    }
}

pub fn slice_features<T: Real>(vol: &Volume<T>, k: usize, spec: &FeatureSpec) -> Result<Vec<T>> {
    spec.validate()?;
    let full = resample_slice(vol, k, (SLICE_RESAMPLE_SIZE, SLICE_RESAMPLE_SIZE))?;
    let pooled = full.block_mean(spec.side)?;
    let scale = T::lit(spec.intensity_scale);
    Ok(pooled.data.into_iter().map(|v| v * scale).collect())
}

/// Pearson correlation coefficient.
pub fn pearson<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("pearson input", "need at least 2 points"));
    }
    let n = T::from_usize_lossy(a.len());
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return Err(Error::UndefinedCorrelation);
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let p = [0.0f64, 1.0, 2.0, 3.0, 7.5];
        assert_relative_eq!(pearson(&p, &p).unwrap(), 1.0, epsilon = 1e-15);
        let n: Vec<f64> = p.iter().map(|x| -x).collect();
        assert_relative_eq!(pearson(&n, &p).unwrap(), -1.0, epsilon = 1e-15);
        // mpmath reference 0.95916630466254390...
        let r = pearson(&[1.0f64, 2.0, 4.0, 8.0], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(r, 0.959_166_304_662_543_9, max_relative = 1e-12);
        assert!(matches!(
            pearson(&[1.0f64, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(Error::UndefinedCorrelation)
        ));
        assert!(pearson(&[1.0f64], &[1.0]).is_err());
        assert!(pearson(&[1.0f64, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_bounded_and_affine_invariant(
            xs in prop::collection::vec(-100.0f64..100.0, 3..40),
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
        ) {
            let pos: Vec<f64> = (0..xs.len()).map(|i| i as f64).collect();
            if let Ok(r) = pearson(&xs, &pos) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r2 = pearson(&ys, &pos).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn features_of_constant_slice() {
        let v = Volume::from_fn([20, 12, 2], [1.0; 3], [0.0; 3], |_, _, z| 50.0 * (z as f64 + 1.0)).unwrap();
        let f = slice_features(&v, 1, &FeatureSpec::default()).unwrap();
        assert_eq!(f.len(), 256);
        assert!(f.iter().all(|&x| (x - 0.1).abs() < 1e-12));
        assert!(slice_features(
            &v,
            0,
            &FeatureSpec {
                side: 3,
                intensity_scale: 1.0
            }
        )
        .is_err());
    }
}
