//! Slice-score based z-prealignment of volumetric scans.
//!
//! A small regressor is trained without labels to give each axial slice a score that grows
//! linearly with body height. Two scans are then prealigned along z either from three slice
//! scores or by sliding one score curve along the other. A brute-force SSD translation
//! search serves as the non-learning baseline, and [`eval`] runs all three on synthetic
//! phantom crops with known ground truth.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below fix the
//! scalar for common use.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fasta;
mod mix;
pub mod scalar;
pub mod scorer;
pub mod ssbr;
pub mod volume;

pub use align::{AlignmentResult, L1Config, Method};
pub use error::{Error, Result};
pub use fasta::FastaConfig;
pub use scalar::Real;
pub use scorer::{LearnedScorer, OracleScorer, ScoreCurve, SliceScorer};
pub use ssbr::{FeatureSpec, RegressorParams, SliceModel, TrainConfig};
pub use volume::{PhantomSpec, Volume};

pub type VolumeF32 = Volume<f32>;
pub type VolumeF64 = Volume<f64>;
pub type ScoreCurveF32 = ScoreCurve<f32>;
pub type ScoreCurveF64 = ScoreCurve<f64>;
pub type AlignmentResultF32 = AlignmentResult<f32>;
pub type AlignmentResultF64 = AlignmentResult<f64>;
pub type RegressorParamsF32 = RegressorParams<f32>;
pub type RegressorParamsF64 = RegressorParams<f64>;
pub type SliceModelF32 = SliceModel<f32>;
pub type SliceModelF64 = SliceModel<f64>;
pub type L1ConfigF64 = L1Config<f64>;
pub type FastaConfigF64 = FastaConfig<f64>;
