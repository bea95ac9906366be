//! Plain gradient-descent training of the slice regressor on unlabeled volumes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{grad_loss_ssbr, sample_stack, slice_features, FeatureSpec, RegressorParams, SliceModel};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::Volume;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Stacks per iteration.
    pub batch_size: usize,
    /// Slices per stack.
    pub m: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub features: FeatureSpec,
    /// Widths of the tanh hidden layers.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            m: 8,
            learning_rate: 1e-3,
            iterations: 2000,
            seed: 0,
            features: FeatureSpec::default(),
            hidden: vec![32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if self.m < 3 {
            return Err(Error::invalid("m", "must be >= 3"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be >= 1"));
        }
        self.features.validate()
    }

    /// Parameters before the first update.
    pub fn initial_params<T: Real>(&self) -> Result<RegressorParams<T>> {
        RegressorParams::init(self.features.len(), &self.hidden, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: SliceModel<T>,
    /// Batch loss at each iteration, measured before that iteration's update.
    pub trace: Vec<T>,
}

pub fn train_regressor<T: Real>(volumes: &[Volume<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if volumes.is_empty() {
        return Err(Error::invalid("volumes", "need at least one training volume"));
    }
    if let Some(v) = volumes.iter().find(|v| v.nz() < cfg.m) {
        return Err(Error::VolumeTooShort {
            nz: v.nz(),
            needed: cfg.m,
        });
    }

    let features: Vec<Vec<Vec<T>>> = volumes
        .iter()
        .map(|v| {
            (0..v.nz())
                .into_par_iter()
                .map(|k| slice_features(v, k, &cfg.features))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut params = cfg.initial_params::<T>()?;
    // separate stream from the weight initialisation
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let rate = T::lit(cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let stacks = (0..cfg.batch_size)
            .map(|_| {
                let vid = rng.random_range(0..volumes.len());
                sample_stack(vid, volumes[vid].nz(), cfg.m, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let traces: Vec<Vec<Vec<Vec<T>>>> = stacks
            .par_iter()
            .map(|s| {
                s.slice_indices
                    .iter()
                    .map(|&k| params.forward_trace(&features[s.volume_id][k]))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let scores: Vec<Vec<T>> = traces
            .iter()
            .map(|st| st.iter().map(|t| t.last().expect("output layer")[0]).collect())
            .collect();

        let (loss, d_scores) = grad_loss_ssbr(&scores)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(iter));
        }
        trace.push(loss);

        let per_stack: Vec<RegressorParams<T>> = stacks
            .par_iter()
            .zip(&traces)
            .zip(&d_scores)
            .map(|((s, st), ds)| {
                let mut g = params.zeros_like();
                for ((&k, t), &d) in s.slice_indices.iter().zip(st).zip(ds) {
                    params.backward(&features[s.volume_id][k], t, d, &mut g);
                }
                g
            })
            .collect();
        // fixed reduction order keeps results independent of the thread count
        let mut grads = params.zeros_like();
        for g in &per_stack {
            for (acc, &v) in grads.values_mut().zip(g.values()) {
                *acc += v;
            }
        }
        params.descend(&grads, rate);
        if params.values().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(iter + 1));
        }
    }

    Ok(TrainOutcome {
        model: SliceModel {
            params,
            features: cfg.features,
        },
        trace,
    })
}

/// CSV with header `iteration,loss`.
pub fn write_loss_trace<T: Real>(trace: &[T], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    fs::write(path, out).map_err(Error::at_path(path))
}
