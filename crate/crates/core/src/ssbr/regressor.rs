//! Small feed-forward slice regressor with hand-written backpropagation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeatureSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Fully connected layer; `weights` is `n_out x n_in`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        DenseLayer {
            n_in,
            n_out,
            weights: vec![T::zero(); n_in * n_out],
            bias: vec![T::zero(); n_out],
            activation,
        }
    }

    fn apply(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for (row, &b) in self.weights.chunks_exact(self.n_in).zip(&self.bias) {
            let mut acc = b;
            for (&w, &xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(match self.activation {
                Activation::Identity => acc,
                Activation::Tanh => acc.tanh(),
            });
        }
    }
}

/// Layer stack mapping a slice feature vector to a single score.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorParams<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Real> RegressorParams<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::invalid("layers", "need at least one layer"))?;
        if last.n_out != 1 {
            return Err(Error::invalid("layers", "last layer must have one output"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.n_in == 0 || l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::invalid("layers", format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].n_out != l.n_in {
                return Err(Error::ShapeMismatch {
                    expected: layers[i - 1].n_out,
                    got: l.n_in,
                });
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid("layers", format!("layer {i} has non-finite values")));
            }
        }
        Ok(RegressorParams { layers })
    }

    /// Tanh hidden layers of the given widths followed by a linear output, Xavier-uniform
    /// weights and zero biases.
    pub fn init(n_in: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut prev = n_in;
        let widths = hidden
            .iter()
            .map(|&h| (h, Activation::Tanh))
            .chain([(1, Activation::Identity)]);
        for (width, act) in widths {
            let limit = (6.0 / (prev + width) as f64).sqrt();
            let mut layer = DenseLayer::zeros(prev, width, act);
            for w in &mut layer.weights {
                *w = T::lit(rng.random_range(-limit..limit));
            }
            layers.push(layer);
            prev = width;
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub(crate) fn zeros_like(&self) -> Self {
        RegressorParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.n_in, l.n_out, l.activation))
                .collect(),
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::ShapeMismatch {
                expected: self.input_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<T> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.apply(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Forward pass keeping every layer output (the input is not copied).
    pub(crate) fn forward_trace(&self, x: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_input(x)?;
        let mut outs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(l.n_out);
            l.apply(if i == 0 { x } else { &outs[i - 1] }, &mut out);
            outs.push(out);
        }
        Ok(outs)
    }

    /// Adds `d_score * d(score)/d(params)` into `grads`.
    pub(crate) fn backward(&self, x: &[T], trace: &[Vec<T>], d_score: T, grads: &mut Self) {
        let mut delta = vec![d_score];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let out = &trace[li];
            if layer.activation == Activation::Tanh {
                for (d, &y) in delta.iter_mut().zip(out) {
                    *d *= T::one() - y * y;
                }
            }
            let input: &[T] = if li == 0 { x } else { &trace[li - 1] };
            let g = &mut grads.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, &xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if li > 0 {
                let mut prev = vec![T::zero(); layer.n_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }

    /// `self -= rate * grads`.
    pub(crate) fn descend(&mut self, grads: &Self, rate: T) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &gw) in l.weights.iter_mut().zip(&g.weights) {
                *w -= rate * gw;
            }
            for (b, &gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= rate * gb;
            }
        }
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }
}

const MAGIC: &str = "ssbr-regressor";
const VERSION: u32 = 1;

/// A trained regressor together with the feature pipeline it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceModel<T> {
    pub params: RegressorParams<T>,
    pub features: FeatureSpec,
}

impl<T: Real> SliceModel<T> {
    /// Text container: a version line, the feature spec, then each layer's shape,
    /// activation, row-major weights and bias.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(s, "feature_side {}", self.features.side);
        let _ = writeln!(s, "intensity_scale {}", self.features.intensity_scale);
        let _ = writeln!(s, "layers {}", self.params.layers.len());
        for l in &self.params.layers {
            let _ = writeln!(s, "dense {} {} {}", l.n_in, l.n_out, l.activation.name());
            for row in l.weights.chunks_exact(l.n_in) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
            let line: Vec<String> = l.bias.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tok = text.split_whitespace();
        let mut next = |what: &'static str| {
            tok.next()
                .ok_or_else(|| Error::invalid("model file", format!("missing {what}")))
        };
        let bad = |what: &'static str| Error::invalid("model file", format!("malformed {what}"));

        if next("magic")? != MAGIC {
            return Err(bad("magic"));
        }
        let version: u32 = next("version")?.parse().map_err(|_| bad("version"))?;
        if version != VERSION {
            return Err(Error::invalid("model file", format!("unsupported version {version}")));
        }
        if next("feature_side")? != "feature_side" {
            return Err(bad("feature_side"));
        }
        let side: usize = next("feature_side")?.parse().map_err(|_| bad("feature_side"))?;
        if next("intensity_scale")? != "intensity_scale" {
            return Err(bad("intensity_scale"));
        }
        let intensity_scale: f64 = next("intensity_scale")?.parse().map_err(|_| bad("intensity_scale"))?;
        if next("layers")? != "layers" {
            return Err(bad("layers"));
        }
        let n_layers: usize = next("layers")?.parse().map_err(|_| bad("layers"))?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            if next("dense")? != "dense" {
                return Err(bad("layer header"));
            }
            let n_in: usize = next("n_in")?.parse().map_err(|_| bad("n_in"))?;
            let n_out: usize = next("n_out")?.parse().map_err(|_| bad("n_out"))?;
            let activation = Activation::parse(next("activation")?).ok_or_else(|| bad("activation"))?;
            let mut layer = DenseLayer::zeros(n_in, n_out, activation);
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = next("value")?.parse::<T>().map_err(|_| bad("value"))?;
            }
            layers.push(layer);
        }
        let model = SliceModel {
            params: RegressorParams::new(layers)?,
            features: FeatureSpec { side, intensity_scale },
        };
        if model.params.input_len() != model.features.len() {
            return Err(Error::ShapeMismatch {
                expected: model.features.len(),
                got: model.params.input_len(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(Error::at_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::from_text(&text)
    }
}
