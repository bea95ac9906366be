//! Ordering + equal-spacing loss over stacks of slice scores, with analytic gradients.
//!
//! For a stack `s_0..s_{m-1}` with differences `d_i = s_{i+1} - s_i`:
//!
//! ```text
//! order(s) = sum_{i=0}^{m-2} -log sigmoid(d_i)
//! dist(s)  = sum_{i=0}^{m-3} smooth_l1(d_{i+1} - d_i)
//! L(batch) = mean over stacks of order + dist
//! ```

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Logistic sigmoid, evaluated without overflow for any finite input.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))`, stable in both tails.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Smooth L1 with unit threshold: `x^2 / 2` inside `|x| < 1`, `|x| - 1/2` outside.
pub fn smooth_l1<T: Real>(x: T) -> T {
    let a = x.abs();
    if a < T::one() {
        T::lit(0.5) * x * x
    } else {
        a - T::lit(0.5)
    }
}

fn smooth_l1_grad<T: Real>(x: T) -> T {
    if x.abs() < T::one() {
        x
    } else {
        x.signum()
    }
}

/// Penalty for non-increasing consecutive scores. Zero terms for stacks shorter than 2.
pub fn loss_order<T: Real>(scores: &[T]) -> T {
    scores.windows(2).map(|w| softplus(w[0] - w[1])).sum()
}

/// Penalty for unequal consecutive differences. Zero terms for stacks shorter than 3.
pub fn loss_dist<T: Real>(scores: &[T]) -> T {
    scores.windows(3).map(|w| smooth_l1(w[2] - w[1] - (w[1] - w[0]))).sum()
}

fn check_batch<T: Real, S: AsRef<[T]>>(batch: &[S]) -> Result<usize> {
    let first = batch.first().ok_or(Error::EmptyBatch)?.as_ref().len();
    if first < 2 {
        return Err(Error::invalid("stack length", format!("{first} < 2")));
    }
    if let Some(bad) = batch.iter().find(|s| s.as_ref().len() != first) {
        return Err(Error::ShapeMismatch {
            expected: first,
            got: bad.as_ref().len(),
        });
    }
    Ok(first)
}

/// Mean over stacks of `loss_order + loss_dist`.
pub fn loss_ssbr<T: Real, S: AsRef<[T]>>(batch: &[S]) -> Result<T> {
    check_batch(batch)?;
    let total: T = batch
        .iter()
        .map(|s| loss_order(s.as_ref()) + loss_dist(s.as_ref()))
        .sum();
    Ok(total / T::from_usize_lossy(batch.len()))
}

/// Loss value and `dL/ds` for every score of every stack.
pub fn grad_loss_ssbr<T: Real, S: AsRef<[T]>>(batch: &[S]) -> Result<(T, Vec<Vec<T>>)> {
    let m = check_batch(batch)?;
    let inv_k = T::one() / T::from_usize_lossy(batch.len());
    let two = T::lit(2.0);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(batch.len());
    for stack in batch {
        let s = stack.as_ref();
        let mut g = vec![T::zero(); m];
        total += loss_order(s) + loss_dist(s);
        for i in 0..m - 1 {
            // d/dd softplus(-d) = -sigmoid(-d)
            let w = sigmoid(s[i] - s[i + 1]) * inv_k;
            g[i] += w;
            g[i + 1] -= w;
        }
        for i in 0..m.saturating_sub(2) {
            let w = smooth_l1_grad(s[i + 2] - s[i + 1] - (s[i + 1] - s[i])) * inv_k;
            g[i] += w;
            g[i + 1] -= two * w;
            g[i + 2] += w;
        }
        grads.push(g);
    }
    Ok((total * inv_k, grads))
}
