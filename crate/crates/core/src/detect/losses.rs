//! Detection losses with analytic gradients, verified against central finite
//! differences. These exist for gradient verification of the heads, not for
//! a training loop.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smooth L1 over a prediction/target pair, summed over elements:
/// `0.5 d^2 / beta` for `|d| < beta`, else `|d| - 0.5 beta`. Returns the loss
/// and the gradient with respect to the predictions.
pub fn smooth_l1<T: Real>(pred: &[T], target: &[T], beta: T) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "smooth_l1 lengths {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if beta <= T::zero() {
        return Err(Error::config(format!("beta must be > 0, got {beta}")));
    }
    let half = T::c(0.5);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let d = *p - *t;
        if d.abs() < beta {
            loss += half * d * d / beta;
            grad.push(d / beta);
        } else {
            loss += d.abs() - half * beta;
            grad.push(d.signum());
        }
    }
    Ok((loss, grad))
}

/// Probability clamp applied before the logs in [`focal_loss`].
pub fn focal_clamp<T: Real>(p: T) -> T {
    let lo = T::c(1e-7);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

/// Focal loss over predicted probabilities with binary targets, summed:
/// `-alpha (1-p)^gamma ln p` for positives and `-(1-alpha) p^gamma ln(1-p)`
/// for negatives. Probabilities are clamped to [1e-7, 1 - 1e-7] before the
/// logs. Returns the loss and the gradient with respect to the (unclamped)
/// probabilities.
pub fn focal_loss<T: Real>(
    probs: &[T],
    targets: &[bool],
    alpha: T,
    gamma: T,
) -> Result<(T, Vec<T>)> {
    if probs.len() != targets.len() {
        return Err(Error::shape(format!(
            "focal_loss lengths {} vs {}",
            probs.len(),
            targets.len()
        )));
    }
    let one = T::one();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(probs.len());
    for (p0, t) in probs.iter().zip(targets) {
        let p = focal_clamp(*p0);
        let at_clamp = p != *p0;
        if *t {
            let q = one - p;
            loss += -alpha * q.powf(gamma) * p.ln();
            let g = if gamma == T::zero() {
                -alpha / p
            } else {
                -alpha * (-gamma * q.powf(gamma - one) * p.ln() + q.powf(gamma) / p)
            };
            grad.push(if at_clamp { T::zero() } else { g });
        } else {
            let q = one - p;
            loss += -(one - alpha) * p.powf(gamma) * q.ln();
            let g = if gamma == T::zero() {
                (one - alpha) / q
            } else {
                -(one - alpha) * (gamma * p.powf(gamma - one) * q.ln() - p.powf(gamma) / q)
            };
            grad.push(if at_clamp { T::zero() } else { g });
        }
    }
    Ok((loss, grad))
}
