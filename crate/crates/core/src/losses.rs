//! Training objectives: ME cross-entropy, multi-label AU loss, the adaptive
//! weighted combination over layers, and the total loss.
//!
//! All batched losses take `[B, ...]` logits and are mean-reduced over the
//! batch (and, for AU losses, over the label vocabulary).

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Below this, `sum W^2` is treated as zero and the weights are rejected.
pub const WEIGHT_NORM_FLOOR: f64 = 1e-12;

fn rows_cols(op: &'static str, logits: &Tensor) -> Result<(usize, usize)> {
    match *logits.shape() {
        [c] => Ok((1, c)),
        [b, c] => Ok((b, c)),
        _ => Err(Error::Rank {
            op,
            expected: "[C] or [B, C] logits",
            got: logits.shape().to_vec(),
        }),
    }
}

/// Cross-entropy `-log softmax(logits)[label]`, averaged over the batch.
pub fn me_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = rows_cols("me_loss", logits)?;
    if labels.len() != b {
        return Err(Error::Shape {
            op: "me_loss",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let mut one_hot = vec![0.0; b * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidParameter(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        one_hot[i * c + y] = 1.0;
    }
    let target = Tensor::from_vec(logits.shape(), one_hot)?;
    let picked = logits.log_softmax()?.mul(&target)?.sum();
    Ok(picked.scale(-1.0 / b as f64))
}

/// Multi-label soft-margin loss
/// `-(1/K) sum_k [y_k log sigma(x_k) + (1 - y_k) log sigma(-x_k)]`,
/// averaged over the batch. Computed as `softplus(x) - y x`, which is the
/// same quantity without evaluating `log(sigmoid)`.
pub fn au_loss(logits: &Tensor, targets: &[Vec<u8>]) -> Result<Tensor> {
    let (b, k) = rows_cols("au_loss", logits)?;
    if targets.len() != b || targets.iter().any(|t| t.len() != k) {
        return Err(Error::Shape {
            op: "au_loss",
            left: logits.shape().to_vec(),
            right: vec![targets.len(), targets.first().map_or(0, Vec::len)],
        });
    }
    let mut y = Vec::with_capacity(b * k);
    for row in targets {
        for &v in row {
            if v > 1 {
                return Err(Error::InvalidParameter("AU targets must be 0/1".into()));
            }
            y.push(f64::from(v));
        }
    }
    let y = Tensor::from_vec(logits.shape(), y)?;
    logits.softplus().sub(&logits.mul(&y)?).map(|t| t.mean())
}

/// `w_r = W_r^2 / sum W^2` on plain numbers.
pub fn normalized_weights(w: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = w.iter().map(|v| v * v).sum();
    if !(total >= WEIGHT_NORM_FLOOR) {
        return Err(Error::DivisionByZero("AAU weights have (near-)zero norm"));
    }
    Ok(w.iter().map(|v| v * v / total).collect())
}

/// Differentiable `W^2 / sum W^2`.
pub fn normalized_aau_weights(weights: &Tensor) -> Result<Tensor> {
    let sq = weights.square();
    let total = sq.sum();
    if !(total.item() >= WEIGHT_NORM_FLOOR) {
        return Err(Error::DivisionByZero("AAU weights have (near-)zero norm"));
    }
    sq.div(&total)
}

fn stack_scalars(op: &'static str, losses: &[Tensor]) -> Result<Tensor> {
    if losses.is_empty() {
        return Err(Error::Empty(op));
    }
    let mut parts = Vec::with_capacity(losses.len());
    for l in losses {
        if l.numel() != 1 {
            return Err(Error::NotScalar(l.shape().to_vec()));
        }
        parts.push(l.reshape(&[1])?);
    }
    Tensor::concat(&parts, 0)
}

/// `sum_r W_r^2 L_r / sum_r W_r^2`: a convex combination of the per-layer
/// losses with learnable, scale-free weights.
pub fn aau_loss(layer_losses: &[Tensor], weights: &Tensor) -> Result<Tensor> {
    if layer_losses.len() < 2 {
        return Err(Error::Config(format!(
            "the adaptive AU loss needs at least 2 layer losses, got {}",
            layer_losses.len()
        )));
    }
    if weights.shape() != [layer_losses.len()] {
        return Err(Error::Shape {
            op: "aau_loss",
            left: weights.shape().to_vec(),
            right: vec![layer_losses.len()],
        });
    }
    let l = stack_scalars("aau_loss", layer_losses)?;
    Ok(normalized_aau_weights(weights)?.mul(&l)?.sum())
}

/// Plain sum of the per-layer AU losses.
pub fn unweighted_multilayer_loss(layer_losses: &[Tensor]) -> Result<Tensor> {
    Ok(stack_scalars("unweighted_multilayer_loss", layer_losses)?.sum())
}

/// `L_me + beta * L_aux`. With `beta == 0` the ME loss is returned unchanged.
pub fn total_loss(l_me: &Tensor, l_aux: &Tensor, beta: f64) -> Result<Tensor> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "beta must be a finite value >= 0, got {beta}"
        )));
    }
    if l_me.numel() != 1 || l_aux.numel() != 1 {
        return Err(Error::NotScalar(
            if l_me.numel() != 1 {
                l_me.shape()
            } else {
                l_aux.shape()
            }
            .to_vec(),
        ));
    }
    if beta == 0.0 {
        return Ok(l_me.clone());
    }
    l_me.add(&l_aux.scale(beta))
}
