use ndarray::{Array2, Axis};

use super::{sigmoid, LossFamily};
use crate::{Error, Result};

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean over the batch of the per-sample reconstruction loss, where `z` is
/// the decoder pre-activation.
///
/// Bernoulli: `Σ_v softplus(z) - x z`, which equals the cross-entropy
/// `-x ln σ(z) - (1-x) ln(1-σ(z))` and stays finite for any finite `z`.
/// Gaussian: `½ Σ_v (x - z)²`.
pub fn reconstruction_loss(x: &Array2<f64>, z: &Array2<f64>, family: LossFamily) -> Result<f64> {
    if x.dim() != z.dim() {
        return Err(Error::Shape(format!("targets {:?} vs reconstruction {:?}", x.dim(), z.dim())));
    }
    let batch = x.nrows().max(1) as f64;
    let total: f64 = match family {
        LossFamily::Bernoulli => {
            if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("bernoulli target {bad} outside [0, 1]")));
            }
            x.iter().zip(z).map(|(&x, &z)| softplus(z) - x * z).sum()
        }
        LossFamily::Gaussian => x.iter().zip(z).map(|(&x, &z)| 0.5 * (x - z) * (x - z)).sum(),
    };
    Ok(total / batch)
}

/// Gradient of [`reconstruction_loss`] with respect to `z`.
pub fn reconstruction_grad(x: &Array2<f64>, z: &Array2<f64>, family: LossFamily) -> Array2<f64> {
    let batch = x.nrows().max(1) as f64;
    let mut g = match family {
        LossFamily::Bernoulli => z.mapv(sigmoid) - x,
        LossFamily::Gaussian => z - x,
    };
    g /= batch;
    g
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Argument(format!("label {y} but the head has {c} classes")));
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[[i, y]] -= 1.0;
    }
    let bf = b.max(1) as f64;
    grad /= bf;
    Ok((loss / bf, grad))
}

/// Independent per-task binary cross-entropy on logits. `NaN` targets are
/// skipped. The loss is summed over observed tasks and averaged over the batch.
pub fn multitask_bce(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::Shape(format!("logits {:?} vs targets {:?}", logits.dim(), targets.dim())));
    }
    let bf = logits.nrows().max(1) as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((idx, &z), &y) in logits.indexed_iter().zip(targets) {
        if y.is_nan() {
            continue;
        }
        loss += softplus(z) - y * z;
        grad[idx] = (sigmoid(z) - y) / bf;
    }
    Ok((loss / bf, grad))
}

/// `strength · Σ|w|`.
pub fn l1_penalty<'a>(weights: impl IntoIterator<Item = &'a f64>, strength: f64) -> f64 {
    strength * weights.into_iter().map(|w| w.abs()).sum::<f64>()
}

/// Subgradient `strength · sign(w)`, taking 0 at `w = 0`.
pub fn l1_penalty_grad(weights: &Array2<f64>, strength: f64) -> Array2<f64> {
    weights.mapv(|w| {
        if w > 0.0 {
            strength
        } else if w < 0.0 {
            -strength
        } else {
            0.0
        }
    })
}
