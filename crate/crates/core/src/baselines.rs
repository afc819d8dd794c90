//! Comparison models: fully connected networks, magnitude pruning with
//! retraining, and L1-regularized training. All of them are represented as
//! [`TrfNetwork`]s (with all-ones or pruned masks) and share its training
//! and evaluation code.

use ndarray::Array2;

use crate::builder::{attach_head_for, evaluate, finetune, EvalReport, FinetuneHyper, TrfNetwork};
use crate::data::Dataset;
use crate::nn::MaskedLayer;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Weights below this magnitude count as removed for effective sparsity.
pub const L1_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetConfig {
    pub hidden: Vec<usize>,
    pub finetune: FinetuneHyper,
    /// Layer `k` is initialized from `seed + k`, the head from
    /// `seed + hidden.len()`.
    pub seed: u64,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        DenseNetConfig {
            hidden: vec![256, 256],
            finetune: FinetuneHyper::default(),
            seed: 0,
        }
    }
}

/// An untrained fully connected network with a head sized for `d`'s labels.
pub fn dense_network(d: &Dataset, cfg: &DenseNetConfig) -> Result<TrfNetwork> {
    if cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
        return Err(Error::Argument("hidden widths must be a nonempty list of positive sizes".into()));
    }
    let mut inputs = d.n_features();
    let mut layers = Vec::with_capacity(cfg.hidden.len());
    for (k, &h) in cfg.hidden.iter().enumerate() {
        let rng = &mut rng::stream(cfg.seed.wrapping_add(k as u64), Stream::Init);
        layers.push(MaskedLayer::new(Array2::from_elem((h, inputs), true), cfg.finetune.activation, rng));
        inputs = h;
    }
    let widths: Vec<String> = cfg.hidden.iter().map(usize::to_string).collect();
    let provenance = vec![
        ("kind".to_string(), "dense".to_string()),
        ("hidden".to_string(), widths.join(",")),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    let mut net = TrfNetwork::new(layers, vec![None; cfg.hidden.len()], provenance)?;
    attach_head_for(&mut net, d, cfg.seed.wrapping_add(cfg.hidden.len() as u64))?;
    Ok(net)
}

/// Train a fully connected network exactly as a TRF-net is fine-tuned.
pub fn train_dense(train: &Dataset, valid: &Dataset, cfg: &DenseNetConfig) -> Result<(TrfNetwork, EvalReport)> {
    let net = dense_network(train, cfg)?;
    let hyper = FinetuneHyper {
        reinit: false,
        ..cfg.finetune
    };
    finetune(&net, train, valid, &hyper)
}

/// Mask keeping the `ceil(keep_fraction · len)` entries of largest
/// magnitude. Equal magnitudes are ranked by row-major index, lower first.
pub fn magnitude_mask(w: &Array2<f64>, keep_fraction: f64) -> Result<Array2<bool>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Argument(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    let n = w.len();
    // The small slack keeps e.g. 0.1 · 30 = 3.0000000000000004 at 3.
    let keep = ((keep_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let flat: Vec<f64> = w.iter().copied().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| flat[b].abs().total_cmp(&flat[a].abs()).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    Ok(Array2::from_shape_vec(w.raw_dim(), mask).expect("same shape"))
}

/// Replace each hidden layer's mask by its per-layer magnitude mask. The
/// head stays dense.
pub fn prune(net: &TrfNetwork, keep_fraction: f64) -> Result<TrfNetwork> {
    let mut pruned = net.clone();
    for l in pruned.layers_mut() {
        let mask = magnitude_mask(l.weights(), keep_fraction)?;
        l.set_mask(mask)?;
    }
    pruned.set_provenance("kind", "pruned");
    pruned.set_provenance("keep_fraction", keep_fraction);
    Ok(pruned)
}

/// Prune a trained network, then retrain the surviving weights.
pub fn prune_and_retrain(
    net: &TrfNetwork,
    keep_fraction: f64,
    train: &Dataset,
    valid: &Dataset,
    hyper: &FinetuneHyper,
) -> Result<(TrfNetwork, EvalReport)> {
    let pruned = prune(net, keep_fraction)?;
    finetune(&pruned, train, valid, &FinetuneHyper { reinit: false, ..*hyper })
}

/// Fully connected training with `strength · Σ|w|` added to the loss. The
/// report carries the fraction of hidden weights at or above
/// [`L1_THRESHOLD`].
pub fn train_l1(
    train: &Dataset,
    valid: &Dataset,
    cfg: &DenseNetConfig,
    strength: f64,
) -> Result<(TrfNetwork, EvalReport)> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::Argument(format!("L1 strength {strength} must be >= 0")));
    }
    let cfg = DenseNetConfig {
        finetune: FinetuneHyper {
            l1: strength,
            ..cfg.finetune
        },
        ..cfg.clone()
    };
    let (mut net, mut report) = train_dense(train, valid, &cfg)?;
    net.set_provenance("kind", "l1");
    report.model = "l1".into();
    report.effective_sparsity = Some(net.effective_sparsity(L1_THRESHOLD));
    Ok((net, report))
}

/// Evaluate and attach the effective sparsity of L1-trained networks.
pub fn evaluate_baseline(net: &TrfNetwork, d: &Dataset) -> Result<EvalReport> {
    let mut r = evaluate(net, d)?;
    if net.provenance_value("kind") == Some("l1") {
        r.effective_sparsity = Some(net.effective_sparsity(L1_THRESHOLD));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{l1_penalty, l1_penalty_grad, AdamConfig};
    use crate::synth;
    use rand::Rng as _;

    fn quick(epochs: usize) -> DenseNetConfig {
        DenseNetConfig {
            hidden: vec![16],
            finetune: FinetuneHyper {
                max_epochs: epochs,
                adam: AdamConfig {
                    step_size: 1e-2,
                    ..AdamConfig::default()
                },
                ..FinetuneHyper::default()
            },
            seed: 4,
        }
    }

    #[test]
    fn dense_separates_blobs() {
        let (tr, va, te) = synth::blob_splits(8, 600, 10.0, 5);
        let (net, report) = train_dense(&tr, &va, &quick(50)).unwrap();
        assert_eq!(report.sparsity, 1.0);
        let test = evaluate(&net, &te).unwrap();
        assert!(test.accuracy.unwrap() >= 0.99, "{test:?}");
        let (again, _) = train_dense(&tr, &va, &quick(50)).unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn magnitude_mask_matches_sort_oracle() {
        let mut rng = rng::stream(3, Stream::Synth);
        let w = Array2::from_shape_simple_fn((10, 10), || rng.random::<f64>() * 2.0 - 1.0);
        let m = magnitude_mask(&w, 0.1).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 10);
        let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let cutoff = mags[9];
        for (x, &keep) in w.iter().zip(&m) {
            assert_eq!(keep, x.abs() >= cutoff);
        }
    }

    #[test]
    fn magnitude_mask_ties_and_bounds() {
        let w = Array2::from_elem((2, 3), 1.0);
        let m = magnitude_mask(&w, 0.5).unwrap();
        assert_eq!(m.iter().copied().collect::<Vec<_>>(), vec![true, true, true, false, false, false]);
        assert!(magnitude_mask(&w, 1.0).unwrap().iter().all(|&b| b));
        assert!(magnitude_mask(&w, 0.0).is_err());
        assert!(magnitude_mask(&w, 1.5).is_err());
        assert_eq!(magnitude_mask(&Array2::from_elem((3, 10), 1.0), 0.1).unwrap().iter().filter(|&&b| b).count(), 3);
    }

    #[test]
    fn pruned_weights_stay_zero() {
        let (tr, va, _) = synth::blob_splits(8, 300, 10.0, 6);
        let (net, _) = train_dense(&tr, &va, &quick(5)).unwrap();
        let (pruned, report) = prune_and_retrain(&net, 0.25, &tr, &va, &quick(5).finetune).unwrap();
        assert!(pruned.mask_respected());
        assert!((report.sparsity - 0.25).abs() < 1e-12);
        for (a, b) in pruned.layers().iter().zip(net.layers()) {
            assert_eq!(a.mask(), &magnitude_mask(b.weights(), 0.25).unwrap());
        }
        let identity = prune(&net, 1.0).unwrap();
        assert_eq!(identity.layers(), net.layers());
    }

    #[test]
    fn zero_strength_equals_dense() {
        let (tr, va, _) = synth::blob_splits(6, 200, 10.0, 7);
        let (dense, _) = train_dense(&tr, &va, &quick(4)).unwrap();
        let (l1, report) = train_l1(&tr, &va, &quick(4), 0.0).unwrap();
        assert_eq!(dense.layers(), l1.layers());
        assert!(report.effective_sparsity.is_some());
    }

    #[test]
    fn l1_subgradient_finite_differences() {
        let mut rng = rng::stream(9, Stream::Synth);
        let w = Array2::from_shape_simple_fn((5, 7), || rng.random::<f64>() * 2.0 - 1.0);
        let g = l1_penalty_grad(&w, 0.3);
        let h = 1e-6;
        for idx in [(0, 0), (2, 3), (4, 6)] {
            let mut p = w.clone();
            p[idx] += h;
            let mut m = w.clone();
            m[idx] -= h;
            let fd = (l1_penalty(&p, 0.3) - l1_penalty(&m, 0.3)) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn stronger_l1_is_sparser() {
        let (tr, va, _) = synth::blob_splits(8, 400, 10.0, 8);
        let eff: Vec<f64> = [0.0, 1e-4, 1e-2]
            .iter()
            .map(|&s| train_l1(&tr, &va, &quick(20), s).unwrap().1.effective_sparsity.unwrap())
            .collect();
        assert!(eff[0] >= eff[1] && eff[1] >= eff[2], "{eff:?}");
    }
}
