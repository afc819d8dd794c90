//! Denoising autoencoder pretraining of one masked layer, and projection of
//! data through the trained layer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{BinaryDataset, Dataset};
use crate::nn::{sigmoid, Activation, AdamConfig, LossFamily, MaskedLayer, OptimizerState, Param};
use crate::receptive_field::ConnectivityMask;
use crate::rng::{self, Rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionKind {
    /// Each entry is set to 0 with probability `rate`.
    Masking { rate: f64 },
    /// Each entry gets additive N(0, sigma²) noise.
    GaussianAdditive { sigma: f64 },
}

impl CorruptionKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionKind::Masking { rate } if !(0.0..=1.0).contains(&rate) => {
                Err(Error::Argument(format!("masking rate {rate} outside [0, 1]")))
            }
            CorruptionKind::GaussianAdditive { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::Argument(format!("noise std {sigma} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }

    /// Masking 0.2 for binary and count data, Gaussian σ = 0.2 otherwise.
    pub fn default_for(d: &Dataset) -> Self {
        if d.is_count_like() {
            CorruptionKind::Masking { rate: 0.2 }
        } else {
            CorruptionKind::GaussianAdditive { sigma: 0.2 }
        }
    }
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorruptionKind::Masking { rate } => write!(f, "masking:{rate}"),
            CorruptionKind::GaussianAdditive { sigma } => write!(f, "gaussian:{sigma}"),
        }
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Argument(format!("corruption {s:?} is not kind:value")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Argument(format!("bad corruption value in {s:?}")))?;
        let c = match kind {
            "masking" => CorruptionKind::Masking { rate: value },
            "gaussian" => CorruptionKind::GaussianAdditive { sigma: value },
            _ => return Err(Error::Argument(format!("unknown corruption kind {kind:?}"))),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    pub kind: CorruptionKind,
    pub seed: u64,
}

/// Apply the corruption process to a batch.
pub fn corrupt(x: &Array2<f64>, kind: &CorruptionKind, rng: &mut Rng) -> Array2<f64> {
    match *kind {
        CorruptionKind::Masking { rate } => x.mapv(|v| if rng.random::<f64>() < rate { 0.0 } else { v }),
        CorruptionKind::GaussianAdditive { sigma } => x.mapv(|v| {
            let n: f64 = StandardNormal.sample(rng);
            v + sigma * n
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaeHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// `None` picks Bernoulli for data in [0, 1] and Gaussian otherwise.
    pub family: Option<LossFamily>,
    pub seed: u64,
}

impl Default for DaeHyper {
    fn default() -> Self {
        DaeHyper {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            family: None,
            seed: 0,
        }
    }
}

/// A trained masked layer with its decoder family and per-epoch mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerModel {
    pub layer: MaskedLayer,
    pub family: LossFamily,
    pub training_log: Vec<f64>,
}

impl TwoLayerModel {
    pub fn training_log_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (e, l) in self.training_log.iter().enumerate() {
            let _ = writeln!(out, "{},{l}", e + 1);
        }
        out
    }

    pub fn write_training_log(&self, path: &Path) -> Result<()> {
        fs::write(path, self.training_log_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn resolve_family(requested: Option<LossFamily>, d: &Dataset) -> Result<LossFamily> {
    match requested {
        None if d.in_unit_interval() => Ok(LossFamily::Bernoulli),
        None => Ok(LossFamily::Gaussian),
        Some(LossFamily::Bernoulli) if !d.in_unit_interval() => Err(Error::Domain(
            "bernoulli reconstruction needs data in [0, 1]".into(),
        )),
        Some(f) => Ok(f),
    }
}

/// Train a sigmoid masked encoder with a tied decoder on the denoising
/// objective, by minibatch Adam. Every epoch visits the data in a fresh
/// seeded order and draws fresh corruption.
pub fn train_dae(
    mask: &ConnectivityMask,
    d: &Dataset,
    corruption: &CorruptionConfig,
    hyper: &DaeHyper,
) -> Result<TwoLayerModel> {
    if mask.cols() != d.n_features() {
        return Err(Error::Shape(format!(
            "mask width {} vs data width {}",
            mask.cols(),
            d.n_features()
        )));
    }
    if hyper.epochs < 1 || hyper.batch_size < 1 {
        return Err(Error::Argument("epochs and batch size must be at least 1".into()));
    }
    corruption.kind.validate()?;
    let family = resolve_family(hyper.family, d)?;

    let mut layer = MaskedLayer::new(
        mask.matrix().clone(),
        Activation::Sigmoid,
        &mut rng::stream(hyper.seed, Stream::Init),
    );
    // Start the decoder at the per-feature mean so that the weights do not
    // have to encode the marginal rates (which on sparse data drives them
    // all negative).
    let means = d.values().mean_axis(Axis(0)).expect("N >= 1");
    for (b, &m) in layer.params_mut().2.iter_mut().zip(&means) {
        *b = match family {
            LossFamily::Bernoulli => {
                let p = m.clamp(1e-3, 1.0 - 1e-3);
                (p / (1.0 - p)).ln()
            }
            LossFamily::Gaussian => m,
        };
    }
    let (h, v) = (layer.hidden(), layer.visible());
    let mut opt = OptimizerState::new(hyper.adam, &[h * v, h, v]);
    let mut shuffle_rng = rng::stream(hyper.seed, Stream::Shuffle);
    let mut noise_rng = rng::stream(corruption.seed, Stream::Corruption);

    let n = d.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let clean = d.values().select(Axis(0), batch);
            let noisy = corrupt(&clean, &corruption.kind, &mut noise_rng);
            let (loss, grads) = layer.autoencoder_loss_and_grad(&noisy, &clean, family)?;
            total += loss * batch.len() as f64;
            let (w, bh, bv, m) = layer.params_mut();
            let m = m.to_vec();
            opt.step(&mut [
                Param::masked(w, grads.weights.as_slice().expect("standard layout"), &m),
                Param::new(bh, grads.bias_hidden.as_slice().expect("standard layout")),
                Param::new(bv, grads.bias_visible.as_slice().expect("standard layout")),
            ])?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("DAE loss diverged at epoch {}", epoch + 1)));
        }
        log.push(mean);
    }
    debug_assert!(layer.mask_respected());
    Ok(TwoLayerModel {
        layer,
        family,
        training_log: log,
    })
}

/// Sigmoid probabilities `s((A∘W) x + b_h)` of a layer over a dataset.
pub fn encode_probabilities(layer: &MaskedLayer, d: &Dataset) -> Result<Array2<f64>> {
    Ok(layer.pre_activation(d.values())?.mapv(sigmoid))
}

/// Map data through the trained layer: the probability view (for the next
/// layer's weights) and its binarization at `> 0.5` (for the next tree).
pub fn project(m: &TwoLayerModel, d: &Dataset) -> Result<(Dataset, BinaryDataset)> {
    let probs = encode_probabilities(&m.layer, d)?;
    let names = (0..probs.ncols()).map(|i| format!("h{i}")).collect();
    let binary = BinaryDataset::from_rows(
        &probs
            .outer_iter()
            .map(|r| r.iter().map(|&p| u8::from(p > 0.5)).collect::<Vec<u8>>())
            .collect::<Vec<_>>(),
    )?;
    Ok((d.with_values(probs, Some(names))?, binary))
}
