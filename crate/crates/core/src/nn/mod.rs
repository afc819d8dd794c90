//! Minimal double-precision neural substrate: masked and dense layers,
//! reconstruction and classification losses with exact gradients, Adam and
//! inverted dropout.

mod adam;
mod layer;
mod loss;

pub use adam::{AdamConfig, OptimizerState, Param};
pub use layer::{DenseGrads, DenseLayer, MaskedGrads, MaskedLayer};
pub use loss::{
    l1_penalty, l1_penalty_grad, multitask_bce, reconstruction_grad, reconstruction_loss,
    softmax, softmax_cross_entropy,
};

use ndarray::Array2;
use rand::Rng as _;

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::Relu => z.mapv(|x| x.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    /// Multiply `grad` (w.r.t. the activation output) by the derivative,
    /// given the pre-activation `z` and output `a`.
    pub fn backprop(self, grad: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Sigmoid => {
                ndarray::Zip::from(grad).and(a).for_each(|g, &s| *g *= s * (1.0 - s));
            }
            Activation::Relu => {
                ndarray::Zip::from(grad).and(z).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            Activation::Identity => {}
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Argument(format!("unknown activation {s:?}"))),
        }
    }
}

/// Decoder output distribution for reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFamily {
    /// Cross-entropy against `sigmoid(z)`; targets in [0, 1].
    Bernoulli,
    /// Half squared error against `z`.
    Gaussian,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Bernoulli => "bernoulli",
            LossFamily::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(LossFamily::Bernoulli),
            "gaussian" => Ok(LossFamily::Gaussian),
            _ => Err(Error::Argument(format!("unknown loss family {s:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverted dropout. In training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned scale
/// matrix is what the backward pass multiplies into the gradient. In eval
/// mode the input is returned unchanged with no scale matrix.
pub fn dropout(
    x: &Array2<f64>,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale = Array2::from_shape_simple_fn(x.raw_dim(), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    Ok((x * &scale, Some(scale)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(-1000.0).is_finite());
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = stream(1, Stream::Dropout);
        let x = Array2::from_elem((3, 4), 2.0);
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, &mut rng, false).unwrap().0, x);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_rate_concentrates() {
        let mut rng = stream(2, Stream::Dropout);
        let x = Array2::from_elem((100, 1000), 1.0);
        let (y, _) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let zeros = y.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() < 0.01, "zero fraction {zeros}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn parse_names() {
        for a in [Activation::Sigmoid, Activation::Relu, Activation::Identity] {
            assert_eq!(a.name().parse::<Activation>().unwrap(), a);
        }
        assert!("tanh".parse::<Activation>().is_err());
    }
}
