use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use super::{reconstruction_grad, reconstruction_loss, sigmoid, Activation, LossFamily};
use crate::rng::Rng;
use crate::{Error, Result};

/// A sparse layer `act((A∘W) x + b_h)` whose transpose `(A∘W)ᵀ h + b_v`
/// serves as the tied decoder during pretraining.
///
/// Entries of `weights` outside the mask are kept at exactly zero, so the
/// stored matrix always equals `A∘W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLayer {
    mask: Array2<bool>,
    weights: Array2<f64>,
    bias_hidden: Array1<f64>,
    bias_visible: Array1<f64>,
    pub activation: Activation,
    /// Column indices of each row's connections, kept when the mask is
    /// sparse enough for gather/scatter kernels to beat dense products.
    index: Option<Vec<Vec<usize>>>,
}

/// Masks at or below this density use the sparse kernels.
const SPARSE_DENSITY: f64 = 0.2;

fn row_index(mask: &Array2<bool>) -> Option<Vec<Vec<usize>>> {
    let nnz = mask.iter().filter(|&&b| b).count();
    if nnz as f64 > SPARSE_DENSITY * mask.len() as f64 {
        return None;
    }
    Some(
        mask.outer_iter()
            .map(|r| r.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
            .collect(),
    )
}

/// Gradients of a masked layer; `weights` is zero outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrads {
    pub weights: Array2<f64>,
    pub bias_hidden: Array1<f64>,
    pub bias_visible: Array1<f64>,
}

fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} has width {got}, expected {want}")));
    }
    Ok(())
}

impl MaskedLayer {
    /// Uniform init in ±sqrt(6 / (fan_in + fan_out)) where fan_in is the
    /// row's mask count and fan_out the column's, then masked. Biases start at 0.
    pub fn new(mask: Array2<bool>, activation: Activation, rng: &mut Rng) -> Self {
        let (h, v) = mask.dim();
        let row_nnz: Vec<usize> = mask.outer_iter().map(|r| r.iter().filter(|&&b| b).count()).collect();
        let col_nnz: Vec<usize> = mask
            .axis_iter(Axis(1))
            .map(|c| c.iter().filter(|&&b| b).count())
            .collect();
        let mut weights = Array2::zeros((h, v));
        for ((i, j), w) in weights.indexed_iter_mut() {
            // Draw for every entry so the stream does not depend on the mask.
            let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
            if mask[[i, j]] {
                let limit = (6.0 / (row_nnz[i] + col_nnz[j]) as f64).sqrt();
                *w = u * limit;
            }
        }
        MaskedLayer {
            index: row_index(&mask),
            mask,
            weights,
            bias_hidden: Array1::zeros(h),
            bias_visible: Array1::zeros(v),
            activation,
        }
    }

    /// Assemble from explicit parts; weights outside the mask must be zero.
    pub fn from_parts(
        mask: Array2<bool>,
        weights: Array2<f64>,
        bias_hidden: Array1<f64>,
        bias_visible: Array1<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let (h, v) = mask.dim();
        if weights.dim() != (h, v) || bias_hidden.len() != h || bias_visible.len() != v {
            return Err(Error::Shape(format!(
                "mask {h}x{v}, weights {:?}, biases {} / {}",
                weights.dim(),
                bias_hidden.len(),
                bias_visible.len()
            )));
        }
        let layer = MaskedLayer {
            index: row_index(&mask),
            mask,
            weights,
            bias_hidden,
            bias_visible,
            activation,
        };
        if !layer.mask_respected() {
            return Err(Error::MaskViolation("weight set outside the mask".into()));
        }
        if !layer.is_finite() {
            return Err(Error::Numeric("layer parameters are not finite".into()));
        }
        Ok(layer)
    }

    pub fn hidden(&self) -> usize {
        self.mask.nrows()
    }

    pub fn visible(&self) -> usize {
        self.mask.ncols()
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias_hidden(&self) -> &Array1<f64> {
        &self.bias_hidden
    }

    pub fn bias_visible(&self) -> &Array1<f64> {
        &self.bias_visible
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Mutable parameter slices in the order (weights, bias_hidden, bias_visible).
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &[bool]) {
        (
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias_hidden.as_slice_mut().expect("standard layout"),
            self.bias_visible.as_slice_mut().expect("standard layout"),
            self.mask.as_slice().expect("standard layout"),
        )
    }

    /// Replace the mask (for pruning) and zero the newly forbidden weights.
    pub fn set_mask(&mut self, mask: Array2<bool>) -> Result<()> {
        if mask.dim() != self.mask.dim() {
            return Err(Error::Shape(format!("new mask {:?} vs {:?}", mask.dim(), self.mask.dim())));
        }
        self.index = row_index(&mask);
        self.mask = mask;
        self.enforce_mask();
        Ok(())
    }

    pub fn enforce_mask(&mut self) {
        ndarray::Zip::from(&mut self.weights).and(&self.mask).for_each(|w, &m| {
            if !m {
                *w = 0.0;
            }
        });
    }

    /// True when every weight outside the mask is exactly zero.
    pub fn mask_respected(&self) -> bool {
        self.weights
            .iter()
            .zip(&self.mask)
            .all(|(&w, &m)| m || w == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias_hidden).chain(&self.bias_visible).all(|x| x.is_finite())
    }

    /// `(A∘W) x + b_h` for a batch of rows.
    pub fn pre_activation(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_width("encoder input", x.ncols(), self.visible())?;
        Ok(self.gather(x) + &self.bias_hidden)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.activation.apply(&self.pre_activation(x)?))
    }

    /// `(A∘W)ᵀ h + b_v` for a batch of hidden rows.
    pub fn decoder_pre_activation(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        check_width("decoder input", h.ncols(), self.hidden())?;
        Ok(self.scatter(h) + &self.bias_visible)
    }

    /// Decoder mean: `sigmoid` of the pre-activation for Bernoulli, the
    /// pre-activation itself for Gaussian.
    pub fn decoder_forward(&self, h: &Array2<f64>, family: LossFamily) -> Result<Array2<f64>> {
        let z = self.decoder_pre_activation(h)?;
        Ok(match family {
            LossFamily::Bernoulli => z.mapv(sigmoid),
            LossFamily::Gaussian => z,
        })
    }

    /// Backward pass of the encoder given the input, cached pre/post
    /// activations and the gradient w.r.t. the output. Returns masked
    /// weight gradients, hidden-bias gradients and the input gradient.
    pub fn backward(
        &self,
        input: &Array2<f64>,
        pre: &Array2<f64>,
        post: &Array2<f64>,
        mut grad_out: Array2<f64>,
        need_input_grad: bool,
    ) -> (Array2<f64>, Array1<f64>, Option<Array2<f64>>) {
        self.activation.backprop(&mut grad_out, pre, post);
        let gw = self.outer(&grad_out, input);
        let gb = grad_out.sum_axis(Axis(0));
        let gx = need_input_grad.then(|| self.scatter(&grad_out));
        (gw, gb, gx)
    }

    /// `a (A∘W)ᵀ` for an N×V batch `a`.
    fn gather(&self, a: &Array2<f64>) -> Array2<f64> {
        let Some(index) = &self.index else {
            return a.dot(&self.weights.t());
        };
        let (n, v, h) = (a.nrows(), self.visible(), self.hidden());
        let a = a.as_standard_layout();
        let a = a.as_slice().expect("standard layout");
        let w = self.weights.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * h];
        for r in 0..n {
            let arow = &a[r * v..(r + 1) * v];
            for (i, cols) in index.iter().enumerate() {
                let wrow = &w[i * v..(i + 1) * v];
                out[r * h + i] = cols.iter().map(|&j| arow[j] * wrow[j]).sum();
            }
        }
        Array2::from_shape_vec((n, h), out).expect("shape")
    }

    /// `b (A∘W)` for an N×H batch `b`.
    fn scatter(&self, b: &Array2<f64>) -> Array2<f64> {
        let Some(index) = &self.index else {
            return b.dot(&self.weights);
        };
        let (n, v, h) = (b.nrows(), self.visible(), self.hidden());
        let b = b.as_standard_layout();
        let b = b.as_slice().expect("standard layout");
        let w = self.weights.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * v];
        for r in 0..n {
            let orow = &mut out[r * v..(r + 1) * v];
            for (i, cols) in index.iter().enumerate() {
                let bi = b[r * h + i];
                if bi == 0.0 {
                    continue;
                }
                let wrow = &w[i * v..(i + 1) * v];
                for &j in cols {
                    orow[j] += bi * wrow[j];
                }
            }
        }
        Array2::from_shape_vec((n, v), out).expect("shape")
    }

    /// `bᵀ a` restricted to the mask, for batches `b` (N×H) and `a` (N×V).
    fn outer(&self, b: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        let Some(index) = &self.index else {
            let mut g = b.t().dot(a);
            self.mask_grad(&mut g);
            return g;
        };
        let (n, v, h) = (a.nrows(), self.visible(), self.hidden());
        let a = a.as_standard_layout();
        let a = a.as_slice().expect("standard layout");
        let b = b.as_standard_layout();
        let b = b.as_slice().expect("standard layout");
        let mut g = vec![0.0; h * v];
        for r in 0..n {
            let arow = &a[r * v..(r + 1) * v];
            for (i, cols) in index.iter().enumerate() {
                let bi = b[r * h + i];
                if bi == 0.0 {
                    continue;
                }
                let grow = &mut g[i * v..(i + 1) * v];
                for &j in cols {
                    grow[j] += bi * arow[j];
                }
            }
        }
        Array2::from_shape_vec((h, v), g).expect("shape")
    }

    fn mask_grad(&self, g: &mut Array2<f64>) {
        ndarray::Zip::from(g).and(&self.mask).for_each(|g, &m| {
            if !m {
                *g = 0.0;
            }
        });
    }

    /// Denoising reconstruction loss of `clean` from the encoding of
    /// `corrupted`, with exact gradients through the tied encoder/decoder.
    pub fn autoencoder_loss_and_grad(
        &self,
        corrupted: &Array2<f64>,
        clean: &Array2<f64>,
        family: LossFamily,
    ) -> Result<(f64, MaskedGrads)> {
        if corrupted.dim() != clean.dim() {
            return Err(Error::Shape(format!(
                "corrupted batch {:?} vs clean {:?}",
                corrupted.dim(),
                clean.dim()
            )));
        }
        let z = self.pre_activation(corrupted)?;
        let h = self.activation.apply(&z);
        let recon = self.decoder_pre_activation(&h)?;
        let loss = reconstruction_loss(clean, &recon, family)?;
        let d_recon = reconstruction_grad(clean, &recon, family);

        let mut gw = self.outer(&h, &d_recon);
        let gbv = d_recon.sum_axis(Axis(0));
        let d_h = self.gather(&d_recon);
        let (gw_enc, gbh, _) = self.backward(corrupted, &z, &h, d_h, false);
        gw += &gw_enc;
        Ok((
            loss,
            MaskedGrads {
                weights: gw,
                bias_hidden: gbh,
                bias_visible: gbv,
            },
        ))
    }
}

/// Fully connected `act(W x + b)`, used for classifier heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Glorot-uniform init for an `outputs × inputs` layer, zero bias.
    pub fn new(outputs: usize, inputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || (rng.random::<f64>() * 2.0 - 1.0) * limit);
        DenseLayer {
            weights,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "dense weights {:?} with bias of {}",
                weights.dim(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("dense layer parameters are not finite".into()));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        )
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn pre_activation(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_width("dense input", x.ncols(), self.inputs())?;
        Ok(x.dot(&self.weights.t()) + &self.bias)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.activation.apply(&self.pre_activation(x)?))
    }

    pub fn backward(
        &self,
        input: &Array2<f64>,
        pre: &Array2<f64>,
        post: &Array2<f64>,
        mut grad_out: Array2<f64>,
    ) -> (DenseGrads, Array2<f64>) {
        self.activation.backprop(&mut grad_out, pre, post);
        let grads = DenseGrads {
            weights: grad_out.t().dot(input),
            bias: grad_out.sum_axis(Axis(0)),
        };
        (grads, grad_out.dot(&self.weights))
    }
}
