use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One parameter tensor, flattened, with its gradient and optional mask.
pub struct Param<'a> {
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
    pub mask: Option<&'a [bool]>,
}

impl<'a> Param<'a> {
    pub fn new(values: &'a mut [f64], grad: &'a [f64]) -> Self {
        Param { values, grad, mask: None }
    }

    pub fn masked(values: &'a mut [f64], grad: &'a [f64], mask: &'a [bool]) -> Self {
        Param {
            values,
            grad,
            mask: Some(mask),
        }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        OptimizerState {
            config,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One Adam update over all tensors, then zero every masked-out entry.
    /// A non-finite gradient aborts the step before anything is modified.
    pub fn step(&mut self, params: &mut [Param<'_>]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors for an optimizer built for {}",
                params.len(),
                self.first.len()
            )));
        }
        for (k, p) in params.iter().enumerate() {
            let n = self.first[k].len();
            if p.values.len() != n || p.grad.len() != n || p.mask.is_some_and(|m| m.len() != n) {
                return Err(Error::Shape(format!("parameter tensor {k} does not have {n} entries")));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {k}")));
            }
        }
        self.step += 1;
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.values.len() {
                if p.mask.is_some_and(|m| !m[i]) {
                    continue;
                }
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.values[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
            }
            if let Some(mask) = p.mask {
                for (w, &keep) in p.values.iter_mut().zip(mask) {
                    if !keep {
                        *w = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}
