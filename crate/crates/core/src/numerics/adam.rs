use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", config.lr)));
        }
        Ok(Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&[T], &[T]) {
        (&self.first[index], &self.second[index])
    }

    /// One update from each tensor's accumulated `grad`; a tensor without a
    /// gradient is treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters for {} moment buffers", params.len(), self.first.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {i} has {} values, moments {}", p.numel(), self.first[i].len()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_m_b1, one_m_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (step_size, c2_sqrt, eps) = (T::of(lr / c1), T::of(c2.sqrt()), T::of(eps));

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad().map(<[T]>::to_vec);
            let data = p.data_mut();
            match grad {
                Some(g) => {
                    for i in 0..data.len() {
                        m[i] = b1 * m[i] + one_m_b1 * g[i];
                        v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
                        data[i] = data[i] - step_size * m[i] / (v[i].sqrt() / c2_sqrt + eps);
                    }
                }
                None => {
                    for i in 0..data.len() {
                        m[i] = b1 * m[i];
                        v[i] = b2 * v[i];
                        data[i] = data[i] - step_size * m[i] / (v[i].sqrt() / c2_sqrt + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
