use crate::error::{shape_err, Error, Result};
use crate::tensor::{cast_vec, Real, Tensor};

/// Variance floor added before the square root.
pub const DEFAULT_BN_EPS: f64 = 1e-3;

/// Per-channel batch-norm scale, shift and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub eps: T,
}

impl<T: Real> BnParams<T> {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![T::from_f64(1.0); channels],
            beta: vec![T::default(); channels],
            mean: vec![T::default(); channels],
            var: vec![T::from_f64(1.0); channels],
            eps: T::from_f64(DEFAULT_BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return shape_err("batch-norm vectors differ in length");
        }
        let eps = self.eps.to_f64();
        if self.var.iter().any(|v| !(v.to_f64() >= 0.0 && v.to_f64() + eps > 0.0)) {
            return Err(Error::InvalidArgument("batch-norm variance must satisfy var >= 0 and var + eps > 0".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> BnParams<U> {
        BnParams {
            gamma: cast_vec(&self.gamma),
            beta: cast_vec(&self.beta),
            mean: cast_vec(&self.mean),
            var: cast_vec(&self.var),
            eps: U::from_f64(self.eps.to_f64()),
        }
    }

    /// Inference-mode per-channel affine `(scale, shift)`.
    pub fn running_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let eps = self.eps.to_f64();
        (0..self.channels())
            .map(|c| {
                let s = self.gamma[c].to_f64() / (self.var[c].to_f64() + eps).sqrt();
                (s, self.beta[c].to_f64() - s * self.mean[c].to_f64())
            })
            .unzip()
    }

    pub fn inv_std_running(&self) -> Vec<f64> {
        let eps = self.eps.to_f64();
        self.var.iter().map(|v| 1.0 / (v.to_f64() + eps).sqrt()).collect()
    }

    pub(crate) fn apply_running(&self, x: &mut Tensor<T>) {
        let (scale, shift) = self.running_affine();
        for (c, (s, t)) in scale.iter().zip(&shift).enumerate() {
            for v in x.channel_mut(c) {
                *v = T::from_f64(s * v.to_f64() + t);
            }
        }
    }

    /// Exponential update `running = momentum·running + (1 − momentum)·batch`.
    /// `var` is the biased batch variance over `count` samples; the running
    /// estimate stores the unbiased one.
    pub(crate) fn update_running(&mut self, mean: &[f64], var: &[f64], count: usize, momentum: f64) {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.channels() {
            let m = momentum * self.mean[c].to_f64() + (1.0 - momentum) * mean[c];
            let v = momentum * self.var[c].to_f64() + (1.0 - momentum) * var[c] * unbias;
            self.mean[c] = T::from_f64(m);
            self.var[c] = T::from_f64(v);
        }
    }
}
