use alloc::vec::Vec;

use super::kernel::{
    backward_fixed, backward_mixed, forward_fixed, forward_mixed, FixedCache, MixedCache,
};
use super::stats::{channel_moments, Moments};
use super::{NormMode, BN_MOMENTUM, EPSILON};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a batch-norm layer treats its running statistics during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnVariant {
    /// Batch statistics in training, running statistics in evaluation.
    Standard,
    /// Standard until `freeze_round`; afterwards the running statistics are
    /// frozen and used in training too.
    Fixed { freeze_round: u32 },
    /// Running statistics in training as well; batch statistics only feed the
    /// moving average.
    Running,
}

#[derive(Debug, Clone)]
enum Cache {
    Batch(MixedCache),
    Frozen(FixedCache),
}

/// BN, FixBN and FBN. Running statistics are blended as
/// `running ← m·running + (1 − m)·batch` with `m = 0.9`.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Scalar = f32> {
    pub variant: BnVariant,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub gamma_grad: Tensor<T>,
    pub beta_grad: Tensor<T>,
    pub running: Moments,
    pub momentum: f64,
    pub eps: f64,
    round: u32,
    cache: Option<Cache>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize, variant: BnVariant) -> Self {
        Self {
            variant,
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            gamma_grad: Tensor::zeros(&[channels]),
            beta_grad: Tensor::zeros(&[channels]),
            running: Moments::unit(channels),
            momentum: BN_MOMENTUM,
            eps: EPSILON,
            round: 0,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Current communication round (FixBN switches stage on it).
    pub fn set_round(&mut self, round: u32) {
        self.round = round;
    }

    /// Whether training currently normalizes with the running statistics.
    pub fn uses_running_in_train(&self) -> bool {
        match self.variant {
            BnVariant::Standard => false,
            BnVariant::Fixed { freeze_round } => self.round > freeze_round,
            BnVariant::Running => true,
        }
    }

    fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.running.mean.iter_mut().zip(batch_mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running.var.iter_mut().zip(batch_var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        match mode {
            NormMode::Eval | NormMode::CollectStats => {
                let (y, _) =
                    forward_fixed(input, &self.running, &self.gamma, &self.beta, self.eps)?;
                Ok(y)
            }
            NormMode::Train if self.uses_running_in_train() => {
                // normalize with the pre-update statistics
                let (y, cache) =
                    forward_fixed(input, &self.running, &self.gamma, &self.beta, self.eps)?;
                if self.variant == BnVariant::Running {
                    let (mean, var, _) = channel_moments(input)?;
                    self.update_running(&mean, &var);
                }
                self.cache = Some(Cache::Frozen(cache));
                Ok(y)
            }
            NormMode::Train => {
                let (n, _, s) = input.ncs()?;
                if n * s < 2 {
                    bail!(
                        Data,
                        "batch norm needs at least 2 elements per channel in training, got {}",
                        n * s
                    );
                }
                let (y, cache) = forward_mixed(input, None, &self.gamma, &self.beta, self.eps)?;
                let (mean, var, _) = channel_moments(input)?;
                self.update_running(&mean, &var);
                self.cache = Some(Cache::Batch(cache));
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (dx, dgamma, dbeta): (Vec<f64>, Vec<f64>, Vec<f64>) = match &self.cache {
            Some(Cache::Batch(cache)) => {
                let g = backward_mixed(cache, upstream, &self.gamma, self.eps)?;
                (g.input, g.gamma, g.beta)
            }
            Some(Cache::Frozen(cache)) => backward_fixed(cache, upstream, &self.gamma)?,
            None => bail!(State, "batch norm backward without a Train-mode forward"),
        };
        let c = self.channels();
        self.gamma_grad = Tensor::new(&[c], dgamma.iter().map(|&v| T::from_f64(v)).collect())?;
        self.beta_grad = Tensor::new(&[c], dbeta.iter().map(|&v| T::from_f64(v)).collect())?;
        Tensor::new(
            upstream.shape(),
            dx.iter().map(|&v| T::from_f64(v)).collect(),
        )
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        BatchNorm {
            variant: self.variant,
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            gamma_grad: self.gamma_grad.cast(),
            beta_grad: self.beta_grad.cast(),
            running: self.running.clone(),
            momentum: self.momentum,
            eps: self.eps,
            round: self.round,
            cache: None,
        }
    }
}
