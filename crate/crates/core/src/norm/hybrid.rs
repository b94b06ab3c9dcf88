//! Hybrid batch normalization.
//!
//! In training, each channel is normalized with a convex mix of the current
//! batch statistics and the frozen global statistics:
//!
//! ```text
//! μ̂  = s(−α)·μ_b  + s(α)·μ_g
//! σ̂² = s(−α)·σ²_b + s(α)·σ²_g        s(α) = 1 / (1 + e^{−α})
//! y  = γ·(x − μ̂)/√(σ̂² + ε) + β
//! ```
//!
//! `α` is learned per channel and stays on the client. Evaluation and the
//! statistics-collection pass normalize with the global statistics alone.

use alloc::vec::Vec;

use super::kernel::{backward_mixed, forward_fixed, forward_mixed, hybrid_mix_weights, MixedCache};
use super::stats::{ChannelStats, GlobalStats, Moments};
use super::{NormMode, EPSILON};
use crate::error::{bail, Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

/// Mixes batch and global statistics with weights `s(−α)` and `s(α)`.
pub fn hybrid_mix(alpha: &[f64], batch: &Moments, global: &Moments) -> Result<Moments> {
    let c = alpha.len();
    if batch.channels() != c || global.channels() != c {
        bail!(
            Shape,
            "hybrid mix over {} factors, {} batch and {} global channels",
            c,
            batch.channels(),
            global.channels()
        );
    }
    let weight: Vec<f64> = alpha.iter().map(|&a| sigmoid(a)).collect();
    Ok(hybrid_mix_weights(&weight, batch, global))
}

/// Batch and global mixing weights `(s(−α), s(α))`.
pub fn mixing_weights(alpha: f64) -> (f64, f64) {
    (sigmoid(-alpha), sigmoid(alpha))
}

#[derive(Debug, Clone)]
pub struct HybridBatchNorm<T: Scalar = f32> {
    pub alpha: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub alpha_grad: Tensor<T>,
    pub gamma_grad: Tensor<T>,
    pub beta_grad: Tensor<T>,
    /// Frozen `(μ_g, σ²_g)`; never receives gradient.
    pub global: Option<GlobalStats>,
    /// Statistics recorded by `CollectStats` forwards.
    pub local: Option<ChannelStats>,
    pub eps: f64,
    cache: Option<MixedCache>,
}

impl<T: Scalar> HybridBatchNorm<T> {
    /// `α = 0`, `γ = 1`, `β = 0`, no global statistics yet.
    pub fn new(channels: usize) -> Self {
        Self {
            alpha: Tensor::zeros(&[channels]),
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            alpha_grad: Tensor::zeros(&[channels]),
            gamma_grad: Tensor::zeros(&[channels]),
            beta_grad: Tensor::zeros(&[channels]),
            global: None,
            local: None,
            eps: EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn set_global(&mut self, stats: GlobalStats) -> Result<()> {
        if stats.channels() != self.channels() {
            bail!(
                Shape,
                "global statistics for {} channels, layer has {}",
                stats.channels(),
                self.channels()
            );
        }
        self.global = Some(stats);
        Ok(())
    }

    fn global_or_err(&self) -> Result<&GlobalStats> {
        self.global.as_ref().ok_or_else(|| {
            Error::State("hybrid batch norm used before global statistics were set".into())
        })
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        match mode {
            NormMode::Train => {
                let global = self.global_or_err()?.clone();
                let (y, cache) = forward_mixed(
                    input,
                    Some((&self.alpha, &global)),
                    &self.gamma,
                    &self.beta,
                    self.eps,
                )?;
                self.cache = Some(cache);
                Ok(y)
            }
            NormMode::Eval => {
                let (y, _) = forward_fixed(
                    input,
                    self.global_or_err()?,
                    &self.gamma,
                    &self.beta,
                    self.eps,
                )?;
                Ok(y)
            }
            NormMode::CollectStats => {
                let (_, c, _) = input.ncs()?;
                let local = self.local.get_or_insert_with(|| ChannelStats::empty(c));
                local.accumulate(input)?;
                let (y, _) = forward_fixed(
                    input,
                    self.global_or_err()?,
                    &self.gamma,
                    &self.beta,
                    self.eps,
                )?;
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = &self.cache else {
            bail!(
                State,
                "hybrid batch norm backward without a Train-mode forward"
            );
        };
        let g = backward_mixed(cache, upstream, &self.gamma, self.eps)?;
        let c = self.channels();
        self.alpha_grad = Tensor::new(&[c], g.alpha.iter().map(|&v| T::from_f64(v)).collect())?;
        self.gamma_grad = Tensor::new(&[c], g.gamma.iter().map(|&v| T::from_f64(v)).collect())?;
        self.beta_grad = Tensor::new(&[c], g.beta.iter().map(|&v| T::from_f64(v)).collect())?;
        Tensor::new(
            upstream.shape(),
            g.input.iter().map(|&v| T::from_f64(v)).collect(),
        )
    }

    /// Removes and returns the collected statistics.
    pub fn take_local(&mut self) -> Option<ChannelStats> {
        self.local.take()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Scalar>(&self) -> HybridBatchNorm<U> {
        HybridBatchNorm {
            alpha: self.alpha.cast(),
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            alpha_grad: self.alpha_grad.cast(),
            gamma_grad: self.gamma_grad.cast(),
            beta_grad: self.beta_grad.cast(),
            global: self.global.clone(),
            local: self.local.clone(),
            eps: self.eps,
            cache: None,
        }
    }
}
