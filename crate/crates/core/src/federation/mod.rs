//! The client/server protocol.
//!
//! Every round, each participant first records per-layer activation statistics
//! of the downloaded global model without backpropagation, then trains its copy
//! of the weights (and its private hybrid factors α) with SGD. The server
//! averages the weights, pools the statistics into unbiased global estimates and
//! blends them into the previous estimates with a moving average. A closing
//! statistics-only round refreshes the statistics of the final weights.

mod aggregate;
mod client;
mod oracle;
mod plan;
mod sim;

pub use aggregate::{
    aggregate_buffers, aggregate_stats_unbiased, aggregate_weights, server_ema, unbiased_pool,
};
pub use client::{
    batch_order, bootstrap_global_stats, client_collect_stats, client_local_train, instantiate,
    LocalTrainConfig,
};
pub use oracle::{layerwise_oracle, max_relative_stats_error, stats_gap};
pub use plan::{participant_count, sample_participants, RoundPlan};
pub use sim::{
    evaluate_accuracy, merge_uploads, run_training, Executor, RoundMetrics, RoundOutcome,
    Sequential, Simulation, TrainingOutcome,
};

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::nn::{Buffers, ModelParams, DEFAULT_MOMENTUM};
use crate::norm::{ChannelStats, GlobalStats, NormKind, EPSILON};
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_LR_DECAY: f64 = 0.998;
/// Batch size at which the base learning rate applies unscaled.
pub const LR_REFERENCE_BATCH: usize = 4;

/// Server state: shared weights ω_g, per-HBN-layer global statistics and the
/// averaged running buffers of BN-family layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub weights: ModelParams,
    /// Empty until the bootstrap pass has run (and always for non-HBN models).
    pub stats: Vec<GlobalStats>,
    pub buffers: Buffers,
    pub round: u32,
}

/// A simulated client. `alphas` persist across rounds and are never uploaded.
#[derive(Debug, Clone)]
pub struct ClientRecord {
    pub id: usize,
    /// Indices into the shared training set.
    pub indices: Vec<usize>,
    pub alphas: Vec<Tensor<f32>>,
}

impl ClientRecord {
    pub fn samples(&self) -> usize {
        self.indices.len()
    }
}

/// What a client uploads at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub weights: ModelParams,
    /// Statistics of the downloaded model on the client's data (HBN only).
    pub stats: Vec<ChannelStats>,
    /// True when statistics came from a capped subsample.
    pub stats_capped: bool,
    pub buffers: Buffers,
    pub samples: usize,
    pub train_loss: f64,
}

/// Experiment knobs of the federated simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub norm: NormKind,
    /// Fraction C of clients sampled each round.
    pub participation: f64,
    pub rounds: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    /// Base learning rate at batch size `LR_REFERENCE_BATCH`.
    pub lr: f64,
    /// Per-round multiplicative decay.
    pub lr_decay: f64,
    pub momentum: f64,
    /// Server moving-average weight λ of new statistics.
    pub lambda: f64,
    /// ε of every normalization layer.
    pub epsilon: f64,
    pub seed: u64,
    /// Optional per-client cap on samples used for statistics collection.
    pub stats_cap: Option<usize>,
    /// Compute `stats_gap` against a pooled oracle each round.
    pub measure_gap: bool,
    /// Evaluate every this many rounds (0: only after the last training round).
    pub eval_every: u32,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            norm: NormKind::Hbn,
            participation: 1.0,
            rounds: 1,
            local_epochs: 1,
            batch_size: LR_REFERENCE_BATCH,
            lr: 0.01,
            lr_decay: DEFAULT_LR_DECAY,
            momentum: DEFAULT_MOMENTUM,
            lambda: DEFAULT_LAMBDA,
            epsilon: EPSILON,
            seed: 0,
            stats_cap: None,
            measure_gap: false,
            eval_every: 1,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            bail!(
                Config,
                "participation must lie in (0, 1], got {}",
                self.participation
            );
        }
        if self.batch_size == 0 {
            bail!(Config, "batch size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            bail!(
                Config,
                "learning rate must be finite and non-negative, got {}",
                self.lr
            );
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            bail!(Config, "lr decay must lie in (0, 1], got {}", self.lr_decay);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!(Config, "momentum must lie in [0, 1), got {}", self.momentum);
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            bail!(Config, "λ must lie in (0, 1], got {}", self.lambda);
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bail!(
                Config,
                "ε must be positive and finite, got {}",
                self.epsilon
            );
        }
        if self.stats_cap == Some(0) {
            bail!(Config, "statistics cap must be positive");
        }
        Ok(())
    }

    /// `η · (B / 4) · decay^(t−1)` for round `t ≥ 1`.
    pub fn learning_rate(&self, round: u32) -> f64 {
        let scale = self.batch_size as f64 / LR_REFERENCE_BATCH as f64;
        self.lr * scale * libm::pow(self.lr_decay, round.saturating_sub(1) as f64)
    }

    /// FixBN trains with batch statistics through this round.
    pub fn freeze_round(&self) -> u32 {
        self.rounds.div_ceil(2)
    }
}

/// Protocol name of a normalization kind (`bn` runs the naive FedAvg baseline).
pub fn mode_name(kind: NormKind) -> &'static str {
    match kind {
        NormKind::Bn => "naive_bn",
        other => other.as_str(),
    }
}

#[cfg(test)]
mod tests;
