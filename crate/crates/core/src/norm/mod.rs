//! Normalization layers: batch statistics, the hybrid layer, the BN/GN/LN/FixBN/FBN
//! baselines, moving averages and mergeable sufficient statistics.

mod kernel;

pub mod batch;
pub mod ema;
pub mod group;
pub mod hybrid;
pub mod stats;


use core::fmt;
use core::str::FromStr;

pub use batch::{BatchNorm, BnVariant};
pub use ema::ema_update;
pub use group::GroupNorm;
pub use hybrid::{hybrid_mix, mixing_weights, HybridBatchNorm};
pub use stats::{ChannelStats, GlobalStats, Moments};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const EPSILON: f64 = 1e-5;
/// Keep-weight of the running-statistics moving average in BN/FixBN/FBN.
pub const BN_MOMENTUM: f64 = 0.9;
pub const GN_GROUPS: usize = 2;

/// Forward behaviour requested from a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Caches inputs for backward; batch-dependent statistics where applicable.
    Train,
    /// Pure function of the input; no caches, no state changes.
    Eval,
    /// Eval-mode normalization that also records input statistics in HBN layers.
    CollectStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormKind {
    Bn,
    Gn,
    Ln,
    FixBn,
    Fbn,
    Hbn,
    None,
}

impl NormKind {
    pub const ALL: [NormKind; 7] = [
        NormKind::Bn,
        NormKind::Gn,
        NormKind::Ln,
        NormKind::FixBn,
        NormKind::Fbn,
        NormKind::Hbn,
        NormKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Bn => "bn",
            NormKind::Gn => "gn",
            NormKind::Ln => "ln",
            NormKind::FixBn => "fixbn",
            NormKind::Fbn => "fbn",
            NormKind::Hbn => "hbn",
            NormKind::None => "none",
        }
    }

    /// Layers of this kind keep running statistics that are averaged like weights.
    pub fn has_buffers(self) -> bool {
        matches!(self, NormKind::Bn | NormKind::FixBn | NormKind::Fbn)
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "bn" | "naive_bn" => NormKind::Bn,
            "gn" => NormKind::Gn,
            "ln" => NormKind::Ln,
            "fixbn" => NormKind::FixBn,
            "fbn" => NormKind::Fbn,
            "hbn" => NormKind::Hbn,
            "none" => NormKind::None,
            other => {
                return Err(Error::Config(alloc::format!(
                    "unknown normalization kind `{}`",
                    other
                )))
            }
        })
    }
}

/// A normalization layer of any kind.
#[derive(Debug, Clone)]
pub enum NormLayer<T: Scalar = f32> {
    Batch(BatchNorm<T>),
    Group(GroupNorm<T>),
    Hybrid(HybridBatchNorm<T>),
}

impl<T: Scalar> NormLayer<T> {
    /// `kind` must not be [`NormKind::None`]. `freeze_round` is only read by FixBN.
    pub fn new(kind: NormKind, channels: usize, freeze_round: u32) -> Result<Self> {
        Ok(match kind {
            NormKind::Bn => NormLayer::Batch(BatchNorm::new(channels, BnVariant::Standard)),
            NormKind::FixBn => {
                NormLayer::Batch(BatchNorm::new(channels, BnVariant::Fixed { freeze_round }))
            }
            NormKind::Fbn => NormLayer::Batch(BatchNorm::new(channels, BnVariant::Running)),
            NormKind::Gn => NormLayer::Group(GroupNorm::new(channels, GN_GROUPS)?),
            NormKind::Ln => NormLayer::Group(GroupNorm::layer_norm(channels)),
            NormKind::Hbn => NormLayer::Hybrid(HybridBatchNorm::new(channels)),
            NormKind::None => {
                return Err(Error::Config("`none` has no normalization layer".into()))
            }
        })
    }

    pub fn channels(&self) -> usize {
        match self {
            NormLayer::Batch(l) => l.channels(),
            NormLayer::Group(l) => l.channels(),
            NormLayer::Hybrid(l) => l.channels(),
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        match self {
            NormLayer::Batch(l) => l.forward(input, mode),
            NormLayer::Group(l) => l.forward(input, mode),
            NormLayer::Hybrid(l) => l.forward(input, mode),
        }
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            NormLayer::Batch(l) => l.backward(upstream),
            NormLayer::Group(l) => l.backward(upstream),
            NormLayer::Hybrid(l) => l.backward(upstream),
        }
    }

    pub fn set_epsilon(&mut self, eps: f64) {
        match self {
            NormLayer::Batch(l) => l.eps = eps,
            NormLayer::Group(l) => l.eps = eps,
            NormLayer::Hybrid(l) => l.eps = eps,
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            NormLayer::Batch(l) => l.clear_cache(),
            NormLayer::Group(l) => l.clear_cache(),
            NormLayer::Hybrid(l) => l.clear_cache(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> NormLayer<U> {
        match self {
            NormLayer::Batch(l) => NormLayer::Batch(l.cast()),
            NormLayer::Group(l) => NormLayer::Group(l.cast()),
            NormLayer::Hybrid(l) => NormLayer::Hybrid(l.cast()),
        }
    }
}
