//! Pooled-data checks of the server statistics.
//!
//! The unbiasedness check trains HBN with full participation and `λ = 1`, so
//! after every round the server statistics must equal the statistics of one
//! statistics pass of the downloaded model over the union of the client data.
//! The reference here is computed from scratch with a two-pass mean/variance,
//! independent of the sufficient-statistics code path.
//!
//! The naive check runs FedAvg with plain BN and reports how far the averaged
//! running statistics are from the pooled statistics.

use fedhbn_core::data::Dataset;
use fedhbn_core::federation::{instantiate, max_relative_stats_error, GlobalModel, Simulation};
use fedhbn_core::nn::Model;
use fedhbn_core::norm::{Moments, NormKind, NormLayer, NormMode};
use serde::Serialize;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::exec::Threaded;
use crate::experiment::{arch_for, load_datasets, make_partition, run_on};

pub const UNBIASED_TOLERANCE: f64 = 1e-5;
pub const NAIVE_PHIS: [f64; 3] = [10.0, 0.6, 0.1];
const CHUNK: usize = 128;

/// The stand-alone default: 5 clients on φ = 0.1 synthetic images.
pub fn default_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        clients: 5,
        phi: 0.1,
        dataset: DatasetSpec::Synthetic {
            classes: 10,
            train: 600,
            test: 100,
            channels: 3,
            size: 16,
            separation: 1.0,
            tint: 0.0,
            contrast: 0.0,
        },
        ..ExperimentConfig::default()
    };
    cfg.fed.rounds = 3;
    cfg
}

/// Two-pass pooled mean and `N − 1` variance of every hybrid layer's input,
/// with the model normalizing by its current global statistics.
pub fn union_statistics(
    model: &Model<f32>,
    data: &Dataset,
    indices: &[usize],
) -> Result<Vec<Moments>> {
    if indices.len() < 2 {
        return Err(Error::Format(
            "pooled statistics need at least two samples".into(),
        ));
    }
    let mut model = model.clone();
    let hybrid: Vec<usize> = model
        .norm_layers()
        .enumerate()
        .filter(|(_, (_, l))| matches!(l, NormLayer::Hybrid(_)))
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for l in hybrid {
        let mut inputs = Vec::new();
        for chunk in indices.chunks(CHUNK) {
            let x = data.images.select_rows(chunk)?;
            inputs.push(model.forward_to_norm_input(&x, NormMode::Eval, l)?);
        }
        let c = inputs[0].shape()[1];
        let mut count = 0usize;
        let mut sum = vec![0.0f64; c];
        for t in &inputs {
            let (n, _, s) = t.ncs()?;
            count += n * s;
            for (i, v) in t.data().iter().enumerate() {
                sum[(i / s) % c] += *v as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut dev = vec![0.0f64; c];
        for t in &inputs {
            let (_, _, s) = t.ncs()?;
            for (i, v) in t.data().iter().enumerate() {
                let ch = (i / s) % c;
                dev[ch] += (*v as f64 - mean[ch]).powi(2);
            }
        }
        let var = dev.iter().map(|d| d / (count - 1) as f64).collect();
        out.push(Moments::new(mean, var)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundCheck {
    pub round: u32,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaiveGap {
    pub phi: f64,
    pub seed: u64,
    /// Mean stats gap over the training rounds.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub rounds: Vec<RoundCheck>,
    pub naive: Vec<NaiveGap>,
}

impl OracleReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rounds
            .iter()
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.rounds.is_empty() && self.max_rel_error() < UNBIASED_TOLERANCE
    }
}

fn compare(
    template: &Model<f32>,
    previous: &GlobalModel,
    now: &[Moments],
    data: &Dataset,
    union: &[usize],
) -> Result<f64> {
    let model = instantiate(template, previous, None)?;
    let oracle = union_statistics(&model, data, union)?;
    Ok(max_relative_stats_error(now, &oracle)?)
}

/// HBN with full participation and `λ = 1`: the server statistics after each
/// round (and after the closing statistics round) against the union oracle.
pub fn unbiasedness_check(base: &ExperimentConfig, train: &Dataset) -> Result<Vec<RoundCheck>> {
    let mut cfg = base.clone();
    cfg.fed.norm = NormKind::Hbn;
    cfg.fed.participation = 1.0;
    cfg.fed.lambda = 1.0;
    cfg.fed.stats_cap = None;
    cfg.fed.measure_gap = false;
    let partition = make_partition(&cfg, train)?;
    let union: Vec<usize> = {
        let mut all: Vec<usize> = partition.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    };
    let arch = arch_for(train, &cfg)?;
    let executor = Threaded::new(cfg.threads);
    let mut sim = Simulation::new(cfg.fed.clone(), arch, train, None, partition)?;
    sim.bootstrap(&executor)?;
    let mut out = Vec::new();
    for _ in 0..cfg.fed.rounds {
        let o = sim.run_round(&executor)?;
        let err = compare(
            sim.template(),
            &o.previous,
            &sim.global().stats,
            train,
            &union,
        )?;
        out.push(RoundCheck {
            round: o.metrics.round,
            max_rel_error: err,
        });
    }
    let o = sim.final_round(&executor)?;
    let err = compare(
        sim.template(),
        &o.previous,
        &sim.global().stats,
        train,
        &union,
    )?;
    out.push(RoundCheck {
        round: o.metrics.round,
        max_rel_error: err,
    });
    Ok(out)
}

/// Mean naive-BN stats gap of a run at `phi` with one local epoch.
pub fn naive_gap(base: &ExperimentConfig, train: &Dataset, phi: f64, seed: u64) -> Result<f64> {
    let mut cfg = base.clone();
    cfg.fed.norm = NormKind::Bn;
    cfg.fed.local_epochs = 1;
    cfg.fed.measure_gap = true;
    cfg.fed.seed = seed;
    cfg.phi = phi;
    let r = run_on(&cfg, train, None, None)?;
    let gaps: Vec<f64> = r.rows.iter().filter_map(|row| row.stats_gap).collect();
    if gaps.is_empty() {
        return Err(Error::Format("no round measured a stats gap".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// The unbiasedness check plus naive gaps for every `phis` × `seeds`.
pub fn oracle_check(base: &ExperimentConfig, phis: &[f64], seeds: &[u64]) -> Result<OracleReport> {
    let (train, _) = load_datasets(&base.dataset, base.fed.seed)?;
    let rounds = unbiasedness_check(base, &train)?;
    let mut naive = Vec::new();
    for &seed in seeds {
        for &phi in phis {
            naive.push(NaiveGap {
                phi,
                seed,
                gap: naive_gap(base, &train, phi, seed)?,
            });
        }
    }
    Ok(OracleReport { rounds, naive })
}
