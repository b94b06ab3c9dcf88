use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::aggregate::unbiased_pool;
use super::sim::Executor;
use super::{ClientRecord, ClientUpdate, GlobalModel};
use crate::data::Dataset;
use crate::error::{bail, Result};
use crate::nn::{softmax_cross_entropy, Model, ModelParams, OptimState, Sgd};
use crate::norm::{ChannelStats, GlobalStats, NormLayer, NormMode};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Samples per forward pass when no gradients are needed.
pub(crate) const INFERENCE_CHUNK: usize = 256;

/// A client-side replica of the global model, carrying the client's hybrid
/// factors when given.
pub fn instantiate(
    template: &Model<f32>,
    global: &GlobalModel,
    alphas: Option<&[Tensor<f32>]>,
) -> Result<Model<f32>> {
    let mut model = template.clone();
    model.load_shared(&global.weights)?;
    if !global.stats.is_empty() {
        let stats: Vec<Option<GlobalStats>> = global.stats.iter().cloned().map(Some).collect();
        model.set_global_stats(&stats)?;
    }
    if !global.buffers.is_empty() {
        model.load_buffers(&global.buffers)?;
    }
    if let Some(a) = alphas {
        model.set_alphas(a)?;
    }
    model.set_round(global.round + 1);
    Ok(model)
}

/// Evenly spaced subsample of at most `cap` indices.
fn capped(indices: &[usize], cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(k) if k < indices.len() => (0..k).map(|i| indices[i * indices.len() / k]).collect(),
        _ => indices.to_vec(),
    }
}

/// Per-HBN-layer statistics of the downloaded model on the client's data,
/// gathered by one gradient-free `CollectStats` pass. Empty for models
/// without hybrid layers.
pub fn client_collect_stats(
    template: &Model<f32>,
    global: &GlobalModel,
    data: &Dataset,
    indices: &[usize],
    cap: Option<usize>,
) -> Result<Vec<ChannelStats>> {
    if indices.is_empty() {
        bail!(Data, "client holds no samples");
    }
    let mut model = instantiate(template, global, None)?;
    for chunk in capped(indices, cap).chunks(INFERENCE_CHUNK) {
        let x = data.images.select_rows(chunk)?;
        model.forward(&x, NormMode::CollectStats)?;
    }
    Ok(model.take_local_stats())
}

/// Initial global statistics for a model whose hybrid layers have none yet.
///
/// Works one layer at a time: every client records the input statistics of
/// layer `l` with layers `< l` already normalized by their pooled estimates,
/// and the pooled estimate of layer `l` is fixed before moving on.
pub fn bootstrap_global_stats<E: Executor>(
    template: &Model<f32>,
    weights: &ModelParams,
    data: &Dataset,
    clients: &[&[usize]],
    cap: Option<usize>,
    executor: &E,
) -> Result<Vec<GlobalStats>> {
    let mut model = template.clone();
    model.load_shared(weights)?;
    let hybrid: Vec<usize> = model
        .norm_layers()
        .enumerate()
        .filter(|(_, (_, l))| matches!(l, NormLayer::Hybrid(_)))
        .map(|(i, _)| i)
        .collect();
    let mut stats: Vec<Option<GlobalStats>> = alloc::vec![None; hybrid.len()];
    for (h, &norm_index) in hybrid.iter().enumerate() {
        model.set_global_stats(&stats)?;
        let shared = &model;
        let parts = executor.map(clients.to_vec(), |indices| -> Result<ChannelStats> {
            if indices.is_empty() {
                bail!(Data, "client holds no samples");
            }
            let mut m = shared.clone();
            let mut acc: Option<ChannelStats> = None;
            for chunk in capped(indices, cap).chunks(INFERENCE_CHUNK) {
                let x = data.images.select_rows(chunk)?;
                let y = m.forward_to_norm_input(&x, NormMode::Eval, norm_index)?;
                match &mut acc {
                    Some(s) => s.accumulate(&y)?,
                    None => acc = Some(ChannelStats::from_tensor(&y)?),
                }
            }
            Ok(acc.expect("at least one chunk"))
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ChannelStats> = parts.iter().collect();
        stats[h] = Some(unbiased_pool(&refs)?);
    }
    Ok(stats
        .into_iter()
        .map(|s| s.expect("every layer pooled"))
        .collect())
}

/// Deterministic visiting order of a client's samples in one local epoch.
pub fn batch_order(seed: u64, round: u32, client: usize, epoch: u32, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(
        seed,
        Stream::Shuffle,
        &[round as u64, client as u64, epoch as u64],
    );
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub sgd: Sgd,
    pub seed: u64,
    pub round: u32,
}

/// Local SGD from the global weights. Updates `client.alphas` in place and
/// returns the new weights; the statistics slot of the update is left empty.
pub fn client_local_train(
    template: &Model<f32>,
    global: &GlobalModel,
    client: &mut ClientRecord,
    data: &Dataset,
    cfg: &LocalTrainConfig,
) -> Result<ClientUpdate> {
    let n = client.indices.len();
    if n == 0 {
        bail!(Data, "client {} holds no samples", client.id);
    }
    let mut batch = cfg.batch_size;
    if batch > n {
        log::warn!(
            "client {}: batch size {} exceeds its {} samples; using one full batch",
            client.id,
            batch,
            n
        );
        batch = n;
    }
    let mut model = instantiate(template, global, Some(&client.alphas))?;
    let mut optim = OptimState::new();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    for epoch in 0..cfg.epochs {
        let order = batch_order(cfg.seed, cfg.round, client.id, epoch, n);
        for positions in order.chunks(batch) {
            let idx: Vec<usize> = positions.iter().map(|&p| client.indices[p]).collect();
            let x = data.images.select_rows(&idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let logits = model.forward(&x, NormMode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            model.backward(&grad)?;
            cfg.sgd.step(&mut model, &mut optim)?;
            loss_sum += loss;
            steps += 1;
        }
    }
    model.clear_caches();
    client.alphas = model.alphas();
    Ok(ClientUpdate {
        client: client.id,
        weights: model.shared_params(),
        stats: Vec::new(),
        stats_capped: false,
        buffers: model.buffers(),
        samples: n,
        train_loss: if steps == 0 {
            f64::NAN
        } else {
            loss_sum / steps as f64
        },
    })
}
