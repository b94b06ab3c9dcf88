use alloc::vec::Vec;

use super::{ClientUpdate, RoundPlan};
use crate::error::{bail, Result};
use crate::nn::{Buffers, ModelParams, NamedTensor};
use crate::norm::{ema_update, ChannelStats, GlobalStats, Moments};
use crate::tensor::Tensor;

/// Updates in plan order (ascending client id), or a protocol error when the
/// set of uploads differs from the plan.
fn ordered<'a>(updates: &'a [ClientUpdate], plan: &RoundPlan) -> Result<Vec<&'a ClientUpdate>> {
    if updates.len() != plan.participants.len() {
        bail!(
            Protocol,
            "round {} expects {} updates, got {}",
            plan.round,
            plan.participants.len(),
            updates.len()
        );
    }
    let mut out = Vec::with_capacity(updates.len());
    for &id in &plan.participants {
        match updates.iter().find(|u| u.client == id) {
            Some(u) => out.push(u),
            None => bail!(
                Protocol,
                "missing update from client {} in round {}",
                id,
                plan.round
            ),
        }
    }
    Ok(out)
}

fn weighted_sum(parts: &[(&[f32], f64)], len: usize) -> Vec<f32> {
    let mut acc = alloc::vec![0.0f64; len];
    for (data, w) in parts {
        for (a, &v) in acc.iter_mut().zip(data.iter()) {
            *a += w * v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// `ω_g = Σ (N_k/N) ω_k`, accumulated in 64-bit in ascending client order.
pub fn aggregate_weights(updates: &[ClientUpdate], plan: &RoundPlan) -> Result<ModelParams> {
    let ordered = ordered(updates, plan)?;
    let first = &ordered[0].weights;
    let mut out = Vec::with_capacity(first.len());
    for (i, p) in first.iter().enumerate() {
        let mut parts = Vec::with_capacity(ordered.len());
        for (u, &w) in ordered.iter().zip(&plan.weights) {
            let q = u
                .weights
                .get(i)
                .filter(|q| q.name == p.name && q.tensor.shape() == p.tensor.shape());
            let Some(q) = q else {
                bail!(
                    Protocol,
                    "client {} uploaded misaligned parameter {}",
                    u.client,
                    p.name
                );
            };
            parts.push((q.tensor.data(), w));
        }
        let data = weighted_sum(&parts, p.tensor.len());
        out.push(NamedTensor {
            name: p.name.clone(),
            tensor: Tensor::new(p.tensor.shape(), data)?,
        });
    }
    Ok(out)
}

/// Plain weighted average of running buffers, the naive baseline.
pub fn aggregate_buffers(updates: &[ClientUpdate], plan: &RoundPlan) -> Result<Buffers> {
    let ordered = ordered(updates, plan)?;
    let mut out = Buffers::new();
    for (i, (name, m)) in ordered[0].buffers.iter().enumerate() {
        let c = m.channels();
        let mut mean = alloc::vec![0.0; c];
        let mut var = alloc::vec![0.0; c];
        for (u, &w) in ordered.iter().zip(&plan.weights) {
            let Some((_, b)) = u
                .buffers
                .get(i)
                .filter(|(n, b)| n == name && b.channels() == c)
            else {
                bail!(
                    Protocol,
                    "client {} uploaded misaligned buffer {}",
                    u.client,
                    name
                );
            };
            for ch in 0..c {
                mean[ch] += w * b.mean[ch];
                var[ch] += w * b.var[ch];
            }
        }
        out.push((name.clone(), Moments::new(mean, var)?));
    }
    Ok(out)
}

/// Pools per-part statistics:
/// `μ = Σ (N_k/N) μ_k`, `σ² = Σ N_k [σ²_k + (μ_k − μ)²] / (N − 1)`,
/// with `N_k` the element count and `σ²_k` the population variance of part `k`.
pub fn unbiased_pool(parts: &[&ChannelStats]) -> Result<GlobalStats> {
    let Some(first) = parts.first() else {
        bail!(Protocol, "no statistics to aggregate");
    };
    let c = first.channels();
    if parts.iter().any(|p| p.channels() != c) {
        bail!(Shape, "statistics disagree on channel count");
    }
    let total: u64 = parts.iter().map(|p| p.count).sum();
    if total < 2 {
        bail!(
            DegenerateVariance,
            "pooled variance needs at least 2 elements per channel, got {}",
            total
        );
    }
    let n = total as f64;
    let moments: Vec<(f64, Vec<f64>, Vec<f64>)> = parts
        .iter()
        .filter(|p| p.count > 0)
        .map(|p| (p.count as f64, p.mean(), p.population_variance()))
        .collect();
    let mut mean = alloc::vec![0.0; c];
    for (nk, mk, _) in &moments {
        for ch in 0..c {
            mean[ch] += nk / n * mk[ch];
        }
    }
    let mut var = alloc::vec![0.0; c];
    for (nk, mk, vk) in &moments {
        for ch in 0..c {
            let d = mk[ch] - mean[ch];
            var[ch] += nk * (vk[ch] + d * d);
        }
    }
    for v in var.iter_mut() {
        *v /= n - 1.0;
    }
    Moments::new(mean, var)
}

/// Per-layer unbiased global statistics of a round's uploads.
pub fn aggregate_stats_unbiased(
    updates: &[ClientUpdate],
    plan: &RoundPlan,
) -> Result<Vec<GlobalStats>> {
    let ordered = ordered(updates, plan)?;
    let layers = ordered[0].stats.len();
    if ordered.iter().any(|u| u.stats.len() != layers) {
        bail!(
            Protocol,
            "clients uploaded statistics for different layer counts"
        );
    }
    (0..layers)
        .map(|l| {
            let parts: Vec<&ChannelStats> = ordered.iter().map(|u| &u.stats[l]).collect();
            unbiased_pool(&parts)
        })
        .collect()
}

/// Blends new statistics into the previous ones layer by layer; without a
/// previous estimate the new one is taken as is.
pub fn server_ema(
    prev: Option<&[GlobalStats]>,
    new: Vec<GlobalStats>,
    lambda: f64,
) -> Result<Vec<GlobalStats>> {
    match prev {
        None => {
            if !(lambda > 0.0 && lambda <= 1.0) {
                bail!(Config, "λ must lie in (0, 1], got {}", lambda);
            }
            Ok(new)
        }
        Some(prev) => {
            if prev.len() != new.len() {
                bail!(
                    Shape,
                    "previous statistics cover {} layers, new {}",
                    prev.len(),
                    new.len()
                );
            }
            prev.iter()
                .zip(&new)
                .map(|(o, n)| ema_update(o, n, lambda))
                .collect()
        }
    }
}
