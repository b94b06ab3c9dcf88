//! Pooled-data reference statistics and distances to them.

use alloc::vec::Vec;

use super::client::INFERENCE_CHUNK;
use crate::data::Dataset;
use crate::error::{bail, Result};
use crate::nn::Model;
use crate::norm::{ChannelStats, Moments, NormLayer, NormMode, EPSILON};

/// Denominator floor of relative statistics errors.
const REL_FLOOR: f64 = 1e-8;

/// True statistics of every BN-family or hybrid layer on the pooled samples
/// `indices`: layer `l` sees its inputs with every earlier layer normalized by
/// its own pooled statistics. Variances use the `N − 1` denominator.
pub fn layerwise_oracle(
    model: &Model<f32>,
    data: &Dataset,
    indices: &[usize],
) -> Result<Vec<Moments>> {
    if indices.len() < 2 {
        bail!(
            DegenerateVariance,
            "pooled statistics need at least two samples"
        );
    }
    let mut model = model.clone();
    let count = model.norm_layer_count();
    let mut out = Vec::new();
    for l in 0..count {
        if let Some((_, NormLayer::Group(_))) = model.norm_layers().nth(l) {
            continue;
        }
        let mut acc: Option<ChannelStats> = None;
        for chunk in indices.chunks(INFERENCE_CHUNK) {
            let x = data.images.select_rows(chunk)?;
            let y = model.forward_to_norm_input(&x, NormMode::Eval, l)?;
            match &mut acc {
                Some(s) => s.accumulate(&y)?,
                None => acc = Some(ChannelStats::from_tensor(&y)?),
            }
        }
        let stats = acc.expect("at least one chunk");
        let moments = Moments::new(stats.mean(), stats.sample_variance()?)?;
        match model.norm_layers_mut().nth(l).map(|(_, layer)| layer) {
            Some(NormLayer::Batch(b)) => b.running = moments.clone(),
            Some(NormLayer::Hybrid(h)) => h.set_global(moments.clone())?,
            _ => unreachable!("group layers are skipped above"),
        }
        out.push(moments);
    }
    Ok(out)
}

fn check_aligned(a: &[Moments], b: &[Moments]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.channels() != y.channels()) {
        bail!(Shape, "statistics are not layer-aligned");
    }
    Ok(())
}

/// Mean over layers and channels of `|σ²/σ²_o − 1| + |μ − μ_o| / σ_o`.
pub fn stats_gap(actual: &[Moments], oracle: &[Moments]) -> Result<f64> {
    check_aligned(actual, oracle)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (a, o) in actual.iter().zip(oracle) {
        for c in 0..a.channels() {
            let sd = libm::sqrt(o.var[c] + EPSILON);
            total += (a.var[c] - o.var[c]).abs() / (o.var[c] + EPSILON)
                + (a.mean[c] - o.mean[c]).abs() / sd;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Largest relative deviation of any mean or variance entry.
pub fn max_relative_stats_error(actual: &[Moments], oracle: &[Moments]) -> Result<f64> {
    check_aligned(actual, oracle)?;
    let rel = |a: f64, o: f64| (a - o).abs() / o.abs().max(REL_FLOOR);
    let mut worst = 0.0f64;
    for (a, o) in actual.iter().zip(oracle) {
        for c in 0..a.channels() {
            worst = worst
                .max(rel(a.mean[c], o.mean[c]))
                .max(rel(a.var[c], o.var[c]));
        }
    }
    Ok(worst)
}
