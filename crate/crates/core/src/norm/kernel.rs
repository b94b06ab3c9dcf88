//! Per-channel normalization kernels shared by the batch-norm family and HBN.
//!
//! Everything is evaluated in `f64`; the surrounding layers convert from and to
//! the tensor precision.

use alloc::vec;
use alloc::vec::Vec;

use super::stats::{channel_moments, Moments};
use crate::error::{bail, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

fn affine_params<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64()).collect()
}

/// Cache for normalization with batch-dependent statistics.
#[derive(Debug, Clone)]
pub(crate) struct MixedCache {
    shape: Vec<usize>,
    x: Vec<f64>,
    batch: Moments,
    mixed: Moments,
    global: Option<Moments>,
    /// Global weight `s(α)` per channel; zero for plain batch norm.
    weight: Vec<f64>,
    count: usize,
}

/// Normalizes with `μ̂ = (1 − s)·μ_b + s·μ_g` and `σ̂² = (1 − s)·σ²_b + s·σ²_g`.
///
/// `alpha = None` means pure batch statistics (`s = 0`).
pub(crate) fn forward_mixed<T: Scalar>(
    input: &Tensor<T>,
    alpha: Option<(&Tensor<T>, &Moments)>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, MixedCache)> {
    let (n, c, s) = input.ncs()?;
    if gamma.len() != c {
        bail!(
            Config,
            "normalization layer has {} channels, input has {}",
            gamma.len(),
            c
        );
    }
    let (bm, bv, count) = channel_moments(input)?;
    let batch = Moments { mean: bm, var: bv };
    let (weight, global) = match alpha {
        Some((a, g)) => {
            if g.channels() != c || a.len() != c {
                bail!(
                    Shape,
                    "hybrid factor/global statistics do not cover {} channels",
                    c
                );
            }
            (
                a.data().iter().map(|v| sigmoid(v.to_f64())).collect(),
                Some(g.clone()),
            )
        }
        None => (vec![0.0; c], None),
    };
    let mixed = match &global {
        Some(g) => hybrid_mix_weights(&weight, &batch, g),
        None => batch.clone(),
    };
    let gm = affine_params(gamma);
    let bt = affine_params(beta);
    let inv: Vec<f64> = mixed
        .var
        .iter()
        .map(|v| 1.0 / libm::sqrt(v + eps))
        .collect();
    let x: Vec<f64> = input.data().iter().map(|v| v.to_f64()).collect();
    let mut y = Vec::with_capacity(x.len());
    for sample in 0..n {
        for ch in 0..c {
            let base = (sample * c + ch) * s;
            for &v in &x[base..base + s] {
                y.push(T::from_f64(
                    gm[ch] * (v - mixed.mean[ch]) * inv[ch] + bt[ch],
                ));
            }
        }
    }
    let out = Tensor::new(input.shape(), y)?;
    Ok((
        out,
        MixedCache {
            shape: input.shape().to_vec(),
            x,
            batch,
            mixed,
            global,
            weight,
            count,
        },
    ))
}

pub(crate) struct MixedGrads {
    pub input: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub(crate) fn backward_mixed<T: Scalar>(
    cache: &MixedCache,
    upstream: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
) -> Result<MixedGrads> {
    if upstream.shape() != cache.shape.as_slice() {
        bail!(
            Shape,
            "upstream {:?} vs cached {:?}",
            upstream.shape(),
            cache.shape
        );
    }
    let (n, c, s) = upstream.ncs()?;
    let m = cache.count as f64;
    let gm = affine_params(gamma);
    let dy = upstream.data();

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dvar_hat = vec![0.0; c];
    let mut dmean_hat = vec![0.0; c];
    let inv: Vec<f64> = cache
        .mixed
        .var
        .iter()
        .map(|v| 1.0 / libm::sqrt(v + eps))
        .collect();
    for sample in 0..n {
        for ch in 0..c {
            let base = (sample * c + ch) * s;
            for i in base..base + s {
                let g = dy[i].to_f64();
                let centered = cache.x[i] - cache.mixed.mean[ch];
                dgamma[ch] += g * centered * inv[ch];
                dbeta[ch] += g;
                let dxhat = g * gm[ch];
                dvar_hat[ch] += dxhat * centered;
                dmean_hat[ch] -= dxhat * inv[ch];
            }
        }
    }
    for ch in 0..c {
        dvar_hat[ch] *= -0.5 * inv[ch] * inv[ch] * inv[ch];
    }

    let mut dx = vec![0.0; cache.x.len()];
    for sample in 0..n {
        for ch in 0..c {
            let batch_w = 1.0 - cache.weight[ch];
            let dmean_b = dmean_hat[ch] * batch_w / m;
            let dvar_b = dvar_hat[ch] * batch_w * 2.0 / m;
            let base = (sample * c + ch) * s;
            for i in base..base + s {
                let dxhat = dy[i].to_f64() * gm[ch];
                dx[i] = dxhat * inv[ch] + dmean_b + dvar_b * (cache.x[i] - cache.batch.mean[ch]);
            }
        }
    }

    let dalpha = match &cache.global {
        Some(g) => (0..c)
            .map(|ch| {
                let w = cache.weight[ch];
                let ds = w * (1.0 - w);
                ds * (dmean_hat[ch] * (g.mean[ch] - cache.batch.mean[ch])
                    + dvar_hat[ch] * (g.var[ch] - cache.batch.var[ch]))
            })
            .collect(),
        None => vec![0.0; c],
    };
    Ok(MixedGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
        alpha: dalpha,
    })
}

/// Cache for normalization with statistics that are constants of the forward.
#[derive(Debug, Clone)]
pub(crate) struct FixedCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv: Vec<f64>,
}

pub(crate) fn forward_fixed<T: Scalar>(
    input: &Tensor<T>,
    stats: &Moments,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, FixedCache)> {
    let (n, c, s) = input.ncs()?;
    if gamma.len() != c || stats.channels() != c {
        bail!(
            Config,
            "normalization layer has {} channels, input has {}",
            gamma.len(),
            c
        );
    }
    let gm = affine_params(gamma);
    let bt = affine_params(beta);
    let inv: Vec<f64> = stats
        .var
        .iter()
        .map(|v| 1.0 / libm::sqrt(v + eps))
        .collect();
    let x = input.data();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for sample in 0..n {
        for ch in 0..c {
            let base = (sample * c + ch) * s;
            for &v in &x[base..base + s] {
                let h = (v.to_f64() - stats.mean[ch]) * inv[ch];
                xhat.push(h);
                y.push(T::from_f64(gm[ch] * h + bt[ch]));
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), y)?,
        FixedCache {
            shape: input.shape().to_vec(),
            xhat,
            inv,
        },
    ))
}

pub(crate) fn backward_fixed<T: Scalar>(
    cache: &FixedCache,
    upstream: &Tensor<T>,
    gamma: &Tensor<T>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if upstream.shape() != cache.shape.as_slice() {
        bail!(
            Shape,
            "upstream {:?} vs cached {:?}",
            upstream.shape(),
            cache.shape
        );
    }
    let (n, c, s) = upstream.ncs()?;
    let gm = affine_params(gamma);
    let dy = upstream.data();
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for sample in 0..n {
        for ch in 0..c {
            let base = (sample * c + ch) * s;
            for i in base..base + s {
                let g = dy[i].to_f64();
                dgamma[ch] += g * cache.xhat[i];
                dbeta[ch] += g;
                dx[i] = g * gm[ch] * cache.inv[ch];
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Mix with precomputed global weights `s` (batch weight `1 − s`).
pub(crate) fn hybrid_mix_weights(weight: &[f64], batch: &Moments, global: &Moments) -> Moments {
    let mix = |b: &[f64], g: &[f64]| -> Vec<f64> {
        weight
            .iter()
            .zip(b.iter().zip(g))
            .map(|(&w, (&b, &g))| (1.0 - w) * b + w * g)
            .collect()
    };
    Moments {
        mean: mix(&batch.mean, &global.mean),
        var: mix(&batch.var, &global.var),
    }
}
