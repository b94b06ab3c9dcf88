use alloc::vec;
use alloc::vec::Vec;

use super::{NormMode, EPSILON};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Cache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    /// `1/√(σ² + ε)` per (sample, group).
    inv: Vec<f64>,
}

/// Group normalization: per-sample statistics over each group of channels and
/// all spatial positions. One group gives layer normalization.
#[derive(Debug, Clone)]
pub struct GroupNorm<T: Scalar = f32> {
    pub groups: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub gamma_grad: Tensor<T>,
    pub beta_grad: Tensor<T>,
    pub eps: f64,
    cache: Option<Cache>,
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            bail!(
                Config,
                "{} channels cannot be split into {} groups",
                channels,
                groups
            );
        }
        Ok(Self {
            groups,
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            gamma_grad: Tensor::zeros(&[channels]),
            beta_grad: Tensor::zeros(&[channels]),
            eps: EPSILON,
            cache: None,
        })
    }

    /// Layer normalization over `(C, H, W)` with per-channel affine terms.
    pub fn layer_norm(channels: usize) -> Self {
        Self::new(channels, 1).expect("one group always divides")
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let (n, c, s) = input.ncs()?;
        if c != self.channels() {
            bail!(
                Config,
                "group norm has {} channels, input has {}",
                self.channels(),
                c
            );
        }
        let per_group = c / self.groups;
        let m = (per_group * s) as f64;
        let x = input.data();
        let mut xhat = vec![0.0f64; x.len()];
        let mut inv = vec![0.0f64; n * self.groups];
        for sample in 0..n {
            for g in 0..self.groups {
                let start = (sample * c + g * per_group) * s;
                let block = &x[start..start + per_group * s];
                let mean = block.iter().map(|v| v.to_f64()).sum::<f64>() / m;
                let var = block
                    .iter()
                    .map(|v| {
                        let d = v.to_f64() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / m;
                let iv = 1.0 / libm::sqrt(var + self.eps);
                inv[sample * self.groups + g] = iv;
                for (h, v) in xhat[start..start + per_group * s].iter_mut().zip(block) {
                    *h = (v.to_f64() - mean) * iv;
                }
            }
        }
        let mut y = Vec::with_capacity(x.len());
        for sample in 0..n {
            for ch in 0..c {
                let (gm, bt) = (
                    self.gamma.data()[ch].to_f64(),
                    self.beta.data()[ch].to_f64(),
                );
                let base = (sample * c + ch) * s;
                for &h in &xhat[base..base + s] {
                    y.push(T::from_f64(gm * h + bt));
                }
            }
        }
        self.cache = match mode {
            NormMode::Train => Some(Cache {
                shape: input.shape().to_vec(),
                xhat,
                inv,
            }),
            _ => None,
        };
        Tensor::new(input.shape(), y)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = &self.cache else {
            bail!(State, "group norm backward without a Train-mode forward");
        };
        if upstream.shape() != cache.shape.as_slice() {
            bail!(
                Shape,
                "upstream {:?} vs cached {:?}",
                upstream.shape(),
                cache.shape
            );
        }
        let (n, c, s) = upstream.ncs()?;
        let per_group = c / self.groups;
        let m = (per_group * s) as f64;
        let dy = upstream.data();
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        let mut dxhat = vec![0.0f64; dy.len()];
        for sample in 0..n {
            for ch in 0..c {
                let gm = self.gamma.data()[ch].to_f64();
                let base = (sample * c + ch) * s;
                for i in base..base + s {
                    let g = dy[i].to_f64();
                    dgamma[ch] += g * cache.xhat[i];
                    dbeta[ch] += g;
                    dxhat[i] = g * gm;
                }
            }
        }
        let mut dx = vec![T::ZERO; dy.len()];
        for sample in 0..n {
            for g in 0..self.groups {
                let start = (sample * c + g * per_group) * s;
                let range = start..start + per_group * s;
                let sum_d: f64 = dxhat[range.clone()].iter().sum();
                let sum_dh: f64 = dxhat[range.clone()]
                    .iter()
                    .zip(&cache.xhat[range.clone()])
                    .map(|(d, h)| d * h)
                    .sum();
                let iv = cache.inv[sample * self.groups + g];
                for i in range {
                    dx[i] = T::from_f64(iv * (dxhat[i] - sum_d / m - cache.xhat[i] * sum_dh / m));
                }
            }
        }
        self.gamma_grad = Tensor::new(&[c], dgamma.iter().map(|&v| T::from_f64(v)).collect())?;
        self.beta_grad = Tensor::new(&[c], dbeta.iter().map(|&v| T::from_f64(v)).collect())?;
        Tensor::new(upstream.shape(), dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Scalar>(&self) -> GroupNorm<U> {
        GroupNorm {
            groups: self.groups,
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            gamma_grad: self.gamma_grad.cast(),
            beta_grad: self.beta_grad.cast(),
            eps: self.eps,
            cache: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_maps_to_beta() {
        let mut gn = GroupNorm::<f64>::new(4, 2).unwrap();
        gn.beta = Tensor::new(&[4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        gn.gamma = Tensor::full(&[4], 1.7);
        let x = Tensor::from_fn(&[2, 4, 3, 3], |i| if i < 36 { 4.0 } else { -2.5 });
        let y = gn.forward(&x, NormMode::Eval).unwrap();
        for sample in 0..2 {
            for ch in 0..4 {
                for k in 0..9 {
                    assert_eq!(y.data()[(sample * 4 + ch) * 9 + k], gn.beta.data()[ch]);
                }
            }
        }
    }

    #[test]
    fn layer_norm_is_group_norm_with_one_group() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 2, 2], |i| ((i * 37) % 11) as f64 * 0.3 - 1.0);
        let mut ln = GroupNorm::<f64>::layer_norm(4);
        let mut gn = GroupNorm::<f64>::new(4, 1).unwrap();
        let gamma = Tensor::new(&[4], vec![0.5, 1.5, -1.0, 2.0]).unwrap();
        let beta = Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        ln.gamma = gamma.clone();
        ln.beta = beta.clone();
        gn.gamma = gamma;
        gn.beta = beta;
        assert_eq!(
            ln.forward(&x, NormMode::Eval).unwrap(),
            gn.forward(&x, NormMode::Eval).unwrap()
        );
    }

    #[test]
    fn indivisible_channels_are_rejected() {
        assert!(matches!(
            GroupNorm::<f32>::new(3, 2),
            Err(crate::Error::Config(_))
        ));
    }
}
