use alloc::vec;
use alloc::vec::Vec;

use super::conv::conv_out_extent;
use crate::error::{bail, Error, Result};
use crate::norm::NormMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut out = input.clone();
        for v in out.data_mut() {
            if !(*v > T::ZERO) {
                *v = T::ZERO;
            }
        }
        self.mask = match mode {
            NormMode::Train => Some((
                input.shape().to_vec(),
                input.data().iter().map(|&v| v > T::ZERO).collect(),
            )),
            _ => None,
        };
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("relu backward without a Train-mode forward".into()))?;
        if upstream.shape() != shape.as_slice() {
            bail!(
                Shape,
                "relu upstream {:?} vs cached {:?}",
                upstream.shape(),
                shape
            );
        }
        let mut dx = upstream.clone();
        for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
            if !m {
                *g = T::ZERO;
            }
        }
        Ok(dx)
    }

    /// Which inputs of the last Train-mode forward were positive.
    pub fn active(&self) -> Option<&[bool]> {
        self.mask.as_ref().map(|(_, m)| m.as_slice())
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Max pooling over square windows. Ties route the gradient to the first
/// (lowest-index) maximum.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub size: usize,
    pub stride: usize,
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            bail!(Config, "pool size and stride must be positive");
        }
        Ok(Self {
            size,
            stride,
            cache: None,
        })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        let &[n, c, h, w] = input else {
            bail!(Shape, "maxpool2d expects NCHW input, got {:?}", input);
        };
        match (
            conv_out_extent(h, self.size, self.stride, 0),
            conv_out_extent(w, self.size, self.stride, 0),
        ) {
            (Some(ho), Some(wo)) => Ok([n, c, ho, wo]),
            _ => bail!(
                Config,
                "input {}x{} smaller than pool window {}",
                h,
                w,
                self.size
            ),
        }
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let [n, c, ho, wo] = self.output_shape(input.shape())?;
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let x = input.data();
        let mut out = vec![T::ZERO; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_idx = base + oy * self.stride * w + ox * self.stride;
                    let mut best = x[best_idx];
                    for ky in 0..self.size {
                        for kx in 0..self.size {
                            let idx = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * ho + oy) * wo + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        self.cache = match mode {
            NormMode::Train => Some(([n, c, h, w], argmax)),
            _ => None,
        };
        Tensor::new(&[n, c, ho, wo], out)
    }

    pub fn backward<T: Scalar>(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self.cache.as_ref().ok_or_else(|| {
            Error::State("maxpool2d backward without a Train-mode forward".into())
        })?;
        if upstream.len() != argmax.len() {
            bail!(
                Shape,
                "maxpool2d upstream has {} elements, expected {}",
                upstream.len(),
                argmax.len()
            );
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&g, &i) in upstream.data().iter().zip(argmax) {
            d[i] += g;
        }
        Ok(dx)
    }

    /// Input index routed to each output by the last Train-mode forward.
    pub fn argmax(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|(_, a)| a.as_slice())
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Collapses `(N, C, H, W)` into `(N, C·H·W)`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let Some((&n, rest)) = input.shape().split_first() else {
            bail!(Shape, "flatten expects a batched tensor");
        };
        let f = rest.iter().product::<usize>();
        if let NormMode::Train = mode {
            self.input_shape = Some(input.shape().to_vec());
        }
        input.clone().reshape(&[n, f])
    }

    pub fn backward<T: Scalar>(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("flatten backward without a Train-mode forward".into()))?;
        upstream.clone().reshape(shape)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}
