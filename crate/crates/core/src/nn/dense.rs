use alloc::vec;

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{bail, Error, Result};
use crate::norm::NormMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fully connected layer, `y = x·Wᵀ + b` on `(N, in)` input.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar = f32> {
    /// `(out, in)`
    pub weight: Tensor<T>,
    /// `(out)`
    pub bias: Tensor<T>,
    pub weight_grad: Tensor<T>,
    pub bias_grad: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[out, _] = weight.shape() else {
            bail!(Config, "dense weight must be 2-D, got {:?}", weight.shape());
        };
        if bias.shape() != [out] {
            bail!(
                Config,
                "dense bias {:?} does not match {} outputs",
                bias.shape(),
                out
            );
        }
        Ok(Self {
            weight_grad: Tensor::zeros(weight.shape()),
            bias_grad: Tensor::zeros(bias.shape()),
            weight,
            bias,
            input: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let &[n, f] = input.shape() else {
            bail!(Shape, "dense expects (N, F) input, got {:?}", input.shape());
        };
        if f != self.in_features() {
            bail!(
                Config,
                "dense expects {} features, got {}",
                self.in_features(),
                f
            );
        }
        let out = self.out_features();
        let mut y = vec![T::ZERO; n * out];
        for row in y.chunks_mut(out) {
            row.copy_from_slice(self.bias.data());
        }
        gemm_nt(input.data(), self.weight.data(), &mut y, n, f, out);
        self.input = match mode {
            NormMode::Train => Some(input.clone()),
            _ => None,
        };
        Tensor::new(&[n, out], y)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("dense backward without a Train-mode forward".into()))?;
        let (n, f, out) = (x.shape()[0], self.in_features(), self.out_features());
        if upstream.shape() != [n, out] {
            bail!(
                Shape,
                "dense upstream {:?} vs expected {:?}",
                upstream.shape(),
                [n, out]
            );
        }
        let dy = upstream.data();
        let mut dx = vec![T::ZERO; n * f];
        gemm_nn(dy, self.weight.data(), &mut dx, n, out, f);
        let mut dw = vec![T::ZERO; out * f];
        gemm_tn(dy, x.data(), &mut dw, out, n, f);
        let mut db = vec![T::ZERO; out];
        for row in dy.chunks(out) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        self.weight_grad = Tensor::new(&[out, f], dw)?;
        self.bias_grad = Tensor::new(&[out], db)?;
        Tensor::new(&[n, f], dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
    }

    pub fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            weight_grad: self.weight_grad.cast(),
            bias_grad: self.bias_grad.cast(),
            input: None,
        }
    }
}
