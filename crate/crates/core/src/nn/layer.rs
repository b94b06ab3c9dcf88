use alloc::vec;
use alloc::vec::Vec;

use super::activation::{Flatten, MaxPool2d, Relu};
use super::conv::Conv2d;
use super::dense::Dense;
use crate::error::Result;
use crate::norm::{NormLayer, NormMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lifecycle of a learnable tensor in federated training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Part of ω: downloaded, trained and aggregated.
    Shared,
    /// Trained on the client and never communicated (the hybrid factor α).
    ClientLocal,
}

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar = f32> {
    Conv(Conv2d<T>),
    Dense(Dense<T>),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Flatten(Flatten),
    Norm(NormLayer<T>),
}

pub struct ParamSlot<'a, T: Scalar> {
    pub suffix: &'static str,
    pub role: ParamRole,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(input, mode),
            Layer::Dense(l) => l.forward(input, mode),
            Layer::Relu(l) => l.forward(input, mode),
            Layer::MaxPool(l) => l.forward(input, mode),
            Layer::Flatten(l) => l.forward(input, mode),
            Layer::Norm(l) => l.forward(input, mode),
        }
    }

    /// Returns the gradient with respect to the layer input and stores the
    /// parameter gradients inside the layer.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(upstream),
            Layer::Dense(l) => l.backward(upstream),
            Layer::Relu(l) => l.backward(upstream),
            Layer::MaxPool(l) => l.backward(upstream),
            Layer::Flatten(l) => l.backward(upstream),
            Layer::Norm(l) => l.backward(upstream),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.clear_cache(),
            Layer::Dense(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::MaxPool(l) => l.clear_cache(),
            Layer::Flatten(l) => l.clear_cache(),
            Layer::Norm(l) => l.clear_cache(),
        }
    }

    /// Learnable tensors with their gradients, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_, T>> {
        use crate::norm::NormLayer as N;
        let shared = |suffix, value, grad| ParamSlot {
            suffix,
            role: ParamRole::Shared,
            value,
            grad,
        };
        match self {
            Layer::Conv(l) => vec![
                shared("weight", &mut l.weight, &l.weight_grad),
                shared("bias", &mut l.bias, &l.bias_grad),
            ],
            Layer::Dense(l) => vec![
                shared("weight", &mut l.weight, &l.weight_grad),
                shared("bias", &mut l.bias, &l.bias_grad),
            ],
            Layer::Norm(N::Batch(l)) => vec![
                shared("gamma", &mut l.gamma, &l.gamma_grad),
                shared("beta", &mut l.beta, &l.beta_grad),
            ],
            Layer::Norm(N::Group(l)) => vec![
                shared("gamma", &mut l.gamma, &l.gamma_grad),
                shared("beta", &mut l.beta, &l.beta_grad),
            ],
            Layer::Norm(N::Hybrid(l)) => vec![
                shared("gamma", &mut l.gamma, &l.gamma_grad),
                shared("beta", &mut l.beta, &l.beta_grad),
                ParamSlot {
                    suffix: "alpha",
                    role: ParamRole::ClientLocal,
                    value: &mut l.alpha,
                    grad: &l.alpha_grad,
                },
            ],
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Flatten(_) => Vec::new(),
        }
    }

    /// Learnable tensors by shared reference: `(suffix, role, value, grad)`.
    pub fn params(&self) -> Vec<(&'static str, ParamRole, &Tensor<T>, &Tensor<T>)> {
        use crate::norm::NormLayer as N;
        match self {
            Layer::Conv(l) => vec![
                ("weight", ParamRole::Shared, &l.weight, &l.weight_grad),
                ("bias", ParamRole::Shared, &l.bias, &l.bias_grad),
            ],
            Layer::Dense(l) => vec![
                ("weight", ParamRole::Shared, &l.weight, &l.weight_grad),
                ("bias", ParamRole::Shared, &l.bias, &l.bias_grad),
            ],
            Layer::Norm(N::Batch(l)) => vec![
                ("gamma", ParamRole::Shared, &l.gamma, &l.gamma_grad),
                ("beta", ParamRole::Shared, &l.beta, &l.beta_grad),
            ],
            Layer::Norm(N::Group(l)) => vec![
                ("gamma", ParamRole::Shared, &l.gamma, &l.gamma_grad),
                ("beta", ParamRole::Shared, &l.beta, &l.beta_grad),
            ],
            Layer::Norm(N::Hybrid(l)) => vec![
                ("gamma", ParamRole::Shared, &l.gamma, &l.gamma_grad),
                ("beta", ParamRole::Shared, &l.beta, &l.beta_grad),
                ("alpha", ParamRole::ClientLocal, &l.alpha, &l.alpha_grad),
            ],
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Flatten(_) => Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(l) => Layer::Conv(l.cast()),
            Layer::Dense(l) => Layer::Dense(l.cast()),
            Layer::Relu(_) => Layer::Relu(Relu::new()),
            Layer::MaxPool(l) => {
                Layer::MaxPool(MaxPool2d::new(l.size, l.stride).expect("validated"))
            }
            Layer::Flatten(_) => Layer::Flatten(Flatten::new()),
            Layer::Norm(l) => Layer::Norm(l.cast()),
        }
    }
}
