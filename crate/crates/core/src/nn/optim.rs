use alloc::vec::Vec;

use super::model::Model;
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Classical momentum SGD: `v ← m·v + g`, `p ← p − η·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

/// Velocities, one per learnable tensor of the model (hybrid factors included).
#[derive(Debug, Clone, Default)]
pub struct OptimState<T: Scalar = f32> {
    velocities: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new() -> Self {
        Self {
            velocities: Vec::new(),
        }
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocities
    }
}

/// Updates one tensor in place.
pub fn sgd_update<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    sgd: Sgd,
) -> Result<()> {
    param.check_same_shape(grad)?;
    param.check_same_shape(velocity)?;
    let (lr, m) = (T::from_f64(sgd.lr), T::from_f64(sgd.momentum));
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = m * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

impl Sgd {
    /// Applies the gradients stored in the model's layers.
    pub fn step<T: Scalar>(&self, model: &mut Model<T>, state: &mut OptimState<T>) -> Result<()> {
        let mut slots = Vec::new();
        for (_, layer) in model.layers_mut() {
            slots.extend(layer.params_mut());
        }
        if state.velocities.is_empty() {
            state.velocities = slots
                .iter()
                .map(|s| Tensor::zeros(s.value.shape()))
                .collect();
        }
        if state.velocities.len() != slots.len() {
            bail!(
                Shape,
                "optimizer tracks {} tensors, model has {}",
                state.velocities.len(),
                slots.len()
            );
        }
        for (slot, v) in slots.into_iter().zip(state.velocities.iter_mut()) {
            sgd_update(slot.value, slot.grad, v, *self)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn vanilla_step() {
        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        sgd_update(
            &mut p,
            &scalar(2.0),
            &mut v,
            Sgd {
                lr: 0.1,
                momentum: 0.0,
            },
        )
        .unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_step_recurrence() {
        // v1 = 1, p1 = -1; v2 = 0.9 + 1 = 1.9, p2 = -2.9
        let (mut p, mut v) = (scalar(0.0), scalar(0.0));
        let sgd = Sgd {
            lr: 1.0,
            momentum: 0.9,
        };
        sgd_update(&mut p, &scalar(1.0), &mut v, sgd).unwrap();
        assert_eq!(p.data()[0], -1.0);
        sgd_update(&mut p, &scalar(1.0), &mut v, sgd).unwrap();
        assert!((p.data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (mut p, mut v) = (scalar(3.25), scalar(0.5));
        sgd_update(
            &mut p,
            &scalar(7.0),
            &mut v,
            Sgd {
                lr: 0.0,
                momentum: 0.9,
            },
        )
        .unwrap();
        assert_eq!(p.data()[0], 3.25);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut v = Tensor::<f64>::zeros(&[2]);
        assert!(sgd_update(
            &mut p,
            &scalar(1.0),
            &mut v,
            Sgd {
                lr: 0.1,
                momentum: 0.0
            }
        )
        .is_err());
    }
}
