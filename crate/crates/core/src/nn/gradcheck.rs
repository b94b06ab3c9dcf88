//! Central finite-difference gradient checks at 64-bit.
//!
//! Every perturbed evaluation runs on a fresh clone of the unperturbed layer or
//! model, so layers that update buffers during a training forward (BN, FBN) are
//! evaluated as pure functions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::layer::Layer;
use super::loss::softmax_cross_entropy;
use super::model::Model;
use crate::error::{bail, Result};
use crate::norm::NormMode;
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so gradients that are zero up to
/// roundoff do not blow the ratio up. Below it the error is absolute.
pub const REL_FLOOR: f64 = 1e-5;

/// Step halvings tried when a perturbation flips a ReLU or pooling decision.
pub const MAX_HALVINGS: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `block1.norm.alpha[3]`.
    pub worst: String,
    pub checked: usize,
    /// Entries whose step had to shrink to stay on one linear piece.
    pub shrunk: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
            shrunk: 0,
        }
    }

    fn record(&mut self, location: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.checked == 1 || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = location();
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Indices checked in a tensor of `len` entries: all of them, or `limit`
/// evenly spaced ones.
fn sample_indices(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
        _ => (0..len).collect(),
    }
}

fn central_difference(step: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}

/// Checks a single layer against the probe loss `Σ u·y` for a fixed upstream `u`.
pub fn check_layer(
    layer: &Layer<f64>,
    input: &Tensor<f64>,
    upstream: &Tensor<f64>,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        bail!(
            InvalidArgument,
            "finite-difference step must be positive, got {}",
            step
        );
    }
    let probe = |l: &Layer<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut l = l.clone();
        let y = l.forward(x, NormMode::Train)?;
        upstream.check_same_shape(&y)?;
        Ok(y.data()
            .iter()
            .zip(upstream.data())
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut analytic = layer.clone();
    analytic.forward(input, NormMode::Train)?;
    let dx = analytic.backward(upstream)?;

    let mut report = GradCheckReport::new();
    for i in 0..input.len() {
        let numeric = central_difference(step, |h| {
            let mut x = input.clone();
            x.data_mut()[i] += h;
            probe(layer, &x)
        })?;
        report.record(|| format!("input[{i}]"), dx.data()[i], numeric);
    }

    let grads: Vec<(&'static str, Tensor<f64>)> = analytic
        .params()
        .into_iter()
        .map(|(s, _, _, g)| (s, g.clone()))
        .collect();
    for (p, (suffix, grad)) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let numeric = central_difference(step, |h| {
                let mut l = layer.clone();
                let mut slots = l.params_mut();
                slots[p].value.data_mut()[i] += h;
                drop(slots);
                probe(&l, input)
            })?;
            report.record(|| format!("{suffix}[{i}]"), grad.data()[i], numeric);
        }
    }
    Ok(report)
}

/// ReLU signs and pooling argmaxes of the last Train-mode forward.
fn routing(model: &Model<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    for (_, layer) in model.layers() {
        match layer {
            Layer::Relu(r) => out.extend(r.active().unwrap_or(&[]).iter().map(|&a| a as usize)),
            Layer::MaxPool(p) => out.extend_from_slice(p.argmax().unwrap_or(&[])),
            _ => {}
        }
    }
    out
}

/// Checks every learnable tensor of `model` under mean softmax cross-entropy.
///
/// `per_tensor` caps the number of entries checked per tensor. A step that
/// changes any ReLU sign or pooling argmax crosses a kink, so it is halved
/// (up to [`MAX_HALVINGS`] times) until both perturbed passes route like the
/// unperturbed one.
pub fn finite_difference_check(
    model: &Model<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    step: f64,
    per_tensor: Option<usize>,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        bail!(
            InvalidArgument,
            "finite-difference step must be positive, got {}",
            step
        );
    }
    let loss_of = |m: &Model<f64>| -> Result<(f64, Vec<usize>)> {
        let mut m = m.clone();
        let logits = m.forward(input, NormMode::Train)?;
        Ok((softmax_cross_entropy(&logits, labels)?.0, routing(&m)))
    };

    let mut analytic = model.clone();
    let logits = analytic.forward(input, NormMode::Train)?;
    let base = routing(&analytic);
    let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
    analytic.backward(&dlogits)?;

    let mut report = GradCheckReport::new();
    for (li, (name, layer)) in analytic.layers().iter().enumerate() {
        for (pi, (suffix, _, _, grad)) in layer.params().into_iter().enumerate() {
            for i in sample_indices(grad.len(), per_tensor) {
                let eval = |h: f64| -> Result<(f64, bool)> {
                    let mut m = model.clone();
                    let mut slots = m.layers_mut()[li].1.params_mut();
                    slots[pi].value.data_mut()[i] += h;
                    drop(slots);
                    let (loss, r) = loss_of(&m)?;
                    Ok((loss, r == base))
                };
                let mut h = step;
                let mut halvings = 0;
                let numeric = loop {
                    let (plus, same_plus) = eval(h)?;
                    let (minus, same_minus) = eval(-h)?;
                    if (same_plus && same_minus) || halvings == MAX_HALVINGS {
                        break (plus - minus) / (2.0 * h);
                    }
                    h /= 2.0;
                    halvings += 1;
                };
                if halvings > 0 {
                    report.shrunk += 1;
                }
                report.record(|| format!("{name}.{suffix}[{i}]"), grad.data()[i], numeric);
            }
        }
    }
    Ok(report)
}
