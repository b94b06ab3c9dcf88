use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch.
///
/// Returns the loss (accumulated at 64-bit) and `∂loss/∂logits = (softmax − onehot)/N`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let &[n, c] = logits.shape() else {
        bail!(Shape, "logits must be (N, C), got {:?}", logits.shape());
    };
    if labels.len() != n {
        bail!(Shape, "{} labels for {} logit rows", labels.len(), n);
    }
    if n == 0 {
        bail!(Data, "empty batch");
    }
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks(c).zip(labels) {
        if label >= c {
            bail!(Data, "label {} out of range for {} classes", label, c);
        }
        let max = row
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| libm::exp(v.to_f64() - max)).collect();
        let z: f64 = exps.iter().sum();
        loss += libm::log(z) - (row[label].to_f64() - max);
        for (k, e) in exps.iter().enumerate() {
            let p = e / z;
            let target = if k == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64((p - target) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::new(&[n, c], grad)?))
}

/// Index of the largest logit per row (first on ties).
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let &[_, c] = logits.shape() else {
        bail!(Shape, "logits must be (N, C), got {:?}", logits.shape());
    };
    Ok(logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}
