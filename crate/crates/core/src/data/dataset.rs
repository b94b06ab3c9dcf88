use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Images `(N, C, H, W)` or features `(N, F)` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            bail!(Data, "{} images but {} labels", n, labels.len());
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            bail!(Data, "label {} out of range for {} classes", bad, classes);
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample (everything after the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }

    /// Concatenates datasets along the batch axis.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let Some(first) = parts.first() else {
            bail!(Data, "nothing to concatenate");
        };
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.sample_shape() != first.sample_shape() || p.classes != first.classes {
                bail!(Shape, "datasets disagree on sample shape or class count");
            }
            data.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
        }
        let mut shape = first.images.shape().to_vec();
        shape[0] = labels.len();
        Self::new(Tensor::new(&shape, data)?, labels, first.classes)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        label_histogram(&self.labels, self.classes)
    }
}

pub fn label_histogram(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for &l in labels {
        h[l] += 1;
    }
    h
}
