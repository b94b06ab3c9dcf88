//! Two 2-D Gaussian clusters standing in for two clients' activations, and the
//! four views of them used to compare local, global and hybrid normalization.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use super::dataset::Dataset;
use crate::error::{bail, Result};
use crate::norm::{BatchNorm, BnVariant, ChannelStats, HybridBatchNorm, Moments, NormMode};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub type Point = [f64; 2];
pub type Cov2 = [[f64; 2]; 2];

/// Lower Cholesky factor of a symmetric positive semi-definite 2×2 matrix.
fn cholesky2(c: &Cov2) -> Result<[[f64; 2]; 2]> {
    let (a, b, b2, d) = (c[0][0], c[0][1], c[1][0], c[1][1]);
    if (b - b2).abs() > 1e-12 || a < 0.0 || d < 0.0 || a * d - b * b < -1e-12 {
        bail!(
            Config,
            "covariance {:?} is not symmetric positive semi-definite",
            c
        );
    }
    let l11 = libm::sqrt(a);
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = libm::sqrt((d - l21 * l21).max(0.0));
    Ok([[l11, 0.0], [l21, l22]])
}

/// Two clusters of `n` points each. Cluster `k` carries label `k`.
pub fn make_two_cluster_toy(
    n: usize,
    means: [Point; 2],
    covs: [Cov2; 2],
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let mut out = Vec::with_capacity(2);
    for k in 0..2 {
        let l = cholesky2(&covs[k])?;
        let mut rng = stream_rng(seed, Stream::Data, &[k as u64]);
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            data.push((means[k][0] + l[0][0] * z0) as f32);
            data.push((means[k][1] + l[1][0] * z0 + l[1][1] * z1) as f32);
        }
        out.push(Dataset::new(
            Tensor::new(&[n, 2], data)?,
            alloc::vec![k; n],
            2,
        )?);
    }
    let b = out.pop().expect("two clusters");
    let a = out.pop().expect("two clusters");
    Ok((a, b))
}

/// Point clouds of the two clusters under four treatments.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPanels {
    pub raw: [Vec<Point>; 2],
    /// Each cluster normalized with its own statistics.
    pub local: [Vec<Point>; 2],
    /// Both clusters normalized with the pooled statistics.
    pub global: [Vec<Point>; 2],
    /// Hybrid normalization with `α = 0` against the pooled statistics.
    pub hybrid: [Vec<Point>; 2],
}

fn points(t: &Tensor<f64>) -> Vec<Point> {
    t.data().chunks(2).map(|p| [p[0], p[1]]).collect()
}

pub fn cluster_mean(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let sx: f64 = points.iter().map(|p| p[0]).sum();
    let sy: f64 = points.iter().map(|p| p[1]).sum();
    [sx / n, sy / n]
}

/// Euclidean distance between the two cluster means of a panel.
pub fn mean_distance(panel: &[Vec<Point>; 2]) -> f64 {
    let (a, b) = (cluster_mean(&panel[0]), cluster_mean(&panel[1]));
    libm::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]))
}

impl ClusterPanels {
    pub fn panels(&self) -> [(&'static str, &[Vec<Point>; 2]); 4] {
        [
            ("raw", &self.raw),
            ("local", &self.local),
            ("global", &self.global),
            ("hybrid", &self.hybrid),
        ]
    }
}

pub fn cluster_panels(a: &Dataset, b: &Dataset) -> Result<ClusterPanels> {
    let clusters = [a.images.cast::<f64>(), b.images.cast::<f64>()];
    for c in &clusters {
        if c.shape().len() != 2 || c.shape()[1] != 2 || c.shape()[0] < 2 {
            bail!(Data, "toy clusters must be (n ≥ 2, 2) point sets");
        }
    }
    let mut pooled = ChannelStats::from_tensor(&clusters[0])?;
    pooled.merge_in(&ChannelStats::from_tensor(&clusters[1])?)?;
    let global = Moments::new(pooled.mean(), pooled.sample_variance()?)?;

    let mut local = Vec::new();
    let mut glob = Vec::new();
    let mut hybrid = Vec::new();
    for c in &clusters {
        let mut bn = BatchNorm::<f64>::new(2, BnVariant::Standard);
        local.push(points(&bn.forward(c, NormMode::Train)?));
        let mut hbn = HybridBatchNorm::<f64>::new(2);
        hbn.set_global(global.clone())?;
        glob.push(points(&hbn.forward(c, NormMode::Eval)?));
        hybrid.push(points(&hbn.forward(c, NormMode::Train)?));
    }
    let pair = |mut v: Vec<Vec<Point>>| -> [Vec<Point>; 2] {
        let second = v.pop().expect("two clusters");
        let first = v.pop().expect("two clusters");
        [first, second]
    };
    Ok(ClusterPanels {
        raw: [points(&clusters[0]), points(&clusters[1])],
        local: pair(local),
        global: pair(glob),
        hybrid: pair(hybrid),
    })
}
