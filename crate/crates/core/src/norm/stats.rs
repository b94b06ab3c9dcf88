use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel sufficient statistics `(count, Σx, Σx²)`.
///
/// `count` is the number of elements per channel (`N·H·W` for a conv
/// activation). Merging is plain addition of the three fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub count: u64,
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
}

impl ChannelStats {
    pub fn empty(channels: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; channels],
            sumsq: vec![0.0; channels],
        }
    }

    /// Batch statistics over the N and spatial axes of an `(N, C, ...)` tensor.
    pub fn from_tensor<T: Scalar>(input: &Tensor<T>) -> Result<Self> {
        let (n, c, s) = input.ncs()?;
        if n * s == 0 {
            bail!(Data, "cannot compute statistics of an empty batch");
        }
        let mut stats = Self::empty(c);
        stats.accumulate(input)?;
        Ok(stats)
    }

    /// Adds every element of `input` to the running sums.
    pub fn accumulate<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<()> {
        let (n, c, s) = input.ncs()?;
        if c != self.channels() {
            bail!(
                Shape,
                "statistics hold {} channels, input has {}",
                self.channels(),
                c
            );
        }
        let x = input.data();
        for sample in 0..n {
            for ch in 0..c {
                let plane = &x[(sample * c + ch) * s..(sample * c + ch + 1) * s];
                let (mut a, mut b) = (0.0f64, 0.0f64);
                for &v in plane {
                    let v = v.to_f64();
                    a += v;
                    b += v * v;
                }
                self.sum[ch] += a;
                self.sumsq[ch] += b;
            }
        }
        self.count += (n * s) as u64;
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.sum.len()
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &Self) -> Result<()> {
        if other.channels() != self.channels() {
            bail!(
                Shape,
                "cannot merge {} channels with {}",
                self.channels(),
                other.channels()
            );
        }
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Population variance (denominator = count), clamped at zero.
    pub fn population_variance(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sumsq)
            .map(|(s, q)| {
                let m = s / n;
                (q / n - m * m).max(0.0)
            })
            .collect()
    }

    /// Sample variance (denominator = count − 1), clamped at zero.
    pub fn sample_variance(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            bail!(
                DegenerateVariance,
                "sample variance needs at least 2 elements, have {}",
                self.count
            );
        }
        let n = self.count as f64;
        Ok(self
            .population_variance()
            .into_iter()
            .map(|v| v * n / (n - 1.0))
            .collect())
    }
}

/// Per-channel `(mean, variance)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Moments {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            bail!(Shape, "{} means vs {} variances", mean.len(), var.len());
        }
        if var.iter().any(|v| !(*v >= 0.0)) {
            bail!(Data, "global variances must be non-negative");
        }
        Ok(Self { mean, var })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Standard normal statistics (μ = 0, σ² = 1).
    pub fn unit(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Global normalization statistics `(μ_g, σ²_g)` held by the server and frozen
/// inside each client's normalization layers.
pub type GlobalStats = Moments;

/// Per-channel mean and population variance of an `(N, C, ...)` tensor,
/// computed in two passes at 64-bit.
pub(crate) fn channel_moments<T: Scalar>(input: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (n, c, s) = input.ncs()?;
    let m = n * s;
    if m == 0 {
        bail!(Data, "cannot compute statistics of an empty batch");
    }
    let x = input.data();
    let mut mean = vec![0.0f64; c];
    for sample in 0..n {
        for ch in 0..c {
            for &v in &x[(sample * c + ch) * s..(sample * c + ch + 1) * s] {
                mean[ch] += v.to_f64();
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= m as f64;
    }
    let mut var = vec![0.0f64; c];
    for sample in 0..n {
        for ch in 0..c {
            for &v in &x[(sample * c + ch) * s..(sample * c + ch + 1) * s] {
                let d = v.to_f64() - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    for v in var.iter_mut() {
        *v /= m as f64;
    }
    Ok((mean, var, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_input_has_zero_variance() {
        let x = Tensor::<f32>::full(&[3, 2, 2, 2], 1.5);
        let s = ChannelStats::from_tensor(&x).unwrap();
        assert_eq!(s.mean(), vec![1.5, 1.5]);
        assert_eq!(s.population_variance(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_values() {
        // one channel, {0, 2, 4, 6}: mean 3, Σ(x−3)²/4 = 20/4
        let x = Tensor::new(&[4, 1], vec![0.0f32, 2.0, 4.0, 6.0]).unwrap();
        let s = ChannelStats::from_tensor(&x).unwrap();
        assert_eq!(s.mean(), vec![3.0]);
        assert_eq!(s.population_variance(), vec![5.0]);
        let (m, v, count) = channel_moments(&x).unwrap();
        assert_eq!((m, v, count), (vec![3.0], vec![5.0], 4));
    }

    #[test]
    fn empty_batch_is_data_error() {
        let x = Tensor::<f32>::zeros(&[0, 3, 2, 2]);
        assert!(matches!(
            ChannelStats::from_tensor(&x),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn half_merge_is_exact_on_integer_data() {
        let x = Tensor::<f32>::from_fn(&[6, 2, 3, 3], |i| ((i * 7919) % 23) as f32 - 11.0);
        let whole = ChannelStats::from_tensor(&x).unwrap();
        let a = ChannelStats::from_tensor(&x.select_rows(&[0, 1, 2]).unwrap()).unwrap();
        let b = ChannelStats::from_tensor(&x.select_rows(&[3, 4, 5]).unwrap()).unwrap();
        assert_eq!(a.merge(&b).unwrap(), whole);
        assert_eq!(b.merge(&a).unwrap(), whole);
    }

    proptest! {
        #[test]
        fn merge_of_any_partition_matches_whole(
            values in prop::collection::vec(-1000i32..1000, 2..60),
            cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..5),
        ) {
            // dyadic values keep every partial sum exact
            let n = values.len();
            let x = Tensor::new(&[n, 1], values.iter().map(|&v| v as f32 / 8.0).collect()).unwrap();
            let whole = ChannelStats::from_tensor(&x).unwrap();
            let mut bounds: Vec<usize> = cuts.iter().map(|c| c.index(n)).collect();
            bounds.push(0);
            bounds.push(n);
            bounds.sort_unstable();
            bounds.dedup();
            let mut merged = ChannelStats::empty(1);
            for w in bounds.windows(2) {
                let idx: Vec<usize> = (w[0]..w[1]).collect();
                merged.merge_in(&ChannelStats::from_tensor(&x.select_rows(&idx).unwrap()).unwrap()).unwrap();
            }
            prop_assert_eq!(merged, whole);
        }

        #[test]
        fn merge_is_associative_and_commutative(
            a in prop::collection::vec(-50i32..50, 1..10),
            b in prop::collection::vec(-50i32..50, 1..10),
            c in prop::collection::vec(-50i32..50, 1..10),
        ) {
            let mk = |v: &Vec<i32>| {
                let t = Tensor::new(&[v.len(), 1], v.iter().map(|&x| x as f32).collect()).unwrap();
                ChannelStats::from_tensor(&t).unwrap()
            };
            let (a, b, c) = (mk(&a), mk(&b), mk(&c));
            let left = a.merge(&b).unwrap().merge(&c).unwrap();
            let right = a.merge(&b.merge(&c).unwrap()).unwrap();
            prop_assert_eq!(&left, &right);
            prop_assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
        }
    }
}
