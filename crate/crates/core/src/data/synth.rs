//! Seeded synthetic classification data.
//!
//! Flat data: class means `separation·u_c` for random unit vectors `u_c`, plus
//! isotropic unit noise. Image data: every class owns a smooth template per
//! channel (a random 4×4 grid upsampled bilinearly, scaled to unit RMS); a
//! sample is the template circularly shifted by up to one pixel, scaled by
//! `separation`, plus unit pixel noise. With `tint > 0` every class also gets a
//! constant offset per channel, drawn `N(0, tint²)` before scaling, like the
//! colour cast of a photo class. With `contrast > 0` every sample of a class,
//! noise included, is multiplied by the class gain `exp(contrast·z)`,
//! `z ~ N(0, 1)`, like a class shot under its own exposure. Templates and
//! gains depend only on the seed, so train and test splits share them.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::Dataset;
use crate::error::{bail, Result};
use crate::rng::{stream_rng, Rng, Stream};
use crate::tensor::Tensor;

const GRID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    Flat {
        dims: usize,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
        tint: f64,
        contrast: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub kind: SynthKind,
    pub separation: f64,
    pub seed: u64,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Per class: the template and the gain of its samples.
fn templates(spec: &SynthSpec) -> Vec<(Vec<f64>, f64)> {
    let mut rng = stream_rng(spec.seed, Stream::Data, &[u64::MAX]);
    let mut tints = stream_rng(spec.seed, Stream::Data, &[u64::MAX - 1]);
    (0..spec.classes)
        .map(|_| match spec.kind {
            SynthKind::Flat { dims } => {
                let v: Vec<f64> = (0..dims).map(|_| normal(&mut rng)).collect();
                let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
                (v.into_iter().map(|x| x / norm).collect(), 1.0)
            }
            SynthKind::Image {
                channels,
                height,
                width,
                tint,
                contrast,
            } => {
                let mut t = Vec::with_capacity(channels * height * width);
                for _ in 0..channels {
                    let grid: Vec<f64> = (0..GRID * GRID).map(|_| normal(&mut rng)).collect();
                    for y in 0..height {
                        for x in 0..width {
                            t.push(bilinear(&grid, y, x, height, width));
                        }
                    }
                }
                let rms =
                    libm::sqrt(t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).max(1e-12);
                let plane = height * width;
                let gain = if contrast > 0.0 {
                    libm::exp(contrast * normal(&mut tints))
                } else {
                    1.0
                };
                let mut t: Vec<f64> = t.into_iter().map(|v| v / rms).collect();
                if tint > 0.0 {
                    for ch in t.chunks_mut(plane) {
                        let offset = tint * normal(&mut tints);
                        ch.iter_mut().for_each(|v| *v += offset);
                    }
                }
                (t, gain)
            }
        })
        .collect()
}

fn bilinear(grid: &[f64], y: usize, x: usize, h: usize, w: usize) -> f64 {
    let fy = (y as f64 + 0.5) / h as f64 * GRID as f64 - 0.5;
    let fx = (x as f64 + 0.5) / w as f64 * GRID as f64 - 0.5;
    let clamp = |v: f64| v.clamp(0.0, (GRID - 1) as f64);
    let (fy, fx) = (clamp(fy), clamp(fx));
    let (y0, x0) = (fy as usize, fx as usize);
    let (y1, x1) = ((y0 + 1).min(GRID - 1), (x0 + 1).min(GRID - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let g = |r: usize, c: usize| grid[r * GRID + c];
    (1.0 - ty) * ((1.0 - tx) * g(y0, x0) + tx * g(y0, x1))
        + ty * ((1.0 - tx) * g(y1, x0) + tx * g(y1, x1))
}

fn generate(spec: &SynthSpec, n: usize, stream: Stream) -> Result<Dataset> {
    if !(spec.separation >= 0.0) || spec.classes == 0 {
        bail!(
            Config,
            "synthetic data needs classes > 0 and separation ≥ 0"
        );
    }
    if let SynthKind::Image { tint, contrast, .. } = spec.kind {
        if !(tint >= 0.0 && contrast >= 0.0 && tint.is_finite() && contrast.is_finite()) {
            bail!(Config, "synthetic tint and contrast must be finite and ≥ 0");
        }
    }
    let temps = templates(spec);
    let mut rng = stream_rng(spec.seed, stream, &[]);
    let labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    let (shape, data) = match spec.kind {
        SynthKind::Flat { dims } => {
            let mut data = Vec::with_capacity(n * dims);
            for &l in &labels {
                for &m in &temps[l].0 {
                    data.push((spec.separation * m + normal(&mut rng)) as f32);
                }
            }
            (alloc::vec![n, dims], data)
        }
        SynthKind::Image {
            channels,
            height,
            width,
            ..
        } => {
            let mut data = Vec::with_capacity(n * channels * height * width);
            for &l in &labels {
                let dy = rng.random_range(0..3usize);
                let dx = rng.random_range(0..3usize);
                let (t, gain) = (&temps[l].0, temps[l].1);
                for c in 0..channels {
                    for y in 0..height {
                        for x in 0..width {
                            let sy = (y + dy + height - 1) % height;
                            let sx = (x + dx + width - 1) % width;
                            let v = t[(c * height + sy) * width + sx];
                            data.push((gain * (spec.separation * v + normal(&mut rng))) as f32);
                        }
                    }
                }
            }
            (alloc::vec![n, channels, height, width], data)
        }
    };
    Dataset::new(Tensor::new(&shape, data)?, labels, spec.classes)
}

/// `n` samples with balanced labels (`label = i mod classes`).
pub fn synth_classification(spec: &SynthSpec, n: usize) -> Result<Dataset> {
    generate(spec, n, Stream::Data)
}

/// Train and test sets drawn from the same class templates with independent noise.
pub fn synth_split(spec: &SynthSpec, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
    Ok((
        generate(spec, n_train, Stream::Data)?,
        generate(spec, n_test, Stream::TestData)?,
    ))
}
