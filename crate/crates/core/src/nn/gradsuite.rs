//! The standard finite-difference suite: every layer type on its own, then the
//! Simple-CNN end to end.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::conv::{Conv2d, ConvGeometry};
use super::gradcheck::{check_layer, finite_difference_check, GradCheckReport};
use super::init::kaiming_uniform;
use super::layer::Layer;
use super::model::{build_simple_cnn, SimpleCnnSpec};
use super::{Dense, MaxPool2d, Relu};
use crate::error::Result;
use crate::norm::{BatchNorm, BnVariant, Moments, NormKind, NormLayer, NormMode};
use crate::rng::{seeded, Rng};
use crate::tensor::Tensor;

pub const SUITE_BATCH: usize = 4;
pub const LAYER_STEP: f64 = 1e-5;
pub const NETWORK_STEP: f64 = 2e-5;
/// Entries checked per parameter tensor in the network checks.
pub const NETWORK_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn normal_tensor(shape: &[usize], rng: &mut Rng, scale: f64, shift: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        shift + scale * (u + v)
    })
}

/// Magnitudes in [0.2, 1.2] with random signs, so no entry sits near the kink.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.2..1.2);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A shuffled grid with spacing 0.05, so window maxima are unique by a wide margin.
fn distinct_values(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("shape matches")
}

fn randomize_affine(layer: &mut NormLayer<f64>, rng: &mut Rng) {
    let (gamma, beta) = match layer {
        NormLayer::Batch(b) => (&mut b.gamma, &mut b.beta),
        NormLayer::Group(g) => (&mut g.gamma, &mut g.beta),
        NormLayer::Hybrid(h) => (&mut h.gamma, &mut h.beta),
    };
    for g in gamma.data_mut() {
        *g = rng.random_range(0.5..1.5);
    }
    for b in beta.data_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
}

fn random_moments(channels: usize, rng: &mut Rng) -> Moments {
    let mean = (0..channels).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var = (0..channels).map(|_| rng.random_range(0.3..2.0)).collect();
    Moments::new(mean, var).expect("lengths match")
}

fn norm_layers(channels: usize, rng: &mut Rng) -> Result<Vec<(String, NormLayer<f64>)>> {
    let mut out = Vec::new();
    for kind in [NormKind::Bn, NormKind::Gn, NormKind::Ln, NormKind::Fbn] {
        out.push((
            String::from(kind.as_str()),
            NormLayer::new(kind, channels, 0)?,
        ));
    }
    // FixBN before and after its freeze round
    let mut early = BatchNorm::new(channels, BnVariant::Fixed { freeze_round: 5 });
    early.set_round(2);
    out.push(("fixbn.stage1".into(), NormLayer::Batch(early)));
    let mut late = BatchNorm::new(channels, BnVariant::Fixed { freeze_round: 5 });
    late.set_round(6);
    out.push(("fixbn.stage2".into(), NormLayer::Batch(late)));
    out.push(("hbn".into(), NormLayer::new(NormKind::Hbn, channels, 0)?));

    for (_, layer) in out.iter_mut() {
        randomize_affine(layer, rng);
        match layer {
            NormLayer::Batch(b) => b.running = random_moments(channels, rng),
            NormLayer::Hybrid(h) => {
                h.alpha = Tensor::from_fn(&[channels], |_| rng.random_range(-2.0..2.0));
                h.set_global(random_moments(channels, rng))?;
            }
            NormLayer::Group(_) => {}
        }
    }
    Ok(out)
}

/// Runs every layer check and the network checks for each normalization kind
/// on random batches of [`SUITE_BATCH`] samples.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = seeded(seed);
    let mut cases: Vec<(String, Layer<f64>, Tensor<f64>)> = Vec::new();
    let n = SUITE_BATCH;

    let geometry = ConvGeometry {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let conv = Conv2d::new(
        geometry,
        kaiming_uniform(&[3, 2, 3, 3], 18, &mut rng),
        normal_tensor(&[3], &mut rng, 0.1, 0.0),
    )?;
    cases.push((
        "conv".into(),
        Layer::Conv(conv),
        normal_tensor(&[n, 2, 5, 5], &mut rng, 0.5, 0.0),
    ));
    let strided = Conv2d::new(
        ConvGeometry {
            stride: 2,
            padding: 0,
            ..geometry
        },
        kaiming_uniform(&[3, 2, 3, 3], 18, &mut rng),
        normal_tensor(&[3], &mut rng, 0.1, 0.0),
    )?;
    cases.push((
        "conv.stride2".into(),
        Layer::Conv(strided),
        normal_tensor(&[n, 2, 7, 7], &mut rng, 0.5, 0.0),
    ));
    let dense = Dense::new(
        kaiming_uniform(&[5, 6], 6, &mut rng),
        normal_tensor(&[5], &mut rng, 0.1, 0.0),
    )?;
    cases.push((
        "dense".into(),
        Layer::Dense(dense),
        normal_tensor(&[n, 6], &mut rng, 0.5, 0.0),
    ));
    cases.push((
        "relu".into(),
        Layer::Relu(Relu::new()),
        away_from_zero(&[n, 3, 4, 4], &mut rng),
    ));
    cases.push((
        "maxpool".into(),
        Layer::MaxPool(MaxPool2d::new(2, 2)?),
        distinct_values(&[n, 3, 4, 4], &mut rng),
    ));
    for (name, layer) in norm_layers(4, &mut rng)? {
        let x = normal_tensor(&[n, 4, 3, 3], &mut rng, 0.6, 0.3);
        cases.push((name, Layer::Norm(layer), x));
    }

    let mut out = Vec::new();
    for (name, layer, x) in cases {
        let mut probe = layer.clone();
        let y = probe.forward(&x, NormMode::Train)?;
        let u = normal_tensor(y.shape(), &mut rng, 0.5, 0.0);
        let report = check_layer(&layer, &x, &u, LAYER_STEP)?;
        out.push(SuiteEntry { name, report });
    }

    for kind in [NormKind::Hbn, NormKind::Bn, NormKind::Gn] {
        let spec = SimpleCnnSpec {
            in_channels: 3,
            height: 8,
            width: 8,
            num_classes: 4,
            norm: kind,
            freeze_round: 0,
        };
        let mut model = build_simple_cnn::<f64>(spec, &mut rng)?;
        for (_, layer) in model.norm_layers_mut() {
            let c = layer.channels();
            randomize_affine(layer, &mut rng);
            if let NormLayer::Hybrid(h) = layer {
                h.alpha = Tensor::from_fn(&[c], |_| rng.random_range(-2.0..2.0));
                h.set_global(random_moments(c, &mut rng))?;
            }
        }
        let x = normal_tensor(&[n, 3, 8, 8], &mut rng, 0.8, 0.0);
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let report =
            finite_difference_check(&model, &x, &labels, NETWORK_STEP, Some(NETWORK_SAMPLES))?;
        out.push(SuiteEntry {
            name: format!("simple_cnn.{}", kind.as_str()),
            report,
        });
    }
    Ok(out)
}
