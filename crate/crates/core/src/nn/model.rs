use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::activation::{Flatten, MaxPool2d, Relu};
use super::conv::{Conv2d, ConvGeometry};
use super::dense::Dense;
use super::init::kaiming_uniform;
use super::layer::{Layer, ParamRole};
use crate::error::{bail, Result};
use crate::norm::{ChannelStats, GlobalStats, Moments, NormKind, NormLayer, NormMode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

/// The shared learnable parameters ω in a stable order. Excludes the hybrid
/// factors α and every statistics buffer.
pub type ModelParams = Vec<NamedTensor>;

/// Running statistics of BN-family layers, keyed by layer name.
pub type Buffers = Vec<(String, Moments)>;

/// A fixed sequential network.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    layers: Vec<(String, Layer<T>)>,
    norm_kind: NormKind,
}

impl<T: Scalar> Model<T> {
    pub fn new(layers: Vec<(String, Layer<T>)>, norm_kind: NormKind) -> Self {
        Self { layers, norm_kind }
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn layers(&self) -> &[(String, Layer<T>)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [(String, Layer<T>)] {
        &mut self.layers
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for (_, layer) in self.layers.iter_mut() {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Runs the forward pass up to and including the `norm_index`-th
    /// normalization layer (zero-based), then stops.
    pub fn forward_through_norm(
        &mut self,
        input: &Tensor<T>,
        mode: NormMode,
        norm_index: usize,
    ) -> Result<Tensor<T>> {
        let mut x = input.clone();
        let mut seen = 0;
        for (_, layer) in self.layers.iter_mut() {
            x = layer.forward(&x, mode)?;
            if let Layer::Norm(_) = layer {
                if seen == norm_index {
                    return Ok(x);
                }
                seen += 1;
            }
        }
        bail!(Config, "model has only {} normalization layers", seen)
    }

    /// The input of the `norm_index`-th normalization layer.
    pub fn forward_to_norm_input(
        &mut self,
        input: &Tensor<T>,
        mode: NormMode,
        norm_index: usize,
    ) -> Result<Tensor<T>> {
        let mut x = input.clone();
        let mut seen = 0;
        for (_, layer) in self.layers.iter_mut() {
            if let Layer::Norm(_) = layer {
                if seen == norm_index {
                    return Ok(x);
                }
                seen += 1;
            }
            x = layer.forward(&x, mode)?;
        }
        bail!(Config, "model has only {} normalization layers", seen)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = upstream.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn clear_caches(&mut self) {
        for (_, layer) in self.layers.iter_mut() {
            layer.clear_cache();
        }
    }

    /// Total learnable scalars, including client-local hybrid factors.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|(_, l)| l.params())
            .map(|(_, _, t, _)| t.len())
            .sum()
    }

    pub fn shared_params(&self) -> ModelParams {
        let mut out = Vec::new();
        for (name, layer) in &self.layers {
            for (suffix, role, value, _) in layer.params() {
                if role == ParamRole::Shared {
                    out.push(NamedTensor {
                        name: format!("{name}.{suffix}"),
                        tensor: value.cast(),
                    });
                }
            }
        }
        out
    }

    pub fn load_shared(&mut self, params: &ModelParams) -> Result<()> {
        let mut it = params.iter();
        for (name, layer) in self.layers.iter_mut() {
            for slot in layer.params_mut() {
                if slot.role != ParamRole::Shared {
                    continue;
                }
                let Some(p) = it.next() else {
                    bail!(Shape, "parameter list ends before {}.{}", name, slot.suffix);
                };
                let expected = format!("{name}.{}", slot.suffix);
                if p.name != expected || p.tensor.shape() != slot.value.shape() {
                    bail!(
                        Shape,
                        "parameter `{}` {:?} does not match `{}` {:?}",
                        p.name,
                        p.tensor.shape(),
                        expected,
                        slot.value.shape()
                    );
                }
                *slot.value = p.tensor.cast();
            }
        }
        if it.next().is_some() {
            bail!(Shape, "parameter list has more entries than the model");
        }
        Ok(())
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = (&str, &NormLayer<T>)> {
        self.layers.iter().filter_map(|(n, l)| match l {
            Layer::Norm(norm) => Some((n.as_str(), norm)),
            _ => None,
        })
    }

    pub fn norm_layers_mut(&mut self) -> impl Iterator<Item = (&str, &mut NormLayer<T>)> {
        self.layers.iter_mut().filter_map(|(n, l)| match l {
            Layer::Norm(norm) => Some((n.as_str(), norm)),
            _ => None,
        })
    }

    pub fn norm_layer_count(&self) -> usize {
        self.norm_layers().count()
    }

    /// Per-norm-layer channel counts.
    pub fn norm_channels(&self) -> Vec<usize> {
        self.norm_layers().map(|(_, l)| l.channels()).collect()
    }

    /// Hybrid factors α of every HBN layer, in layer order.
    pub fn alphas(&self) -> Vec<Tensor<T>> {
        self.norm_layers()
            .filter_map(|(_, l)| match l {
                NormLayer::Hybrid(h) => Some(h.alpha.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn set_alphas(&mut self, alphas: &[Tensor<T>]) -> Result<()> {
        let mut it = alphas.iter();
        for (name, layer) in self.norm_layers_mut() {
            if let NormLayer::Hybrid(h) = layer {
                let Some(a) = it.next() else {
                    bail!(Shape, "missing hybrid factor for {}", name);
                };
                if a.shape() != h.alpha.shape() {
                    bail!(
                        Shape,
                        "hybrid factor {:?} vs layer {:?}",
                        a.shape(),
                        h.alpha.shape()
                    );
                }
                h.alpha = a.clone();
            }
        }
        if it.next().is_some() {
            bail!(Shape, "more hybrid factors than HBN layers");
        }
        Ok(())
    }

    /// Global statistics of the HBN layers (`None` where not yet set).
    pub fn global_stats(&self) -> Vec<Option<GlobalStats>> {
        self.norm_layers()
            .filter_map(|(_, l)| match l {
                NormLayer::Hybrid(h) => Some(h.global.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn set_global_stats(&mut self, stats: &[Option<GlobalStats>]) -> Result<()> {
        let mut it = stats.iter();
        for (name, layer) in self.norm_layers_mut() {
            if let NormLayer::Hybrid(h) = layer {
                let Some(s) = it.next() else {
                    bail!(Shape, "missing global statistics for {}", name);
                };
                match s {
                    Some(s) => h.set_global(s.clone())?,
                    None => h.global = None,
                }
            }
        }
        if it.next().is_some() {
            bail!(Shape, "more global statistics than HBN layers");
        }
        Ok(())
    }

    /// Takes the statistics recorded by `CollectStats` forwards out of every HBN layer.
    pub fn take_local_stats(&mut self) -> Vec<ChannelStats> {
        self.norm_layers_mut()
            .filter_map(|(_, l)| match l {
                NormLayer::Hybrid(h) => Some(
                    h.take_local()
                        .unwrap_or_else(|| ChannelStats::empty(h.channels())),
                ),
                _ => None,
            })
            .collect()
    }

    pub fn buffers(&self) -> Buffers {
        self.norm_layers()
            .filter_map(|(n, l)| match l {
                NormLayer::Batch(b) => Some((String::from(n), b.running.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn load_buffers(&mut self, buffers: &Buffers) -> Result<()> {
        let mut it = buffers.iter();
        for (name, layer) in self.norm_layers_mut() {
            if let NormLayer::Batch(b) = layer {
                let Some((n, m)) = it.next() else {
                    bail!(Shape, "missing buffers for {}", name);
                };
                if n != name || m.channels() != b.channels() {
                    bail!(Shape, "buffer `{}` does not match layer `{}`", n, name);
                }
                b.running = m.clone();
            }
        }
        if it.next().is_some() {
            bail!(Shape, "more buffers than batch-norm layers");
        }
        Ok(())
    }

    /// Sets ε of every normalization layer.
    pub fn set_epsilon(&mut self, eps: f64) -> Result<()> {
        if !(eps > 0.0 && eps.is_finite()) {
            bail!(Config, "ε must be positive and finite, got {}", eps);
        }
        for (_, layer) in self.norm_layers_mut() {
            layer.set_epsilon(eps);
        }
        Ok(())
    }

    pub fn set_round(&mut self, round: u32) {
        for (_, layer) in self.norm_layers_mut() {
            if let NormLayer::Batch(b) = layer {
                b.set_round(round);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            layers: self
                .layers
                .iter()
                .map(|(n, l)| (n.clone(), l.cast()))
                .collect(),
            norm_kind: self.norm_kind,
        }
    }
}

/// Input geometry and head size of the Simple-CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimpleCnnSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub norm: NormKind,
    /// FixBN switches to frozen statistics after this round.
    pub freeze_round: u32,
}

impl SimpleCnnSpec {
    pub fn cifar(num_classes: usize, norm: NormKind) -> Self {
        Self {
            in_channels: 3,
            height: 32,
            width: 32,
            num_classes,
            norm,
            freeze_round: 0,
        }
    }
}

pub const SIMPLE_CNN_CHANNELS: [usize; 3] = [16, 32, 64];
pub const SIMPLE_CNN_HIDDEN: usize = 128;

/// Three conv blocks `Conv(3×3, stride 1, pad 1) → Norm → ReLU → MaxPool(2, 2)`
/// with 16/32/64 channels, then `FC → ReLU → FC`. A 32×32 input flattens to
/// 64·4·4 = 1024 features.
pub fn build_simple_cnn<T: Scalar>(spec: SimpleCnnSpec, rng: &mut Rng) -> Result<Model<T>> {
    if spec.num_classes == 0 || spec.in_channels == 0 {
        bail!(Config, "class and channel counts must be positive");
    }
    let mut layers: Vec<(String, Layer<T>)> = Vec::new();
    let (mut c, mut h, mut w) = (spec.in_channels, spec.height, spec.width);
    for (b, &out) in SIMPLE_CNN_CHANNELS.iter().enumerate() {
        let block = b + 1;
        let geometry = ConvGeometry {
            in_channels: c,
            out_channels: out,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let fan_in = c * 9;
        let conv = Conv2d::new(
            geometry,
            kaiming_uniform(&[out, c, 3, 3], fan_in, rng),
            Tensor::zeros(&[out]),
        )?;
        layers.push((format!("block{block}.conv"), Layer::Conv(conv)));
        if spec.norm != NormKind::None {
            layers.push((
                format!("block{block}.norm"),
                Layer::Norm(NormLayer::new(spec.norm, out, spec.freeze_round)?),
            ));
        }
        layers.push((format!("block{block}.relu"), Layer::Relu(Relu::new())));
        layers.push((
            format!("block{block}.pool"),
            Layer::MaxPool(MaxPool2d::new(2, 2)?),
        ));
        if h < 2 || w < 2 {
            bail!(
                Config,
                "input {}x{} too small for three pooling stages",
                spec.height,
                spec.width
            );
        }
        c = out;
        h /= 2;
        w /= 2;
    }
    let flat = c * h * w;
    layers.push(("flatten".into(), Layer::Flatten(Flatten::new())));
    layers.push((
        "fc1".into(),
        Layer::Dense(Dense::new(
            kaiming_uniform(&[SIMPLE_CNN_HIDDEN, flat], flat, rng),
            Tensor::zeros(&[SIMPLE_CNN_HIDDEN]),
        )?),
    ));
    layers.push(("fc1.relu".into(), Layer::Relu(Relu::new())));
    layers.push((
        "fc2".into(),
        Layer::Dense(Dense::new(
            kaiming_uniform(
                &[spec.num_classes, SIMPLE_CNN_HIDDEN],
                SIMPLE_CNN_HIDDEN,
                rng,
            ),
            Tensor::zeros(&[spec.num_classes]),
        )?),
    ));
    Ok(Model::new(layers, spec.norm))
}
