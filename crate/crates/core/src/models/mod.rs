//! Generator (feature extractor plus twin classifier heads) and the
//! fully-convolutional domain discriminator.

mod checkpoint;

pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_FORMAT};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, Tensor, Var};
use crate::rng::{stream, stream_rng};

/// Channel progression of the full-size discriminator. The desk-scale
/// default in [`ModelConfig`] keeps the same layer pattern with fewer,
/// narrower layers.
pub const REFERENCE_DISC_CHANNELS: [usize; 5] = [64, 128, 256, 512, 1];

pub const DISC_KERNEL: usize = 4;
pub const DISC_STRIDE: usize = 2;
pub const DISC_PADDING: usize = 1;
pub const DISC_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub extractor_channels: Vec<usize>,
    pub extractor_kernel: usize,
    pub disc_channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 5,
            extractor_channels: vec![8, 16, 16],
            extractor_kernel: 3,
            disc_channels: vec![8, 16, 1],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Error::Config {
            key: format!("model.{key}"),
            msg: msg.to_string(),
        };
        if self.in_channels == 0 {
            return Err(bad("in_channels", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(bad("num_classes", "need at least 2 classes"));
        }
        if self.extractor_channels.is_empty() || self.extractor_channels.contains(&0) {
            return Err(bad("extractor_channels", "need one or more positive widths"));
        }
        if self.extractor_kernel.is_multiple_of(2) {
            return Err(bad("extractor_kernel", "must be odd to preserve spatial size"));
        }
        if self.disc_channels.is_empty() || self.disc_channels.contains(&0) {
            return Err(bad("disc_channels", "need one or more positive widths"));
        }
        if self.disc_channels.last() != Some(&1) {
            return Err(bad("disc_channels", "last layer must have exactly 1 channel"));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.extractor_channels.last().expect("validated")
    }

    /// Smallest spatial size (and required divisor) the discriminator accepts.
    pub fn disc_min_size(&self) -> usize {
        1 << self.disc_channels.len()
    }
}

/// A convolution with its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    fn he_normal(cout: usize, cin: usize, k: usize, stride: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let data = (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::new(vec![cout, cin, k, k], data).expect("conv shape"),
            bias: Tensor::zeros(&[cout]),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> BoundConv {
        let mut leaf = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        BoundConv {
            weight: leaf(&self.weight),
            bias: leaf(&self.bias),
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn zeroed(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
            ..*self
        }
    }

    fn shapes_match(&self, other: &ConvLayer) -> bool {
        self.weight.shape() == other.weight.shape()
            && self.bias.shape() == other.bias.shape()
            && self.stride == other.stride
            && self.padding == other.padding
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundConv {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

impl BoundConv {
    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.conv2d(x, self.weight, self.stride, self.padding)?;
        g.bias_add(y, self.bias)
    }
}

/// How many classifier heads take part in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heads {
    /// Head 1 only: the source-only baseline.
    Single,
    /// Both heads, ensembled as `softmax(logits1 + logits2)`.
    Twin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub extractor: Vec<ConvLayer>,
    pub classifier1: ConvLayer,
    pub classifier2: ConvLayer,
}

impl GeneratorParams {
    /// He-initialised weights and zero biases; the second head draws from its
    /// own stream so the two heads start apart.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let k = cfg.extractor_kernel;
        let mut rng = stream_rng(seed, stream::EXTRACTOR);
        let mut cin = cfg.in_channels;
        let extractor = cfg
            .extractor_channels
            .iter()
            .map(|&cout| {
                let layer = ConvLayer::he_normal(cout, cin, k, 1, k / 2, &mut rng);
                cin = cout;
                layer
            })
            .collect();
        let f = cfg.feature_channels();
        let classifier1 = ConvLayer::he_normal(cfg.num_classes, f, 1, 1, 0, &mut stream_rng(seed, stream::CLASSIFIER1));
        let classifier2 = ConvLayer::he_normal(cfg.num_classes, f, 1, 1, 0, &mut stream_rng(seed, stream::CLASSIFIER2));
        Self {
            extractor,
            classifier1,
            classifier2,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            extractor: self.extractor.iter().map(ConvLayer::zeroed).collect(),
            classifier1: self.classifier1.zeroed(),
            classifier2: self.classifier2.zeroed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.classifier1.shapes_match(&self.classifier2) {
            return Err(Error::format("generator", "classifier heads differ in shape"));
        }
        if self.layers().any(|l| !l.weight.is_finite() || !l.bias.is_finite()) {
            return Err(Error::format("generator", "non-finite parameter"));
        }
        Ok(())
    }

    fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.extractor.iter().chain([&self.classifier1, &self.classifier2])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.extractor
            .iter_mut()
            .chain([&mut self.classifier1, &mut self.classifier2])
    }

    /// Moves all tensors out in a fixed order (weight, bias per layer) for the
    /// optimizer; [`GeneratorParams::restore`] puts them back.
    pub fn take_tensors(&mut self) -> Vec<Tensor> {
        self.layers_mut()
            .flat_map(|l| {
                let w = std::mem::replace(&mut l.weight, Tensor::scalar(0.0));
                let b = std::mem::replace(&mut l.bias, Tensor::scalar(0.0));
                [w, b]
            })
            .collect()
    }

    pub fn restore(&mut self, tensors: Vec<Tensor>) {
        let mut it = tensors.into_iter();
        for l in self.layers_mut() {
            l.weight = it.next().expect("tensor count");
            l.bias = it.next().expect("tensor count");
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundGenerator {
        BoundGenerator {
            extractor: self.extractor.iter().map(|l| l.bind(g, trainable)).collect(),
            heads: [self.classifier1.bind(g, trainable), self.classifier2.bind(g, trainable)],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier1.out_channels()
    }
}

/// Generator parameters placed on a graph.
#[derive(Clone, Debug)]
pub struct BoundGenerator {
    pub extractor: Vec<BoundConv>,
    pub heads: [BoundConv; 2],
}

/// Graph handles produced by one generator forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput {
    pub features: Var,
    pub p1: Var,
    pub p2: Var,
    pub ensemble: Var,
}

impl BoundGenerator {
    /// Vars for every parameter in the same order as `take_tensors`.
    pub fn param_vars(&self) -> Vec<Var> {
        self.extractor
            .iter()
            .chain(&self.heads)
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// Input `[N, F, H, W]`. With `Heads::Single`, `p2` and `ensemble` alias `p1`.
    pub fn forward(&self, g: &mut Graph, x: Var, heads: Heads) -> Result<GeneratorOutput> {
        let mut h = x;
        for layer in &self.extractor {
            let y = layer.apply(g, h)?;
            h = g.relu(y);
        }
        let features = h;
        let logits1 = self.heads[0].apply(g, features)?;
        let p1 = g.softmax(logits1, 1)?;
        if heads == Heads::Single {
            return Ok(GeneratorOutput {
                features,
                p1,
                p2: p1,
                ensemble: p1,
            });
        }
        let logits2 = self.heads[1].apply(g, features)?;
        let p2 = g.softmax(logits2, 1)?;
        let summed = g.add(logits1, logits2)?;
        let ensemble = g.softmax(summed, 1)?;
        Ok(GeneratorOutput {
            features,
            p1,
            p2,
            ensemble,
        })
    }

    /// Flattened head weights (biases excluded), as graph vectors.
    pub fn classifier_weight_vectors(&self, g: &mut Graph) -> Result<(Var, Var)> {
        Ok((
            g.flatten_concat(&[self.heads[0].weight])?,
            g.flatten_concat(&[self.heads[1].weight])?,
        ))
    }
}

/// Per-pixel class probabilities from both heads and their ensemble,
/// plus the extractor features they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionPair {
    pub p1: Tensor,
    pub p2: Tensor,
    pub ensemble: Tensor,
    pub features: Tensor,
}

/// Inference-only generator pass on `[F,H,W]` or `[N,F,H,W]` input.
pub fn forward_generator(x: &Tensor, params: &GeneratorParams) -> Result<PredictionPair> {
    forward_generator_with(x, params, Heads::Twin)
}

pub fn forward_generator_with(x: &Tensor, params: &GeneratorParams, heads: Heads) -> Result<PredictionPair> {
    let x = as_batch(x)?;
    let expected = params.extractor[0].weight.shape()[1];
    if x.shape()[1] != expected {
        return Err(Error::ShapeMismatch {
            op: "forward_generator",
            lhs: x.shape().to_vec(),
            rhs: params.extractor[0].weight.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let xv = g.constant(x);
    let out = bound.forward(&mut g, xv, heads)?;
    Ok(PredictionPair {
        p1: g.value(out.p1).clone(),
        p2: g.value(out.p2).clone(),
        ensemble: g.value(out.ensemble).clone(),
        features: g.value(out.features).clone(),
    })
}

fn as_batch(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    x.clone().reshape(vec![n, c, h, w])
}

/// Flattened convolution weights of both heads (biases excluded).
pub fn flatten_classifier_weights(params: &GeneratorParams) -> (Tensor, Tensor) {
    (
        Tensor::from_vec(params.classifier1.weight.data().to_vec()),
        Tensor::from_vec(params.classifier2.weight.data().to_vec()),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorParams {
    pub layers: Vec<ConvLayer>,
}

impl DiscriminatorParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, stream::DISCRIMINATOR);
        let mut cin = cfg.num_classes;
        let layers = cfg
            .disc_channels
            .iter()
            .map(|&cout| {
                let l = ConvLayer::he_normal(cout, cin, DISC_KERNEL, DISC_STRIDE, DISC_PADDING, &mut rng);
                cin = cout;
                l
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(ConvLayer::zeroed).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.layers.last() {
            Some(l) if l.out_channels() == 1 => {}
            _ => return Err(Error::format("discriminator", "last layer must have one output channel")),
        }
        if self.layers.iter().any(|l| !l.weight.is_finite() || !l.bias.is_finite()) {
            return Err(Error::format("discriminator", "non-finite parameter"));
        }
        Ok(())
    }

    pub fn take_tensors(&mut self) -> Vec<Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    std::mem::replace(&mut l.weight, Tensor::scalar(0.0)),
                    std::mem::replace(&mut l.bias, Tensor::scalar(0.0)),
                ]
            })
            .collect()
    }

    pub fn restore(&mut self, tensors: Vec<Tensor>) {
        let mut it = tensors.into_iter();
        for l in &mut self.layers {
            l.weight = it.next().expect("tensor count");
            l.bias = it.next().expect("tensor count");
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundDiscriminator {
        BoundDiscriminator {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }

    pub fn min_input_size(&self) -> usize {
        1 << self.layers.len()
    }
}

#[derive(Clone, Debug)]
pub struct BoundDiscriminator {
    pub layers: Vec<BoundConv>,
}

impl BoundDiscriminator {
    pub fn param_vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Per-pixel source probability `[N,1,H,W]` for a `[N,C,H,W]` prediction map.
    pub fn forward(&self, g: &mut Graph, p: Var) -> Result<Var> {
        let [_, _, h, w] = g.value(p).dims4()?;
        let factor = 1usize << self.layers.len();
        if h < factor || w < factor || h % factor != 0 || w % factor != 0 {
            return Err(Error::InputTooSmall {
                height: h,
                width: w,
                min: factor,
            });
        }
        let mut x = p;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(g, x)?;
            if i != last {
                x = g.leaky_relu(x, DISC_LEAKY_SLOPE);
            }
        }
        let prob = g.sigmoid(x);
        g.upsample_nearest(prob, factor)
    }
}

/// Inference-only discriminator pass on `[C,H,W]` or `[N,C,H,W]` input.
pub fn forward_discriminator(p: &Tensor, params: &DiscriminatorParams) -> Result<Tensor> {
    let p = as_batch(p)?;
    let expected = params.layers[0].weight.shape()[1];
    if p.shape()[1] != expected {
        return Err(Error::ShapeMismatch {
            op: "forward_discriminator",
            lhs: p.shape().to_vec(),
            rhs: params.layers[0].weight.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let pv = g.constant(p);
    let out = bound.forward(&mut g, pv)?;
    Ok(g.value(out).clone())
}
