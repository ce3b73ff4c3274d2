//! Architecture description and parameter containers.
//!
//! A model is a fixed feed-forward stack: backbone hidden layers, a head
//! hidden layer, and a final projection onto one logit per template bin.
//! The scalar score is the template-weighted mean of the normalized,
//! squashed logits (see [`crate::net`]). Every parameterized element is one
//! "layer block" (weight plus bias), and the block order defines the layer
//! index used by task vectors and merge coefficients.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const TEMPLATE_BINS: usize = 10;

/// The smooth nonlinearity used throughout backbone and head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Gelu => 0,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Gelu),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// Defaults below describe the stock desk-scale network; partial
/// `[architecture]` config sections merge against them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDescriptor {
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    /// Backbone hidden widths, in order. May be empty.
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_head_hidden_dim")]
    pub head_hidden_dim: usize,
    /// Score anchors dotted with the normalized head output. Exactly ten
    /// entries, strictly increasing.
    #[serde(default = "default_template")]
    pub template: Vec<f64>,
    #[serde(default)]
    pub activation: Activation,
    /// Probability of dropping a hidden unit when a forward pass runs in
    /// train mode. Zero disables dropout entirely.
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_input_dim() -> usize {
    48
}

fn default_hidden_dims() -> Vec<usize> {
    vec![32, 32, 32]
}

fn default_head_hidden_dim() -> usize {
    16
}

fn default_dropout() -> f64 {
    0.1
}

pub fn default_template() -> Vec<f64> {
    (1..=TEMPLATE_BINS).map(|i| i as f64).collect()
}

impl ArchitectureDescriptor {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, head_hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            head_hidden_dim,
            template: default_template(),
            activation: Activation::Gelu,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_dims.contains(&0) || self.head_hidden_dim == 0 {
            return Err(Error::Config("hidden dims must be positive".into()));
        }
        if self.template.len() != TEMPLATE_BINS {
            return Err(Error::Config(format!(
                "template must have exactly {TEMPLATE_BINS} entries, got {}",
                self.template.len()
            )));
        }
        if !self.template.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "template entries must be strictly increasing".into(),
            ));
        }
        if !self.template.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("template entries must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Unit counts from input to output: input, backbone hiddens, head
    /// hidden, template bins.
    pub fn unit_counts(&self) -> Vec<usize> {
        let mut units = Vec::with_capacity(self.hidden_dims.len() + 3);
        units.push(self.input_dim);
        units.extend_from_slice(&self.hidden_dims);
        units.push(self.head_hidden_dim);
        units.push(TEMPLATE_BINS);
        units
    }

    /// `(out, in)` dims of each layer block, in layer order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.unit_counts()
            .windows(2)
            .map(|w| (w[1], w[0]))
            .collect()
    }

    /// Number of layer blocks. Determined solely by the descriptor.
    pub fn layer_count(&self) -> usize {
        self.hidden_dims.len() + 2
    }

    pub fn total_params(&self) -> usize {
        self.layer_dims().iter().map(|&(o, i)| o * i + o).sum()
    }

    pub fn score_min(&self) -> f64 {
        self.template[0]
    }

    pub fn score_max(&self) -> f64 {
        self.template[TEMPLATE_BINS - 1]
    }
}

/// One parameterized element: a weight matrix `[out, in]` and its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlock {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerBlock {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![out, inp]),
            bias: Tensor::zeros(vec![out]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn same_shape(&self, other: &LayerBlock) -> bool {
        self.weight.same_shape(&other.weight) && self.bias.same_shape(&other.bias)
    }

    /// Visit weight entries then bias entries, in storage order.
    pub fn for_each_param(&self, mut f: impl FnMut(f64)) {
        self.weight.data().iter().for_each(|&v| f(v));
        self.bias.data().iter().for_each(|&v| f(v));
    }
}

/// Full parameter set of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    descriptor: ArchitectureDescriptor,
    layers: Vec<LayerBlock>,
}

impl ModelParams {
    /// Seeded Xavier-normal initialization; biases start at zero.
    pub fn init(descriptor: ArchitectureDescriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let mut rng = rng::stream(seed, &[rng::TAG_INIT]);
        let layers = descriptor
            .layer_dims()
            .iter()
            .map(|&(out, inp)| {
                let scale = (2.0 / (out + inp) as f64).sqrt();
                let w: Vec<f64> = (0..out * inp)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                LayerBlock {
                    weight: Tensor::matrix(out, inp, w).expect("init shape"),
                    bias: Tensor::zeros(vec![out]),
                }
            })
            .collect();
        Ok(Self { descriptor, layers })
    }

    pub fn from_layers(
        descriptor: ArchitectureDescriptor,
        layers: Vec<LayerBlock>,
    ) -> Result<Self> {
        descriptor.validate()?;
        let dims = descriptor.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::shape(
                "ModelParams::from_layers",
                dims.len(),
                layers.len(),
            ));
        }
        for (l, (block, &(out, inp))) in layers.iter().zip(&dims).enumerate() {
            if block.out_dim() != out || block.in_dim() != inp {
                return Err(Error::shape(
                    format!("layer {l}"),
                    format!("[{out}, {inp}]"),
                    format!("[{}, {}]", block.out_dim(), block.in_dim()),
                ));
            }
            if block.bias.len() != out {
                return Err(Error::shape(
                    format!("layer {l} bias"),
                    out,
                    block.bias.len(),
                ));
            }
        }
        Ok(Self { descriptor, layers })
    }

    pub fn descriptor(&self) -> &ArchitectureDescriptor {
        &self.descriptor
    }

    pub fn layers(&self) -> &[LayerBlock] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerBlock] {
        &mut self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(LayerBlock::param_count).sum()
    }

    /// Layer-wise shape equality; the precondition for every merge.
    pub fn congruent(&self, other: &ModelParams) -> bool {
        self.descriptor == other.descriptor
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    /// First layer index where shapes differ, if any. Used for error messages.
    pub fn first_incongruent_layer(&self, other: &ModelParams) -> Option<usize> {
        if self.layers.len() != other.layers.len() {
            return Some(self.layers.len().min(other.layers.len()));
        }
        self.layers
            .iter()
            .zip(&other.layers)
            .position(|(a, b)| !a.same_shape(b))
    }

    /// Flatten all parameters into one vector, layer order, weights before
    /// bias within a block.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_params());
        for block in &self.layers {
            out.extend_from_slice(block.weight.data());
            out.extend_from_slice(block.bias.data());
        }
        out
    }

    /// Overwrite all parameters from a flat vector (inverse of [`to_flat`]).
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_params() {
            return Err(Error::shape(
                "set_from_flat",
                self.total_params(),
                flat.len(),
            ));
        }
        let mut off = 0;
        for block in &mut self.layers {
            let w = block.weight.len();
            block.weight.data_mut().copy_from_slice(&flat[off..off + w]);
            off += w;
            let b = block.bias.len();
            block.bias.data_mut().copy_from_slice(&flat[off..off + b]);
            off += b;
        }
        Ok(())
    }

    pub fn bit_equal(&self, other: &ModelParams) -> bool {
        self.congruent(other)
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                bits_eq(a.weight.data(), b.weight.data()) && bits_eq(a.bias.data(), b.bias.data())
            })
    }
}

pub(crate) fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Per-layer gradient blocks, shape-congruent with a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub layers: Vec<LayerBlock>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers()
                .iter()
                .map(|b| LayerBlock::zeros(b.out_dim(), b.in_dim()))
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for block in &self.layers {
            out.extend_from_slice(block.weight.data());
            out.extend_from_slice(block.bias.data());
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        for block in &mut self.layers {
            for v in block.weight.data_mut() {
                *v *= c;
            }
            for v in block.bias.data_mut() {
                *v *= c;
            }
        }
    }
}
