//! The conditional difference adversarial autoencoder.
//!
//! The encoder is four stride-2 convolutions (32→16→8→4→2) followed by a
//! dense map to a 100-d latent code; the decoder mirrors it with transposed
//! convolutions. A [`SkipPosition`] splits both into two stages:
//!
//! ```text
//! x̂_t = G2(E1(x_s) + G1(E2(E1(x_s)), l))
//! ```
//!
//! E1 ends at the tapped encoder layer (tanh output), G1 ends at the
//! matching decoder resolution (tanh output, the "difference" `d`).

mod losses;

pub use losses::{LossBundle, LossVars, LossWeights};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var, LEAKY_SLOPE};
use crate::labels::LabelMode;
use crate::tensor::{Scalar, Tensor};

/// Latent code size.
pub const Z_DIM: usize = 100;
/// Input/output side length.
pub const IMAGE_SIZE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
/// Channel widths along the encoder; the decoder runs them in reverse.
pub const ENCODER_CHANNELS: [usize; 5] = [3, 32, 64, 128, 256];
pub const KERNEL: usize = 5;
pub const STRIDE: usize = 2;
/// Padding that makes every stride-2 layer exactly halve (or double) the side.
pub const PAD: usize = 2;
pub const OUTPUT_PAD: usize = 1;
/// Side length after the fourth encoder convolution.
pub const BOTTLENECK_SIZE: usize = 2;
pub const D_E_HIDDEN: [usize; 2] = [64, 32];
pub const D_G_CHANNELS: [usize; 4] = [3, 32, 64, 128];
/// Scale on the weight range of the sigmoid output layers, so fresh
/// discriminators start close to 0.5.
pub const HEAD_INIT_GAIN: f64 = 0.1;

/// Where the encoder→decoder feedforward connection sits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipPosition {
    /// No connection: the plain conditional adversarial autoencoder.
    None,
    /// After encoder conv 1 (32×16×16).
    P1,
    /// After encoder conv 2 (64×8×8).
    #[default]
    P2,
    /// After encoder conv 3 (128×4×4).
    P3,
}

impl SkipPosition {
    pub const ALL: [SkipPosition; 4] = [SkipPosition::None, SkipPosition::P1, SkipPosition::P2, SkipPosition::P3];

    /// Number of encoder convolutions in E1.
    pub fn depth(self) -> usize {
        match self {
            SkipPosition::None => 0,
            SkipPosition::P1 => 1,
            SkipPosition::P2 => 2,
            SkipPosition::P3 => 3,
        }
    }

    /// `[channels, side]` of the junction, if any.
    pub fn junction_shape(self) -> Option<[usize; 2]> {
        let p = self.depth();
        (p > 0).then(|| [ENCODER_CHANNELS[p], IMAGE_SIZE >> p])
    }

    pub fn name(self) -> &'static str {
        match self {
            SkipPosition::None => "none",
            SkipPosition::P1 => "p1",
            SkipPosition::P2 => "p2",
            SkipPosition::P3 => "p3",
        }
    }
}

impl fmt::Display for SkipPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SkipPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(SkipPosition::None),
            "p1" | "1" | "n1" => Ok(SkipPosition::P1),
            "p2" | "2" | "n2" => Ok(SkipPosition::P2),
            "p3" | "3" | "n3" => Ok(SkipPosition::P3),
            other => Err(Error::Validation(format!("unknown skip position {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Stride-2 convolution, kernel `[out, in, 5, 5]`.
    Conv,
    /// Stride-2 transposed convolution, kernel `[in, out, 5, 5]`.
    Deconv,
    /// Affine map on flattened input, optionally reshaped to `[c, h, w]`.
    Dense { reshape: Option<[usize; 3]> },
}

/// One weight/bias pair with its operation and output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Scalar = f32> {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    fn forward(&self, g: &mut Graph<T>, vars: (Var, Var), x: Var) -> Result<Var> {
        let y = self.pre_activation(g, vars, x)?;
        Ok(match self.activation {
            Activation::Identity => y,
            Activation::LeakyRelu => g.leaky_relu(y, LEAKY_SLOPE),
            Activation::Tanh => g.tanh(y),
            Activation::Sigmoid => g.sigmoid(y),
        })
    }

    fn pre_activation(&self, g: &mut Graph<T>, vars: (Var, Var), x: Var) -> Result<Var> {
        let (w, b) = vars;
        let y = match self.kind {
            LayerKind::Conv => g.conv2d(x, w, b, STRIDE, PAD)?,
            LayerKind::Deconv => g.conv2d_transpose(x, w, b, STRIDE, PAD, OUTPUT_PAD)?,
            LayerKind::Dense { reshape } => {
                let flat = if g.value(x).ndim() == 2 { x } else { g.flatten(x)? };
                let y = g.dense(flat, w, b)?;
                match reshape {
                    Some([c, h, wd]) => {
                        let n = g.value(y).shape()[0];
                        g.reshape(y, &[n, c, h, wd])?
                    }
                    None => y,
                }
            }
        };
        Ok(y)
    }
}

/// A named sequence of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage<T: Scalar = f32> {
    pub layers: Vec<Layer<T>>,
}

/// Graph handles for a stage's parameters.
pub type StageVars = Vec<(Var, Var)>;

impl<T: Scalar> Stage<T> {
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> StageVars {
        self.layers
            .iter()
            .map(|l| {
                let w = g.leaf(l.weight.clone().with_requires_grad(trainable));
                let b = g.leaf(l.bias.clone().with_requires_grad(trainable));
                (w, b)
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &StageVars, mut x: Var) -> Result<Var> {
        for (layer, &v) in self.layers.iter().zip(vars) {
            x = layer.forward(g, v, x)?;
        }
        Ok(x)
    }

    /// Like [`Stage::forward`] but stops before the last activation.
    pub fn forward_logits(&self, g: &mut Graph<T>, vars: &StageVars, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, (layer, &v)) in self.layers.iter().zip(vars).enumerate() {
            x = if i == last {
                layer.pre_activation(g, v, x)?
            } else {
                layer.forward(g, v, x)?
            };
        }
        Ok(x)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// Which stages are trainable when binding parameters into a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub autoencoder: bool,
    pub discriminators: bool,
}

impl Trainable {
    pub const NONE: Trainable = Trainable {
        autoencoder: false,
        discriminators: false,
    };
    pub const AUTOENCODER: Trainable = Trainable {
        autoencoder: true,
        discriminators: false,
    };
    pub const DISCRIMINATORS: Trainable = Trainable {
        autoencoder: false,
        discriminators: true,
    };
    pub const ALL: Trainable = Trainable {
        autoencoder: true,
        discriminators: true,
    };
}

/// All parameter handles of a model bound into one graph.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub e1: StageVars,
    pub e2: StageVars,
    pub g1: StageVars,
    pub g2: StageVars,
    pub d_e: StageVars,
    pub d_g: StageVars,
}

impl ModelVars {
    /// Handles of E1, E2, G1, G2 in [`ModelParams::autoencoder_tensors`] order.
    pub fn autoencoder(&self) -> Vec<Var> {
        flatten_vars([&self.e1, &self.e2, &self.g1, &self.g2])
    }

    /// Handles of D_E, D_G in [`ModelParams::discriminator_tensors`] order.
    pub fn discriminators(&self) -> Vec<Var> {
        flatten_vars([&self.d_e, &self.d_g])
    }
}

fn flatten_vars<const N: usize>(stages: [&StageVars; N]) -> Vec<Var> {
    stages
        .iter()
        .flat_map(|s| s.iter().flat_map(|&(w, b)| [w, b]))
        .collect()
}

/// Graph nodes produced by one pass of [`ModelParams::synthesize_graph`].
#[derive(Clone, Copy, Debug)]
pub struct SynthesisNodes {
    /// E1 output; `None` when there is no feedforward connection.
    pub skip: Option<Var>,
    pub z: Var,
    /// G1 output.
    pub difference: Var,
    /// The G2 input (junction sum, or `difference` itself without a connection).
    pub junction: Var,
    pub output: Var,
}

/// Every weight of the six sub-networks plus the structural choices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub skip: SkipPosition,
    pub label_mode: LabelMode,
    pub e1: Stage<T>,
    pub e2: Stage<T>,
    pub g1: Stage<T>,
    pub g2: Stage<T>,
    pub d_e: Stage<T>,
    pub d_g: Stage<T>,
}

struct LayerSpec {
    name: String,
    kind: LayerKind,
    activation: Activation,
    weight_shape: Vec<usize>,
}

fn conv_spec(name: String, cin: usize, cout: usize, activation: Activation, deconv: bool) -> LayerSpec {
    LayerSpec {
        name,
        kind: if deconv { LayerKind::Deconv } else { LayerKind::Conv },
        activation,
        weight_shape: if deconv {
            vec![cin, cout, KERNEL, KERNEL]
        } else {
            vec![cout, cin, KERNEL, KERNEL]
        },
    }
}

fn dense_spec(name: &str, din: usize, dout: usize, activation: Activation, reshape: Option<[usize; 3]>) -> LayerSpec {
    LayerSpec {
        name: name.to_string(),
        kind: LayerKind::Dense { reshape },
        activation,
        weight_shape: vec![din, dout],
    }
}

/// Layer plans of the six sub-networks for a skip position.
fn layer_plan(skip: SkipPosition, label_dim: usize) -> [Vec<LayerSpec>; 6] {
    use Activation::*;
    let p = skip.depth();
    let ch = ENCODER_CHANNELS;
    let bottleneck = ch[4] * BOTTLENECK_SIZE * BOTTLENECK_SIZE;

    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for k in 1..=4 {
        let act = if k == p { Tanh } else { LeakyRelu };
        let spec = conv_spec(format!("conv{k}"), ch[k - 1], ch[k], act, false);
        if k <= p {
            e1.push(spec);
        } else {
            e2.push(spec);
        }
    }
    e2.push(dense_spec("dense", bottleneck, Z_DIM, Identity, None));

    // Decoder layer j (1..=4) maps ch[5-j] -> ch[4-j]; G1 stops where the
    // output matches the tapped encoder layer.
    let g1_deconvs = if p == 0 { 0 } else { 4 - p };
    let mut g1 = vec![dense_spec(
        "dense",
        Z_DIM + label_dim,
        bottleneck,
        if g1_deconvs == 0 { Tanh } else { LeakyRelu },
        Some([ch[4], BOTTLENECK_SIZE, BOTTLENECK_SIZE]),
    )];
    let mut g2 = Vec::new();
    for j in 1..=4 {
        let act = if j == 4 || j == g1_deconvs { Tanh } else { LeakyRelu };
        let spec = conv_spec(format!("deconv{j}"), ch[5 - j], ch[4 - j], act, true);
        if j <= g1_deconvs {
            g1.push(spec);
        } else {
            g2.push(spec);
        }
    }

    let d_e = vec![
        dense_spec("dense1", Z_DIM, D_E_HIDDEN[0], LeakyRelu, None),
        dense_spec("dense2", D_E_HIDDEN[0], D_E_HIDDEN[1], LeakyRelu, None),
        dense_spec("dense3", D_E_HIDDEN[1], 1, Sigmoid, None),
    ];
    let mut d_g: Vec<LayerSpec> = (1..D_G_CHANNELS.len())
        .map(|k| {
            conv_spec(
                format!("conv{k}"),
                D_G_CHANNELS[k - 1],
                D_G_CHANNELS[k],
                LeakyRelu,
                false,
            )
        })
        .collect();
    let side = IMAGE_SIZE >> (D_G_CHANNELS.len() - 1);
    d_g.push(dense_spec("dense", D_G_CHANNELS[3] * side * side, 1, Sigmoid, None));

    [e1, e2, g1, g2, d_e, d_g]
}

pub const STAGE_NAMES: [&str; 6] = ["e1", "e2", "g1", "g2", "d_e", "d_g"];

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled uniform weights, zero biases.
    ///
    /// Layers are drawn in a fixed order that does not depend on the skip
    /// position, so equal seeds give the same draws across positions; only
    /// the gain of the tanh junction layers differs.
    pub fn init(skip: SkipPosition, label_mode: LabelMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(skip, label_mode);
        // Draw in canonical (encoder, decoder, D_E, D_G) order.
        for (_, layer) in model.canonical_layers_mut() {
            let limit = init_limit(layer);
            for w in layer.weight.data_mut() {
                *w = T::from_f64(limit * rng.random_range(-1.0..1.0));
            }
        }
        model
    }

    /// A model whose weights and biases are all zero.
    pub fn zeros(skip: SkipPosition, label_mode: LabelMode) -> Self {
        Self::from_plan(skip, label_mode, |spec| Tensor::zeros(&spec.weight_shape))
    }

    fn from_plan(skip: SkipPosition, label_mode: LabelMode, weight: impl Fn(&LayerSpec) -> Tensor<T>) -> Self {
        let plan = layer_plan(skip, label_mode.dim());
        let mut stages = plan.into_iter().map(|specs| Stage {
            layers: specs
                .iter()
                .map(|spec| Layer {
                    name: spec.name.clone(),
                    kind: spec.kind,
                    activation: spec.activation,
                    weight: weight(spec),
                    bias: Tensor::zeros(&[bias_len(spec)]),
                })
                .collect(),
        });
        let mut next = || stages.next().expect("six stages");
        Self {
            skip,
            label_mode,
            e1: next(),
            e2: next(),
            g1: next(),
            g2: next(),
            d_e: next(),
            d_g: next(),
        }
    }

    pub fn label_dim(&self) -> usize {
        self.label_mode.dim()
    }

    pub fn stages(&self) -> [(&'static str, &Stage<T>); 6] {
        [
            ("e1", &self.e1),
            ("e2", &self.e2),
            ("g1", &self.g1),
            ("g2", &self.g2),
            ("d_e", &self.d_e),
            ("d_g", &self.d_g),
        ]
    }

    fn stages_mut(&mut self) -> [(&'static str, &mut Stage<T>); 6] {
        [
            ("e1", &mut self.e1),
            ("e2", &mut self.e2),
            ("g1", &mut self.g1),
            ("g2", &mut self.g2),
            ("d_e", &mut self.d_e),
            ("d_g", &mut self.d_g),
        ]
    }

    /// Layers in skip-independent order: encoder convs, encoder dense,
    /// decoder dense, decoder deconvs, D_E, D_G.
    fn canonical_layers_mut(&mut self) -> Vec<(&'static str, &mut Layer<T>)> {
        let mut out = Vec::new();
        for (name, stage) in self.stages_mut() {
            for layer in stage.layers.iter_mut() {
                out.push((name, layer));
            }
        }
        out.sort_by_key(|(stage, layer)| canonical_rank(stage, &layer.name));
        out
    }

    /// `(name, tensor)` for every parameter, e.g. `"e1.conv1.weight"`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (stage_name, stage) in self.stages() {
            for layer in &stage.layers {
                out.push((format!("{stage_name}.{}.weight", layer.name), &layer.weight));
                out.push((format!("{stage_name}.{}.bias", layer.name), &layer.bias));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (stage_name, stage) in self.stages_mut() {
            for layer in stage.layers.iter_mut() {
                let prefix = format!("{stage_name}.{}", layer.name);
                out.push((format!("{prefix}.weight"), &mut layer.weight));
                out.push((format!("{prefix}.bias"), &mut layer.bias));
            }
        }
        out
    }

    /// E1, E2, G1, G2 parameters in binding order.
    pub fn autoencoder_tensors(&self) -> Vec<&Tensor<T>> {
        [&self.e1, &self.e2, &self.g1, &self.g2]
            .into_iter()
            .flat_map(|s| s.tensors())
            .collect()
    }

    pub fn autoencoder_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let Self { e1, e2, g1, g2, .. } = self;
        e1.tensors_mut()
            .chain(e2.tensors_mut())
            .chain(g1.tensors_mut())
            .chain(g2.tensors_mut())
            .collect()
    }

    /// D_E, D_G parameters in binding order.
    pub fn discriminator_tensors(&self) -> Vec<&Tensor<T>> {
        [&self.d_e, &self.d_g].into_iter().flat_map(|s| s.tensors()).collect()
    }

    pub fn discriminator_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let Self { d_e, d_g, .. } = self;
        d_e.tensors_mut().chain(d_g.tensors_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Converts every weight to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let cast_stage = |s: &Stage<T>| Stage {
            layers: s
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: l.kind,
                    activation: l.activation,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        };
        ModelParams {
            skip: self.skip,
            label_mode: self.label_mode,
            e1: cast_stage(&self.e1),
            e2: cast_stage(&self.e2),
            g1: cast_stage(&self.g1),
            g2: cast_stage(&self.g2),
            d_e: cast_stage(&self.d_e),
            d_g: cast_stage(&self.d_g),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: Trainable) -> ModelVars {
        ModelVars {
            e1: self.e1.bind(g, trainable.autoencoder),
            e2: self.e2.bind(g, trainable.autoencoder),
            g1: self.g1.bind(g, trainable.autoencoder),
            g2: self.g2.bind(g, trainable.autoencoder),
            d_e: self.d_e.bind(g, trainable.discriminators),
            d_g: self.d_g.bind(g, trainable.discriminators),
        }
    }

    fn check_images(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.value(x).shape();
        if s.len() != 4 || s[1..] != [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE] {
            return Err(Error::Shape(format!(
                "expected images of shape [N, 3, 32, 32], got {s:?}"
            )));
        }
        Ok(())
    }

    /// E1: features at the junction. Without a connection E1 is the identity.
    pub fn encode_stage1(&self, g: &mut Graph<T>, vars: &ModelVars, x: Var) -> Result<Var> {
        self.check_images(g, x)?;
        self.e1.forward(g, &vars.e1, x)
    }

    /// E2: junction features to the latent code `[N, 100]`.
    pub fn encode_stage2(&self, g: &mut Graph<T>, vars: &ModelVars, features: Var) -> Result<Var> {
        let expected = match self.skip.junction_shape() {
            Some([c, s]) => vec![c, s, s],
            None => vec![IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE],
        };
        let shape = g.value(features).shape();
        if shape.len() != 4 || shape[1..] != expected[..] {
            return Err(Error::Shape(format!(
                "encode_stage2 expects [N, {expected:?}], got {shape:?}"
            )));
        }
        self.e2.forward(g, &vars.e2, features)
    }

    /// G1: the difference `d` from `[z ‖ l]`, tanh-bounded.
    pub fn decode_difference(&self, g: &mut Graph<T>, vars: &ModelVars, z: Var, labels: Var) -> Result<Var> {
        let ls = g.value(labels).shape();
        if ls.len() != 2 || ls[1] != self.label_dim() {
            return Err(Error::Shape(format!(
                "{} label must have {} entries per sample, got shape {ls:?}",
                self.label_mode,
                self.label_dim()
            )));
        }
        let input = g.concat_columns(z, labels)?;
        self.g1.forward(g, &vars.g1, input)
    }

    /// G2: junction features to the output image.
    pub fn decode_stage2(&self, g: &mut Graph<T>, vars: &ModelVars, junction: Var) -> Result<Var> {
        self.g2.forward(g, &vars.g2, junction)
    }

    /// The full generator `G2(E1(x) + G1(E2(E1(x)), l))`.
    pub fn synthesize_graph(&self, g: &mut Graph<T>, vars: &ModelVars, x: Var, labels: Var) -> Result<SynthesisNodes> {
        let features = self.encode_stage1(g, vars, x)?;
        let z = self.encode_stage2(g, vars, features)?;
        let difference = self.decode_difference(g, vars, z, labels)?;
        let (skip, junction) = if self.skip == SkipPosition::None {
            (None, difference)
        } else {
            (Some(features), g.add(features, difference)?)
        };
        let output = self.decode_stage2(g, vars, junction)?;
        Ok(SynthesisNodes {
            skip,
            z,
            difference,
            junction,
            output,
        })
    }

    pub fn discriminate_latent_graph(&self, g: &mut Graph<T>, vars: &ModelVars, z: Var) -> Result<Var> {
        let logits = self.latent_logits_graph(g, vars, z)?;
        Ok(g.sigmoid(logits))
    }

    pub fn discriminate_image_graph(&self, g: &mut Graph<T>, vars: &ModelVars, x: Var) -> Result<Var> {
        let logits = self.image_logits_graph(g, vars, x)?;
        Ok(g.sigmoid(logits))
    }

    /// `D_E` before its sigmoid head.
    pub fn latent_logits_graph(&self, g: &mut Graph<T>, vars: &ModelVars, z: Var) -> Result<Var> {
        let s = g.value(z).shape();
        if s.len() != 2 || s[1] != Z_DIM {
            return Err(Error::Shape(format!(
                "latent discriminator expects [N, 100], got {s:?}"
            )));
        }
        self.d_e.forward_logits(g, &vars.d_e, z)
    }

    /// `D_G` before its sigmoid head.
    pub fn image_logits_graph(&self, g: &mut Graph<T>, vars: &ModelVars, x: Var) -> Result<Var> {
        self.check_images(g, x)?;
        self.d_g.forward_logits(g, &vars.d_g, x)
    }

    /// Runs the generator on constant inputs. `images` is `[N,3,32,32]`,
    /// `labels` `[N, label_dim]`.
    pub fn synthesize(&self, images: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, Trainable::NONE);
        let x = g.constant(images.clone());
        let l = g.constant(labels.clone());
        check_batch(images, labels)?;
        let nodes = self.synthesize_graph(&mut g, &vars, x, l)?;
        Ok(g.value(nodes.output).clone())
    }

    /// Latent codes `[N, 100]` of a batch of images.
    pub fn encode(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, Trainable::NONE);
        let x = g.constant(images.clone());
        let f = self.encode_stage1(&mut g, &vars, x)?;
        let z = self.encode_stage2(&mut g, &vars, f)?;
        Ok(g.value(z).clone())
    }

    /// `D_E(z)` per sample, shape `[N, 1]`.
    pub fn discriminate_latent(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, Trainable::NONE);
        let z = g.constant(z.clone());
        let p = self.discriminate_latent_graph(&mut g, &vars, z)?;
        Ok(g.value(p).clone())
    }

    /// `D_G(x)` per sample, shape `[N, 1]`.
    pub fn discriminate_image(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, Trainable::NONE);
        let x = g.constant(images.clone());
        let p = self.discriminate_image_graph(&mut g, &vars, x)?;
        Ok(g.value(p).clone())
    }
}

fn check_batch<T: Scalar>(images: &Tensor<T>, labels: &Tensor<T>) -> Result<()> {
    if images.ndim() != 4 || labels.ndim() != 2 || images.shape()[0] != labels.shape()[0] {
        return Err(Error::Shape(format!(
            "images {:?} and labels {:?} must share the batch dimension",
            images.shape(),
            labels.shape()
        )));
    }
    Ok(())
}

fn bias_len(spec: &LayerSpec) -> usize {
    match spec.kind {
        LayerKind::Conv => spec.weight_shape[0],
        LayerKind::Deconv => spec.weight_shape[1],
        LayerKind::Dense { .. } => spec.weight_shape[1],
    }
}

/// Inputs feeding one output element. A stride-2 transposed convolution
/// reaches each output through a quarter of its kernel taps.
fn fan_in<T: Scalar>(layer: &Layer<T>) -> usize {
    let s = layer.weight.shape();
    match layer.kind {
        LayerKind::Conv => s[1] * s[2] * s[3],
        LayerKind::Deconv => s[0] * s[2] * s[3] / (STRIDE * STRIDE),
        LayerKind::Dense { .. } => s[0],
    }
}

/// Half-width of the uniform weight range: variance `gain² / fan_in`.
fn init_limit<T: Scalar>(layer: &Layer<T>) -> f64 {
    let gain2 = match layer.activation {
        Activation::LeakyRelu => 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE),
        Activation::Sigmoid => HEAD_INIT_GAIN * HEAD_INIT_GAIN,
        Activation::Identity | Activation::Tanh => 1.0,
    };
    (3.0 * gain2 / fan_in(layer) as f64).sqrt()
}

fn canonical_rank(stage: &str, layer: &str) -> (usize, usize) {
    let digit = layer
        .chars()
        .filter(|c| c.is_ascii_digit())
        .collect::<String>()
        .parse::<usize>()
        .unwrap_or(0);
    match (stage, layer) {
        ("e1" | "e2", "dense") => (1, 0),
        ("e1" | "e2", _) => (0, digit),
        ("g1" | "g2", "dense") => (2, 0),
        ("g1" | "g2", _) => (3, digit),
        ("d_e", _) => (4, digit),
        _ => (5, if layer == "dense" { 99 } else { digit }),
    }
}

/// Stacks label vectors into a `[N, dim]` tensor.
pub fn label_batch<T: Scalar>(labels: &[&crate::labels::LabelVector]) -> Result<Tensor<T>> {
    let first = labels.first().ok_or_else(|| Error::Shape("empty label batch".into()))?;
    let dim = first.dim();
    let mut data = Vec::with_capacity(labels.len() * dim);
    for l in labels {
        if l.dim() != dim {
            return Err(Error::Shape("labels in one batch must share a mode".into()));
        }
        data.extend(l.values().iter().map(|&v| T::from_f64(v)));
    }
    Tensor::new(&[labels.len(), dim], data)
}
