use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

use super::spec::{infer_shapes, Activation, FeatureShape, LayerSpec, NetworkProfile, LEAKY_SLOPE};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;

/// The re-identification backbone is deeper in plain ReLU layers without
/// normalization; at `INIT_STD` its features vanish, so it uses He scaling.
pub const REID_INIT: Init = Init::He;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug)]
enum Layer {
    Conv { w: usize, b: Option<usize>, stride: usize, padding: usize, activation: Activation },
    TransposedConv { w: usize, b: Option<usize>, stride: usize, padding: usize, activation: Activation },
    Dense { w: usize, b: usize, activation: Activation },
    Residual { w1: usize, w2: usize },
    InstanceNorm,
    Activation(Activation),
}

/// A feed-forward stack with named parameters.
#[derive(Debug)]
pub struct Network {
    name: String,
    layers: Vec<Layer>,
    params: Vec<Param>,
    input: FeatureShape,
    output: FeatureShape,
    forward_calls: AtomicUsize,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            input: self.input,
            output: self.output,
            forward_calls: AtomicUsize::new(self.forward_calls.load(Ordering::Relaxed)),
        }
    }
}

/// Parameter leaves of one network on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Weight initializer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Zero-mean normal with a fixed standard deviation.
    Gaussian { std: f64 },
    /// Zero-mean normal with variance `2 / fan_in`.
    He,
}

impl Default for Init {
    fn default() -> Self {
        Init::Gaussian { std: INIT_STD }
    }
}

impl Init {
    fn sample(self, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
        let std = match self {
            Init::Gaussian { std } => std,
            Init::He => (2.0 / fan_in.max(1) as f64).sqrt(),
        };
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| std * rng.normal()).collect()).expect("shape")
    }
}

impl Network {
    /// Builds a stack from layer specs; weights ~ N(0, 0.02²), biases zero.
    /// Convolutions feeding an instance norm carry no bias (it would be
    /// cancelled by the mean subtraction).
    pub fn build(name: &str, layers: &[LayerSpec], input: FeatureShape, rng: &mut Rng) -> Result<Self> {
        Self::build_with_init(name, layers, input, Init::default(), rng)
    }

    pub fn build_with_init(name: &str, layers: &[LayerSpec], input: FeatureShape, init: Init, rng: &mut Rng) -> Result<Self> {
        let shapes = infer_shapes(layers, input)?;
        let mut params = Vec::new();
        let mut built = Vec::with_capacity(layers.len());
        let add = |params: &mut Vec<Param>, pname: String, value: Tensor| {
            params.push(Param { name: pname, value });
            params.len() - 1
        };
        let mut cur = input;
        for (i, spec) in layers.iter().enumerate() {
            let in_channels = match cur {
                FeatureShape::Image { channels, .. } => channels,
                FeatureShape::Flat(n) => n,
            };
            let normalized = matches!(layers.get(i + 1), Some(LayerSpec::InstanceNorm));
            let layer = match *spec {
                LayerSpec::Conv { channels, kernel, stride, activation } => {
                    let w = add(&mut params, format!("{i}.conv.weight"), init.sample(&[channels, in_channels, kernel, kernel], in_channels * kernel * kernel, rng));
                    let b = (!normalized).then(|| add(&mut params, format!("{i}.conv.bias"), Tensor::zeros(&[channels])));
                    Layer::Conv { w, b, stride, padding: kernel / 2, activation }
                }
                LayerSpec::TransposedConv { channels, kernel, stride, activation } => {
                    let w = add(&mut params, format!("{i}.tconv.weight"), init.sample(&[in_channels, channels, kernel, kernel], in_channels * kernel * kernel, rng));
                    let b = (!normalized).then(|| add(&mut params, format!("{i}.tconv.bias"), Tensor::zeros(&[channels])));
                    Layer::TransposedConv { w, b, stride, padding: kernel / 2, activation }
                }
                LayerSpec::Dense { neurons, activation } => {
                    let fan_in = cur.len();
                    let w = add(&mut params, format!("{i}.dense.weight"), init.sample(&[fan_in, neurons], fan_in, rng));
                    let b = add(&mut params, format!("{i}.dense.bias"), Tensor::zeros(&[neurons]));
                    Layer::Dense { w, b, activation }
                }
                LayerSpec::ResidualBlock { channels } => {
                    let w1 = add(&mut params, format!("{i}.res.conv1.weight"), init.sample(&[channels, channels, 3, 3], channels * 9, rng));
                    let w2 = add(&mut params, format!("{i}.res.conv2.weight"), init.sample(&[channels, channels, 3, 3], channels * 9, rng));
                    Layer::Residual { w1, w2 }
                }
                LayerSpec::InstanceNorm => Layer::InstanceNorm,
                LayerSpec::Activation { activation } => Layer::Activation(activation),
            };
            built.push(layer);
            cur = shapes[i];
        }
        Ok(Self {
            name: name.to_string(),
            layers: built,
            params,
            input,
            output: cur,
            forward_calls: AtomicUsize::new(0),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.input
    }

    pub fn output_shape(&self) -> FeatureShape {
        self.output
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of forward passes run so far (instrumentation).
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Records the parameters as tape leaves. With `trainable == false` they
    /// are constants: gradients still flow through them to the input.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect();
        Bound { vars }
    }

    /// Parameter gradients after `tape.backward`, in parameter order.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Vec<f64>> {
        bound
            .vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| {
                let g = tape.grad_slice(*v);
                if g.is_empty() {
                    vec![0.0; p.value.len()]
                } else {
                    g.to_vec()
                }
            })
            .collect()
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        if shape.len() < 2 || shape[1..] != self.input.dims()[..] {
            return Err(Error::shape(
                "network input",
                format!("{} expects (N, {:?}), got {shape:?}", self.name, self.input.dims()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        Ok(self.forward_taps(tape, bound, x, &[last])?[0])
    }

    /// Runs layers up to the largest tap and returns the output after each
    /// requested layer index.
    pub fn forward_taps(&self, tape: &mut Tape, bound: &Bound, x: Var, taps: &[usize]) -> Result<Vec<Var>> {
        self.check_input(tape, x)?;
        if let Some(bad) = taps.iter().find(|&&t| t >= self.layers.len()) {
            return Err(Error::InvalidArgument(format!("tap {bad} out of range for {} layers", self.layers.len())));
        }
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let p = |i: usize| bound.vars[i];
        let stop = taps.iter().copied().max().unwrap_or(0);
        let mut outs = vec![None; taps.len()];
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate().take(stop + 1) {
            h = match *layer {
                Layer::Conv { w, b, stride, padding, activation } => {
                    let y = tape.conv2d(h, p(w), b.map(p), stride, padding)?;
                    activate(tape, y, activation)?
                }
                Layer::TransposedConv { w, b, stride, padding, activation } => {
                    let y = tape.conv_transpose2d(h, p(w), b.map(p), stride, padding, stride - 1)?;
                    activate(tape, y, activation)?
                }
                Layer::Dense { w, b, activation } => {
                    let flat = if tape.shape(h).len() == 2 { h } else { tape.flatten(h)? };
                    let y = tape.matmul(flat, p(w))?;
                    let y = tape.add_bias(y, p(b))?;
                    activate(tape, y, activation)?
                }
                Layer::Residual { w1, w2 } => {
                    let y = tape.conv2d(h, p(w1), None, 1, 1)?;
                    let y = tape.instance_norm(y)?;
                    let y = tape.relu(y)?;
                    let y = tape.conv2d(y, p(w2), None, 1, 1)?;
                    let y = tape.instance_norm(y)?;
                    tape.add(h, y)?
                }
                Layer::InstanceNorm => tape.instance_norm(h)?,
                Layer::Activation(a) => activate(tape, h, a)?,
            };
            for (slot, &t) in outs.iter_mut().zip(taps) {
                if t == i {
                    *slot = Some(h);
                }
            }
        }
        Ok(outs.into_iter().map(|o| o.expect("every tap visited")).collect())
    }

    /// Forward pass on a private tape with frozen parameters.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(y).clone())
    }
}

pub(crate) fn activate(tape: &mut Tape, x: Var, activation: Activation) -> Result<Var> {
    match activation {
        Activation::Relu => tape.relu(x),
        Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::None => Ok(x),
    }
}

pub fn build_encoder(profile: &NetworkProfile, rng: &mut Rng) -> Result<Network> {
    profile.validate()?;
    Network::build("encoder", &profile.encoder_layers()?, profile.image_shape(), rng)
}

pub fn build_decoder(profile: &NetworkProfile, rng: &mut Rng) -> Result<Network> {
    profile.validate()?;
    Network::build("decoder", &profile.decoder_layers()?, profile.latent_shape()?, rng)
}

pub fn build_discriminator(profile: &NetworkProfile, rng: &mut Rng) -> Result<Network> {
    profile.validate()?;
    Network::build("discriminator", &profile.discriminator, profile.image_shape(), rng)
}

/// Re-ID feature extractor with a verification tap and an identity head.
///
/// All four quartet streams run through this one parameter set.
#[derive(Clone, Debug)]
pub struct ReidBackbone {
    net: Network,
    verification_tap: usize,
    identification_tap: usize,
    identities: usize,
    feature_dim: usize,
}

/// Outputs of one backbone pass.
#[derive(Clone, Copy, Debug)]
pub struct ReidOutputs {
    /// `(N, D)` features from the verification tap.
    pub features: Var,
    /// `(N, identities)` logits from the identity head.
    pub logits: Var,
}

impl ReidBackbone {
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn identities(&self) -> usize {
        self.identities
    }

    pub fn verification_tap(&self) -> usize {
        self.verification_tap
    }

    pub fn identification_tap(&self) -> usize {
        self.identification_tap
    }

    /// Length of the verification feature vector.
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<ReidOutputs> {
        let head = self.net.num_layers() - 1;
        let outs = self.net.forward_taps(tape, bound, x, &[self.verification_tap, head])?;
        let features = if tape.shape(outs[0]).len() == 2 { outs[0] } else { tape.flatten(outs[0])? };
        Ok(ReidOutputs { features, logits: outs[1] })
    }

    /// Verification-tap features on a private tape.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.net.forward_taps(&mut tape, &bound, xv, &[self.verification_tap])?[0];
        let out = if tape.shape(out).len() == 2 { out } else { tape.flatten(out)? };
        Ok(tape.value(out).clone())
    }
}

pub fn build_reid_backbone(profile: &NetworkProfile, identities: usize, rng: &mut Rng) -> Result<ReidBackbone> {
    profile.validate()?;
    if identities < 2 {
        return Err(Error::InvalidArgument(format!("identity head needs at least 2 classes, got {identities}")));
    }
    let mut layers: Vec<LayerSpec> = profile.reid_backbone[..=profile.identification_tap].to_vec();
    layers.push(LayerSpec::dense(identities, Activation::None));
    let net = Network::build_with_init("reid", &layers, profile.image_shape(), REID_INIT, rng)?;
    let feature_dim = infer_shapes(&layers, profile.image_shape())?[profile.verification_tap].len();
    Ok(ReidBackbone {
        feature_dim,
        net,
        verification_tap: profile.verification_tap,
        identification_tap: profile.identification_tap,
        identities,
    })
}
