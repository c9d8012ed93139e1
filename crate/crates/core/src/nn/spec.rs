use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope [`LEAKY_SLOPE`].
    LeakyRelu,
    Tanh,
    Sigmoid,
    None,
}

/// One declarative layer. Convolutional kinds carry kernel and stride; the
/// others cannot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { channels: usize, kernel: usize, stride: usize, activation: Activation },
    TransposedConv { channels: usize, kernel: usize, stride: usize, activation: Activation },
    Dense { neurons: usize, activation: Activation },
    /// conv3 → instance-norm → relu → conv3 → instance-norm, plus the skip.
    ResidualBlock { channels: usize },
    InstanceNorm,
    Activation { activation: Activation },
}

/// Shape of one sample flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureShape {
    Image { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        match *self {
            FeatureShape::Image { channels, height, width } => channels * height * width,
            FeatureShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            FeatureShape::Image { channels, height, width } => vec![channels, height, width],
            FeatureShape::Flat(n) => vec![n],
        }
    }
}

impl LayerSpec {
    pub fn conv(channels: usize, kernel: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec::Conv { channels, kernel, stride, activation }
    }

    pub fn transposed_conv(channels: usize, kernel: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec::TransposedConv { channels, kernel, stride, activation }
    }

    pub fn dense(neurons: usize, activation: Activation) -> Self {
        LayerSpec::Dense { neurons, activation }
    }

    pub fn activation(activation: Activation) -> Self {
        LayerSpec::Activation { activation }
    }

    /// Output shape for a given input shape, or an error naming the mismatch.
    pub fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape> {
        let image = |what: &str| match input {
            FeatureShape::Image { channels, height, width } => Ok((channels, height, width)),
            FeatureShape::Flat(_) => Err(Error::InvalidProfile(format!("{what} needs an image input, got {input:?}"))),
        };
        match *self {
            LayerSpec::Conv { channels, kernel, stride, .. } => {
                let (_, h, w) = image("conv")?;
                check_positive(&[channels, kernel, stride])?;
                let pad = kernel / 2;
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(Error::InvalidProfile(format!("kernel {kernel} larger than {h}x{w} input")));
                }
                Ok(FeatureShape::Image {
                    channels,
                    height: (h + 2 * pad - kernel) / stride + 1,
                    width: (w + 2 * pad - kernel) / stride + 1,
                })
            }
            LayerSpec::TransposedConv { channels, kernel, stride, .. } => {
                let (_, h, w) = image("transposed_conv")?;
                check_positive(&[channels, kernel, stride])?;
                let (pad, out_pad) = (kernel / 2, stride - 1);
                let span = |d: usize| ((d - 1) * stride + kernel + out_pad).checked_sub(2 * pad).filter(|&v| v > 0);
                match (span(h), span(w)) {
                    (Some(height), Some(width)) => Ok(FeatureShape::Image { channels, height, width }),
                    _ => Err(Error::InvalidProfile(format!("transposed conv yields empty output from {h}x{w}"))),
                }
            }
            LayerSpec::Dense { neurons, .. } => {
                check_positive(&[neurons])?;
                Ok(FeatureShape::Flat(neurons))
            }
            LayerSpec::ResidualBlock { channels } => {
                let (c, _, _) = image("residual_block")?;
                if c != channels {
                    return Err(Error::InvalidProfile(format!(
                        "residual block declares {channels} channels but receives {c}"
                    )));
                }
                Ok(input)
            }
            LayerSpec::InstanceNorm => image("instance_norm").map(|_| input),
            LayerSpec::Activation { .. } => Ok(input),
        }
    }

    /// Scalar parameter count for this layer given its input shape, counting
    /// a bias for every convolution and dense layer. Residual-block
    /// convolutions feed instance norms and carry no bias.
    pub fn parameter_count(&self, input: FeatureShape) -> Result<usize> {
        Ok(match *self {
            LayerSpec::Conv { channels, kernel, .. } | LayerSpec::TransposedConv { channels, kernel, .. } => {
                let in_c = match input {
                    FeatureShape::Image { channels, .. } => channels,
                    FeatureShape::Flat(_) => return Err(Error::InvalidProfile("conv on flat input".into())),
                };
                in_c * channels * kernel * kernel + channels
            }
            LayerSpec::Dense { neurons, .. } => input.len() * neurons + neurons,
            LayerSpec::ResidualBlock { channels } => 2 * channels * channels * 9,
            LayerSpec::InstanceNorm | LayerSpec::Activation { .. } => 0,
        })
    }
}

fn check_positive(values: &[usize]) -> Result<()> {
    if values.iter().any(|&v| v == 0) {
        return Err(Error::InvalidProfile(format!("zero in layer dimensions {values:?}")));
    }
    Ok(())
}

/// Shapes after each layer of a stack, starting from `input`.
pub fn infer_shapes(layers: &[LayerSpec], input: FeatureShape) -> Result<Vec<FeatureShape>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input;
    for (i, layer) in layers.iter().enumerate() {
        cur = layer
            .output_shape(cur)
            .map_err(|e| Error::InvalidProfile(format!("layer {i}: {e}")))?;
        shapes.push(cur);
    }
    Ok(shapes)
}

/// Parameter count of a built stack. A convolution followed directly by an
/// instance norm has no bias.
pub fn stack_parameter_count(layers: &[LayerSpec], input: FeatureShape) -> Result<usize> {
    let mut cur = input;
    let mut total = 0;
    for (i, layer) in layers.iter().enumerate() {
        total += layer.parameter_count(cur)?;
        if let (LayerSpec::Conv { channels, .. } | LayerSpec::TransposedConv { channels, .. }, Some(LayerSpec::InstanceNorm)) =
            (layer, layers.get(i + 1))
        {
            total -= channels;
        }
        cur = layer.output_shape(cur)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Full,
    Desk,
    Custom,
}

/// Complete topology for every network the pipeline builds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: ProfileName,
    /// `[channels, height, width]`.
    pub image: [usize; 3],
    /// Downsampling convolutions of the generator.
    pub encoder: Vec<LayerSpec>,
    /// Residual trunk length. The first `ceil(n/2)` blocks close the encoder
    /// (so the shared latent sits mid-trunk) and the rest open the decoder.
    pub residual_blocks: usize,
    /// Upsampling layers of the generator, ending in the image.
    pub decoder: Vec<LayerSpec>,
    /// Ends in `dense(1, sigmoid)`.
    pub discriminator: Vec<LayerSpec>,
    /// Feature extractor; the identity head is appended at build time.
    pub reid_backbone: Vec<LayerSpec>,
    pub verification_tap: usize,
    pub identification_tap: usize,
}

impl NetworkProfile {
    /// 3×16×16 profile used by tests and default runs.
    pub fn desk() -> Self {
        use Activation::*;
        let c = LayerSpec::conv;
        let t = LayerSpec::transposed_conv;
        Self {
            name: ProfileName::Desk,
            image: [3, 16, 16],
            encoder: vec![
                c(16, 3, 1, None),
                LayerSpec::InstanceNorm,
                LayerSpec::activation(Relu),
                c(32, 3, 2, None),
                LayerSpec::InstanceNorm,
                LayerSpec::activation(Relu),
                c(32, 3, 2, None),
                LayerSpec::InstanceNorm,
                LayerSpec::activation(Relu),
            ],
            residual_blocks: 2,
            decoder: vec![
                t(32, 3, 2, None),
                LayerSpec::InstanceNorm,
                LayerSpec::activation(Relu),
                t(16, 3, 2, None),
                LayerSpec::InstanceNorm,
                LayerSpec::activation(Relu),
                t(3, 3, 1, Tanh),
            ],
            discriminator: vec![
                c(16, 3, 2, LeakyRelu),
                c(32, 3, 2, LeakyRelu),
                LayerSpec::dense(1, Sigmoid),
            ],
            reid_backbone: vec![
                c(16, 3, 2, Relu),
                c(32, 3, 2, Relu),
                c(32, 3, 1, Relu),
                LayerSpec::dense(128, None),
                LayerSpec::activation(Relu),
                LayerSpec::dense(64, Relu),
            ],
            verification_tap: 3,
            identification_tap: 5,
        }
    }

    /// 256×256 profile with the three-convolution encoder, nine-block
    /// residual trunk and mirrored decoder. Layer widths are configurable;
    /// these are the conventional ones for this generator family.
    pub fn full() -> Self {
        use Activation::*;
        let c = LayerSpec::conv;
        let t = LayerSpec::transposed_conv;
        let norm_relu = |l: LayerSpec| [l, LayerSpec::InstanceNorm, LayerSpec::activation(Relu)];
        let mut encoder = Vec::new();
        for l in [c(64, 7, 1, None), c(128, 3, 2, None), c(256, 3, 2, None)] {
            encoder.extend(norm_relu(l));
        }
        let mut decoder = Vec::new();
        for l in [t(128, 3, 2, None), t(64, 3, 2, None)] {
            decoder.extend(norm_relu(l));
        }
        decoder.push(c(3, 7, 1, Tanh));
        Self {
            name: ProfileName::Full,
            image: [3, 256, 256],
            encoder,
            residual_blocks: 9,
            decoder,
            discriminator: vec![
                c(64, 3, 2, LeakyRelu),
                c(128, 3, 2, LeakyRelu),
                c(256, 3, 2, LeakyRelu),
                c(512, 3, 2, LeakyRelu),
                LayerSpec::dense(1, Sigmoid),
            ],
            reid_backbone: vec![
                c(64, 11, 4, Relu),
                c(192, 5, 2, Relu),
                c(384, 3, 2, Relu),
                c(256, 3, 2, Relu),
                c(256, 3, 2, Relu),
                LayerSpec::dense(1024, None),
                LayerSpec::activation(Relu),
                LayerSpec::dense(1024, Relu),
            ],
            verification_tap: 5,
            identification_tap: 7,
        }
    }

    pub fn image_shape(&self) -> FeatureShape {
        FeatureShape::Image { channels: self.image[0], height: self.image[1], width: self.image[2] }
    }

    pub fn encoder_residual_blocks(&self) -> usize {
        self.residual_blocks - self.residual_blocks / 2
    }

    pub fn decoder_residual_blocks(&self) -> usize {
        self.residual_blocks / 2
    }

    fn trunk_channels(&self) -> Result<usize> {
        match infer_shapes(&self.encoder, self.image_shape())?.last() {
            Some(FeatureShape::Image { channels, .. }) => Ok(*channels),
            other => Err(Error::InvalidProfile(format!("encoder must end in an image, got {other:?}"))),
        }
    }

    /// Full encoder stack including its share of the residual trunk.
    pub fn encoder_layers(&self) -> Result<Vec<LayerSpec>> {
        let ch = self.trunk_channels()?;
        let mut layers = self.encoder.clone();
        layers.extend((0..self.encoder_residual_blocks()).map(|_| LayerSpec::ResidualBlock { channels: ch }));
        Ok(layers)
    }

    /// Full decoder stack including its share of the residual trunk.
    pub fn decoder_layers(&self) -> Result<Vec<LayerSpec>> {
        let ch = self.trunk_channels()?;
        let mut layers: Vec<LayerSpec> =
            (0..self.decoder_residual_blocks()).map(|_| LayerSpec::ResidualBlock { channels: ch }).collect();
        layers.extend(self.decoder.iter().cloned());
        Ok(layers)
    }

    /// Per-sample latent shape produced by every domain's encoder.
    pub fn latent_shape(&self) -> Result<FeatureShape> {
        let shapes = infer_shapes(&self.encoder_layers()?, self.image_shape())?;
        shapes
            .last()
            .copied()
            .ok_or_else(|| Error::InvalidProfile("empty encoder".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.iter().any(|&d| d == 0) {
            return Err(Error::InvalidProfile(format!("image shape {:?}", self.image)));
        }
        let latent = self.latent_shape()?;
        let out = infer_shapes(&self.decoder_layers()?, latent)?;
        if out.last() != Some(&self.image_shape()) {
            return Err(Error::InvalidProfile(format!(
                "decoder maps latent {latent:?} to {:?}, expected the image {:?}",
                out.last(),
                self.image_shape()
            )));
        }
        let disc = infer_shapes(&self.discriminator, self.image_shape())?;
        if disc.last() != Some(&FeatureShape::Flat(1))
            || !matches!(self.discriminator.last(), Some(LayerSpec::Dense { activation: Activation::Sigmoid, .. }))
        {
            return Err(Error::InvalidProfile("discriminator must end in dense(1, sigmoid)".into()));
        }
        infer_shapes(&self.reid_backbone, self.image_shape())?;
        if self.identification_tap >= self.reid_backbone.len() {
            return Err(Error::InvalidProfile(format!(
                "identification tap {} out of range for {} backbone layers",
                self.identification_tap,
                self.reid_backbone.len()
            )));
        }
        if self.verification_tap >= self.identification_tap {
            return Err(Error::InvalidProfile(format!(
                "verification tap {} must precede identification tap {}",
                self.verification_tap, self.identification_tap
            )));
        }
        Ok(())
    }
}
