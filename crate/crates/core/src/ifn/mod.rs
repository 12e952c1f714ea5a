//! Inception font network builders.

mod spec;

pub use crate::tensornet::{Mode, Network};

pub use spec::{inception_branches, ConvSpec, InceptionWidths, LayerSpec, NetworkSpec, ShapeRow};

use crate::imagecore::{resize_bilinear, GrayImage};
use crate::tensornet::{Real, Shape, Tensor};
use crate::Result;

/// Output channels of the inception module in both printed architectures.
pub const INCEPTION_CHANNELS: usize = 604;
/// Font classes of the printed architectures.
pub const FONT_CLASSES: usize = 25;

/// An inception module with its expanded branches.
#[derive(Clone, Debug, PartialEq)]
pub struct InceptionModule {
    pub layer: LayerSpec,
    pub in_channels: usize,
    pub branches: Vec<Vec<LayerSpec>>,
}

impl InceptionModule {
    pub fn out_channels(&self) -> usize {
        match &self.layer {
            LayerSpec::Inception { widths, .. } => widths.total(),
            _ => unreachable!("inception module wraps an inception layer"),
        }
    }

    /// Output shape for an input of `h × w`.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<Shape> {
        self.layer.output_shape(Shape::new(h, w, self.in_channels))
    }
}

/// Five-branch module whose widths must add up to `target` channels.
pub fn build_inception(name: &str, in_channels: usize, widths: [usize; 5], target: usize) -> Result<InceptionModule> {
    let widths = InceptionWidths::new(widths, target)?;
    Ok(InceptionModule {
        layer: LayerSpec::Inception {
            name: name.into(),
            widths,
        },
        in_channels,
        branches: inception_branches(name, &widths),
    })
}

fn conv_relu(layers: &mut Vec<LayerSpec>, layer: LayerSpec) {
    layers.push(layer);
    layers.push(LayerSpec::Relu);
}

/// Conv + two CCCP layers, each followed by ReLU.
fn mlpconv(layers: &mut Vec<LayerSpec>, stage: usize, conv: LayerSpec, width: usize) {
    conv_relu(layers, conv);
    conv_relu(layers, LayerSpec::cccp(&format!("cccp{stage}_1"), width));
    conv_relu(layers, LayerSpec::cccp(&format!("cccp{stage}_2"), width));
}

fn ifn_head(layers: &mut Vec<LayerSpec>, conv3: LayerSpec, width: usize, dropout: f64, classes: usize) {
    mlpconv(layers, 3, conv3, width);
    layers.push(LayerSpec::Dropout { rate: dropout });
    // confidence maps feed GAP directly, no activation
    layers.push(LayerSpec::conv("conv4", classes, 1, 1, 0));
    layers.push(LayerSpec::Gap);
}

/// SingleChar-IFN: 64×64×1 input, 25 font classes.
pub fn build_singlechar_ifn() -> NetworkSpec {
    let mut layers = Vec::new();
    mlpconv(&mut layers, 1, LayerSpec::conv("conv1", 96, 7, 1, 0), 96);
    layers.push(LayerSpec::pool(3, 2));
    mlpconv(&mut layers, 2, LayerSpec::conv("conv2", 256, 7, 1, 0), 256);
    layers.push(LayerSpec::pool(3, 2));
    layers.push(LayerSpec::Inception {
        name: "inception".into(),
        widths: InceptionWidths::TABLE,
    });
    ifn_head(&mut layers, LayerSpec::conv("conv3", 512, 3, 1, 1), 512, 0.5, FONT_CLASSES);
    NetworkSpec {
        input: Shape::new(64, 64, 1),
        layers,
    }
}

/// TextBlock-IFN: 128×128×1 input, stride-2 first convolution.
///
/// Shapes follow the conv-floor / pool-ceiling rules, so the second pooling
/// yields 12×12 and the rest of the stack (conv3 padded by 1, GAP) follows that
/// size.
pub fn build_textblock_ifn() -> NetworkSpec {
    let mut layers = Vec::new();
    mlpconv(&mut layers, 1, LayerSpec::conv("conv1", 96, 7, 2, 0), 96);
    layers.push(LayerSpec::pool(3, 2));
    mlpconv(&mut layers, 2, LayerSpec::conv("conv2", 256, 7, 1, 0), 256);
    layers.push(LayerSpec::pool(3, 2));
    layers.push(LayerSpec::Inception {
        name: "inception".into(),
        widths: InceptionWidths::TABLE,
    });
    ifn_head(&mut layers, LayerSpec::conv("conv3", 512, 3, 1, 1), 512, 0.5, FONT_CLASSES);
    NetworkSpec {
        input: Shape::new(128, 128, 1),
        layers,
    }
}

/// Desk-scale IFN with the same layer types and ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroConfig {
    /// Square input side.
    pub input: usize,
    pub first_kernel: usize,
    pub first_stride: usize,
    /// Number of conv+CCCP stages before the inception module (1 or 2).
    pub stages: usize,
    /// Multiplier on the base widths 16 / 32 / 8 per branch / 48.
    pub channel_scale: f64,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            input: 32,
            first_kernel: 5,
            first_stride: 1,
            stages: 2,
            channel_scale: 1.0,
            classes: 5,
            dropout: 0.5,
        }
    }
}

impl MicroConfig {
    /// Segmentation-free block model: 64×64 crops, stride-2 first layer.
    pub fn textblock(classes: usize) -> Self {
        Self {
            input: 64,
            first_stride: 2,
            classes,
            ..Self::default()
        }
    }

    fn width(&self, base: usize) -> usize {
        ((base as f64 * self.channel_scale).round() as usize).max(1)
    }
}

pub fn build_micro_ifn(cfg: &MicroConfig) -> Result<NetworkSpec> {
    let mut layers = Vec::new();
    let c1 = cfg.width(16);
    mlpconv(
        &mut layers,
        1,
        LayerSpec::conv("conv1", c1, cfg.first_kernel, cfg.first_stride, 0),
        c1,
    );
    layers.push(LayerSpec::pool(3, 2));
    if cfg.stages >= 2 {
        let c2 = cfg.width(32);
        mlpconv(&mut layers, 2, LayerSpec::conv("conv2", c2, 3, 1, 0), c2);
        layers.push(LayerSpec::pool(3, 2));
    }
    let b = cfg.width(8);
    layers.push(LayerSpec::Inception {
        name: "inception".into(),
        widths: InceptionWidths::new([b; 5], 5 * b)?,
    });
    let c3 = cfg.width(48);
    ifn_head(&mut layers, LayerSpec::conv("conv3", c3, 3, 1, 1), c3, cfg.dropout, cfg.classes);
    let spec = NetworkSpec {
        input: Shape::new(cfg.input, cfg.input, 1),
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Single-channel network input from an image, resized bilinearly when its
/// size differs from `input`.
pub fn to_input<T: Real>(img: &GrayImage, input: Shape) -> Result<Tensor<T>> {
    if input.c != 1 {
        return Err(crate::Error::Shape(format!("image input needs one channel, network takes {input}")));
    }
    if img.width() == input.w && img.height() == input.h {
        return Ok(Tensor::from_image(img));
    }
    Ok(Tensor::from_image(&resize_bilinear(img, input.w, input.h)?))
}
