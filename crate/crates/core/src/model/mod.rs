//! CNN model intermediate representation.
//!
//! A [`ModelGraph`] is an ordered chain of [`LayerSpec`]s over a single
//! input feature map. Feature maps are stored height-major, then width, then
//! channel (channel innermost), which is also the order pixels arrive on the
//! accelerator's input stream.

mod golden;
mod io;
mod tensor;
pub mod zoo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use golden::{golden_forward, requantize};
pub use io::{load_model, save_model, LayerDef, ModelFile};
pub use tensor::{SplitMix64, Tensor8};

/// Default seed for generated weights and images.
pub const DEFAULT_SEED: u64 = 0x5EED;

/// Products per output value above which a 32-bit accumulator could overflow.
pub const MAX_ACCUMULATED_TERMS: u64 = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    FullyConnected,
    MaxPool,
    AvgPool,
}

impl LayerKind {
    /// Layers built from fully connected units rather than KPUs.
    pub fn is_fcu_style(self) -> bool {
        matches!(self, LayerKind::PointwiseConv | LayerKind::FullyConnected)
    }

    /// Layers whose outputs depend on a single input channel.
    pub fn is_channelwise(self) -> bool {
        matches!(
            self,
            LayerKind::DepthwiseConv | LayerKind::MaxPool | LayerKind::AvgPool
        )
    }

    pub fn is_pool(self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::AvgPool)
    }

    pub fn has_weights(self) -> bool {
        !self.is_pool()
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise_conv",
            LayerKind::PointwiseConv => "pointwise_conv",
            LayerKind::FullyConnected => "fully_connected",
            LayerKind::MaxPool => "max_pool",
            LayerKind::AvgPool => "avg_pool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    None,
    #[serde(alias = "zero_same")]
    Same,
}

/// Output extent and leading pad along one spatial axis.
///
/// `Same` padding follows the usual convention: `ceil(in / stride)` outputs,
/// with the odd pad cell (if any) placed after the map.
pub fn axis_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    if input == 0 || kernel == 0 || stride == 0 {
        return None;
    }
    match padding {
        Padding::None => {
            if input < kernel {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: u64,
    pub out_channels: u64,
    pub channel_multiplier: u64,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub requant_shift: u32,
    pub relu: bool,
    /// `None` for pooling layers.
    pub weights: Option<Tensor8>,
}

impl LayerSpec {
    fn base(
        kind: LayerKind,
        in_channels: u64,
        out_channels: u64,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        LayerSpec {
            kind,
            in_channels,
            out_channels,
            channel_multiplier: 1,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            requant_shift: 0,
            relu: false,
            weights: None,
        }
    }

    pub fn conv(
        in_channels: u64,
        out_channels: u64,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        Self::base(
            LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        )
    }

    pub fn depthwise(
        channels: u64,
        multiplier: u64,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        let mut l = Self::base(
            LayerKind::DepthwiseConv,
            channels,
            channels * multiplier,
            kernel,
            stride,
            padding,
        );
        l.channel_multiplier = multiplier;
        l
    }

    pub fn pointwise(in_channels: u64, out_channels: u64) -> Self {
        Self::base(
            LayerKind::PointwiseConv,
            in_channels,
            out_channels,
            1,
            1,
            Padding::None,
        )
    }

    pub fn fully_connected(in_channels: u64, out_channels: u64) -> Self {
        Self::base(
            LayerKind::FullyConnected,
            in_channels,
            out_channels,
            1,
            1,
            Padding::None,
        )
    }

    pub fn max_pool(channels: u64, kernel: usize, stride: usize, padding: Padding) -> Self {
        Self::base(
            LayerKind::MaxPool,
            channels,
            channels,
            kernel,
            stride,
            padding,
        )
    }

    pub fn avg_pool(channels: u64, kernel: usize, stride: usize, padding: Padding) -> Self {
        Self::base(
            LayerKind::AvgPool,
            channels,
            channels,
            kernel,
            stride,
            padding,
        )
    }

    pub fn with_shift(mut self, shift: u32) -> Self {
        self.requant_shift = shift;
        self
    }

    pub fn with_relu(mut self, relu: bool) -> Self {
        self.relu = relu;
        self
    }

    pub fn with_weights(mut self, weights: Tensor8) -> Self {
        self.weights = Some(weights);
        self
    }

    /// The `d_out` that bounds `h`: the channel multiplier for channelwise
    /// layers, the output channel count otherwise.
    pub fn neuron_limit(&self) -> u64 {
        if self.kind.is_channelwise() {
            self.channel_multiplier
        } else {
            self.out_channels
        }
    }

    pub fn kernel_area(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Expected weight tensor dimensions.
    pub fn weight_dims(&self) -> Option<Vec<usize>> {
        let (o, i) = (self.out_channels as usize, self.in_channels as usize);
        match self.kind {
            LayerKind::Conv => Some(vec![o, self.kernel_h, self.kernel_w, i]),
            LayerKind::DepthwiseConv => Some(vec![o, self.kernel_h, self.kernel_w, 1]),
            LayerKind::PointwiseConv => Some(vec![o, 1, 1, i]),
            LayerKind::FullyConnected => Some(vec![o, i]),
            LayerKind::MaxPool | LayerKind::AvgPool => None,
        }
    }

    /// Products summed into one accumulator.
    pub fn accumulated_terms(&self) -> u64 {
        let area = self.kernel_area() as u64;
        match self.kind {
            LayerKind::Conv => area * self.in_channels,
            LayerKind::DepthwiseConv | LayerKind::MaxPool | LayerKind::AvgPool => area,
            LayerKind::PointwiseConv | LayerKind::FullyConnected => self.in_channels,
        }
    }

    /// Weight of output channel `o`, kernel cell `(r, c)`, input channel `i`
    /// (`i` ignored for channelwise layers).
    #[inline]
    pub fn weight(&self, o: usize, r: usize, c: usize, i: usize) -> i8 {
        let w = self.weights.as_ref().expect("layer has weights");
        match self.kind {
            LayerKind::Conv => {
                w.data
                    [((o * self.kernel_h + r) * self.kernel_w + c) * self.in_channels as usize + i]
            }
            LayerKind::DepthwiseConv => w.data[(o * self.kernel_h + r) * self.kernel_w + c],
            LayerKind::PointwiseConv | LayerKind::FullyConnected => {
                w.data[o * self.in_channels as usize + i]
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                unreachable!("pooling layers carry no weights")
            }
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::Validation(format!(
                "layer {index} ({}): {msg}",
                self.kind.name()
            )))
        };
        if self.in_channels == 0 || self.out_channels == 0 || self.channel_multiplier == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return fail("kernel and stride must be positive".into());
        }
        if self.requant_shift > 31 {
            return fail(format!("requant_shift {} exceeds 31", self.requant_shift));
        }
        match self.kind {
            LayerKind::DepthwiseConv => {
                if self.out_channels != self.in_channels * self.channel_multiplier {
                    return fail(format!(
                        "out_channels {} != in_channels {} x channel_multiplier {}",
                        self.out_channels, self.in_channels, self.channel_multiplier
                    ));
                }
            }
            LayerKind::PointwiseConv | LayerKind::FullyConnected => {
                if self.kernel_h != 1 || self.kernel_w != 1 || self.stride != 1 {
                    return fail("kernel and stride must be 1".into());
                }
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                if self.out_channels != self.in_channels {
                    return fail("pooling must preserve the channel count".into());
                }
            }
            LayerKind::Conv => {}
        }
        if !self.kind.is_channelwise() && self.channel_multiplier != 1 {
            return fail("channel_multiplier applies to depthwise layers only".into());
        }
        if self.kind.is_pool() && self.channel_multiplier != 1 {
            return fail("channel_multiplier applies to depthwise layers only".into());
        }
        if self.accumulated_terms() > MAX_ACCUMULATED_TERMS {
            return fail(format!(
                "{} products per output exceed the 32-bit accumulator bound of {}",
                self.accumulated_terms(),
                MAX_ACCUMULATED_TERMS
            ));
        }
        match (self.weight_dims(), &self.weights) {
            (None, None) => {}
            (None, Some(_)) => return fail("pooling layers carry no weights".into()),
            (Some(_), None) => return fail("missing weights".into()),
            (Some(dims), Some(w)) => {
                if w.dims != dims {
                    return fail(format!("weight dims {:?}, expected {:?}", w.dims, dims));
                }
            }
        }
        Ok(())
    }
}

/// Ordered layer chain with inferred shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    /// `(height, width, channels)` of every layer's output.
    pub shapes: Vec<(usize, usize, usize)>,
    /// Seed used for any generated weights.
    pub seed: u64,
}

impl ModelGraph {
    /// Validate, fill missing weights from `seed`, and infer shapes.
    pub fn build(
        input: (usize, usize, usize),
        mut layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<ModelGraph> {
        let (h, w, c) = input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Validation(format!(
                "input dims {h}x{w}x{c} must be positive"
            )));
        }
        for (i, layer) in layers.iter_mut().enumerate() {
            if layer.weights.is_none() {
                if let Some(dims) = layer.weight_dims() {
                    let mut rng = SplitMix64::for_layer(seed, i);
                    layer.weights = Some(Tensor8::random(dims, &mut rng));
                }
            }
        }
        let graph = ModelGraph {
            input_h: h,
            input_w: w,
            input_channels: c,
            layers,
            shapes: Vec::new(),
            seed,
        };
        graph.validate()?;
        graph.infer_shapes()
    }

    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels as u64;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_channels != channels {
                return Err(Error::Validation(format!(
                    "layer {i} declares {} input channels but receives {channels}",
                    layer.in_channels
                )));
            }
            layer.check(i)?;
            channels = layer.out_channels;
        }
        Ok(())
    }

    /// Populate `shapes`; idempotent.
    pub fn infer_shapes(mut self) -> Result<ModelGraph> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let (mut h, mut w) = (self.input_h, self.input_w);
        for (i, layer) in self.layers.iter().enumerate() {
            let rows = axis_geometry(h, layer.kernel_h, layer.stride, layer.padding);
            let cols = axis_geometry(w, layer.kernel_w, layer.stride, layer.padding);
            let (Some((oh, _)), Some((ow, _))) = (rows, cols) else {
                return Err(Error::Shape {
                    layer: i,
                    msg: format!(
                        "{}x{} kernel does not fit a {h}x{w} input",
                        layer.kernel_h, layer.kernel_w
                    ),
                });
            };
            shapes.push((oh, ow, layer.out_channels as usize));
            h = oh;
            w = ow;
        }
        self.shapes = shapes;
        Ok(self)
    }

    /// Shape of the feature map entering `layer`.
    pub fn input_shape(&self, layer: usize) -> (usize, usize, usize) {
        if layer == 0 {
            (self.input_h, self.input_w, self.input_channels)
        } else {
            self.shapes[layer - 1]
        }
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.shapes
            .last()
            .copied()
            .unwrap_or((self.input_h, self.input_w, self.input_channels))
    }

    pub fn input_features(&self) -> u64 {
        (self.input_h * self.input_w * self.input_channels) as u64
    }

    /// Deterministic pseudorandom input image for this graph.
    pub fn random_image(&self, seed: u64) -> Tensor8 {
        let mut rng = SplitMix64::new(seed ^ 0x1A4A_6E5E_ED00_0000);
        Tensor8::random(
            vec![self.input_h, self.input_w, self.input_channels],
            &mut rng,
        )
    }
}
