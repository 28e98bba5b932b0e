//! Bundled topologies with seeded random weights.
//!
//! MobileNetV1 and MobileNetV2 use the layer dimensions of their original
//! definitions at 224x224x3. The IR has no elementwise add, so the residual
//! connections of MobileNetV2 are omitted; they carry no multipliers and do
//! not change any layer's shape or rate.

use super::{LayerSpec, ModelGraph, Padding};

/// Shift that keeps random-weight activations in a useful 8-bit range:
/// the accumulator's standard deviation grows with `sqrt(terms)`.
pub fn default_shift(terms: u64) -> u32 {
    let log2 = 64 - terms.max(1).leading_zeros() - 1;
    7 + log2.div_ceil(2)
}

struct Chain {
    channels: u64,
    layers: Vec<LayerSpec>,
}

impl Chain {
    fn new(channels: u64) -> Self {
        Chain {
            channels,
            layers: Vec::new(),
        }
    }

    fn push(&mut self, layer: LayerSpec, relu: bool) {
        let shift = if layer.kind.is_pool() {
            0
        } else {
            default_shift(layer.accumulated_terms())
        };
        self.channels = layer.out_channels;
        self.layers.push(layer.with_shift(shift).with_relu(relu));
    }

    fn conv(&mut self, out: u64, k: usize, stride: usize) {
        self.push(
            LayerSpec::conv(self.channels, out, k, stride, Padding::Same),
            true,
        );
    }

    fn depthwise(&mut self, stride: usize) {
        self.push(
            LayerSpec::depthwise(self.channels, 1, 3, stride, Padding::Same),
            true,
        );
    }

    fn pointwise(&mut self, out: u64, relu: bool) {
        self.push(LayerSpec::pointwise(self.channels, out), relu);
    }
}

pub fn mobilenet_v1(seed: u64) -> ModelGraph {
    let mut net = Chain::new(3);
    net.conv(32, 3, 2);
    let blocks: [(u64, usize); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    for (out, stride) in blocks {
        net.depthwise(stride);
        net.pointwise(out, true);
    }
    net.push(LayerSpec::avg_pool(1024, 7, 1, Padding::None), false);
    net.push(LayerSpec::fully_connected(1024, 1000), false);
    ModelGraph::build((224, 224, 3), net.layers, seed).expect("MobileNetV1 topology is valid")
}

pub fn mobilenet_v2(seed: u64) -> ModelGraph {
    let mut net = Chain::new(3);
    net.conv(32, 3, 2);
    // (expansion t, output channels c, repeats n, first stride s)
    let settings: [(u64, u64, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    for (t, c, n, s) in settings {
        for rep in 0..n {
            let stride = if rep == 0 { s } else { 1 };
            if t != 1 {
                net.pointwise(net.channels * t, true);
            }
            net.depthwise(stride);
            net.pointwise(c, false);
        }
    }
    net.pointwise(1280, true);
    net.push(LayerSpec::avg_pool(1280, 7, 1, Padding::None), false);
    net.push(LayerSpec::fully_connected(1280, 1000), false);
    ModelGraph::build((224, 224, 3), net.layers, seed).expect("MobileNetV2 topology is valid")
}

/// Three-layer model whose plans at integer rates up to 4/1 are rate matched
/// and divisible on every layer.
pub fn toy3(seed: u64) -> ModelGraph {
    let layers = vec![
        LayerSpec::conv(4, 8, 3, 1, Padding::Same)
            .with_shift(8)
            .with_relu(true),
        LayerSpec::depthwise(8, 1, 3, 1, Padding::Same).with_shift(5),
        LayerSpec::pointwise(8, 8).with_shift(6),
    ];
    ModelGraph::build((16, 16, 4), layers, seed).expect("toy model is valid")
}

/// Small model touching every layer kind; used across the test suites.
pub fn tiny_test_model(seed: u64) -> ModelGraph {
    let layers = vec![
        LayerSpec::conv(2, 4, 3, 1, Padding::Same)
            .with_shift(6)
            .with_relu(true),
        LayerSpec::depthwise(4, 2, 3, 2, Padding::Same).with_shift(6),
        LayerSpec::pointwise(8, 8).with_shift(7),
        LayerSpec::max_pool(8, 2, 2, Padding::None),
        LayerSpec::avg_pool(8, 2, 1, Padding::None),
        LayerSpec::fully_connected(8, 4).with_shift(7),
    ];
    ModelGraph::build((8, 8, 2), layers, seed).expect("tiny model is valid")
}
