//! Randomized small models shared by the integration suites.

#![allow(dead_code)]

use rateflow::model::{zoo, LayerSpec, ModelGraph, Padding, SplitMix64};
use rateflow::Rate;

const CHANNELS: [u64; 6] = [1, 2, 3, 4, 8, 16];

fn pick<T: Copy>(rng: &mut SplitMix64, xs: &[T]) -> T {
    xs[rng.below(xs.len() as u64) as usize]
}

fn padding(rng: &mut SplitMix64) -> Padding {
    if rng.below(2) == 0 {
        Padding::Same
    } else {
        Padding::None
    }
}

fn shifted(layer: LayerSpec, relu: bool) -> LayerSpec {
    let shift = if layer.kind.has_weights() {
        zoo::default_shift(layer.accumulated_terms())
    } else {
        0
    };
    layer.with_shift(shift).with_relu(relu)
}

/// One random layer taking `c` channels from an `h x w` map.
fn random_layer(rng: &mut SplitMix64, c: u64, h: usize, w: usize) -> LayerSpec {
    let k = pick(rng, &[1usize, 2, 3]).min(h).min(w);
    let s = pick(rng, &[1usize, 2]);
    let relu = rng.below(2) == 0;
    let layer = match rng.below(5) {
        0 => LayerSpec::conv(c, pick(rng, &CHANNELS), k, s, padding(rng)),
        1 => LayerSpec::depthwise(c, pick(rng, &[1u64, 2]), k, s, padding(rng)),
        2 => LayerSpec::pointwise(c, pick(rng, &CHANNELS)),
        3 => LayerSpec::max_pool(c, k.max(2).min(h).min(w), s, padding(rng)),
        _ => LayerSpec::avg_pool(c, k.max(2).min(h).min(w), s, padding(rng)),
    };
    shifted(layer, relu)
}

/// A random chain of 2 to 4 layers, sometimes ending in a global average
/// pool and a classifier.
pub fn random_model(seed: u64) -> ModelGraph {
    let mut rng = SplitMix64::new(seed);
    loop {
        let h = 3 + rng.below(6) as usize;
        let w = 3 + rng.below(6) as usize;
        let c = pick(&mut rng, &CHANNELS);
        let depth = 2 + rng.below(3) as usize;
        let mut layers = Vec::new();
        let (mut ch, mut mh, mut mw) = (c, h, w);
        for _ in 0..depth {
            let l = random_layer(&mut rng, ch, mh, mw);
            let probe = ModelGraph::build((mh, mw, ch as usize), vec![l.clone()], 1);
            let Ok(probe) = probe else { continue };
            let (oh, ow, oc) = probe.output_shape();
            (mh, mw, ch) = (oh, ow, oc as u64);
            layers.push(l);
        }
        if layers.is_empty() {
            continue;
        }
        if rng.below(3) == 0 {
            layers.push(LayerSpec::avg_pool(
                ch,
                mh.min(mw),
                mh.min(mw),
                Padding::None,
            ));
            layers.push(shifted(
                LayerSpec::fully_connected(ch, pick(&mut rng, &CHANNELS)),
                false,
            ));
        }
        if let Ok(g) = ModelGraph::build((h, w, c as usize), layers, seed) {
            return g;
        }
    }
}

/// Input rate for `graph` that needs `pixels` lanes on the first layer.
/// Even seeds give rates every layer can match exactly.
pub fn rate_for(graph: &ModelGraph, pixels: u64, seed: u64) -> Rate {
    let c = graph.input_channels as u64;
    if pixels > 1 {
        return Rate::integer(c * pixels);
    }
    let mut rng = SplitMix64::new(seed ^ 0xABCD);
    if seed.is_multiple_of(2) {
        return Rate::integer(c);
    }
    let den = 1 + rng.below(8);
    let num = 1 + rng.below(c * den);
    Rate::new(num, den).unwrap()
}
