//! Bit-exact reference inference.
//!
//! 8-bit activations and weights, 32-bit accumulation, then an arithmetic
//! right shift by the layer's `requant_shift`, saturation to `[-128, 127]`
//! and an optional ReLU. Pooling windows skip padded cells; average pooling
//! divides the window sum by the number of real cells (truncating toward
//! zero) before the shift.

use super::{axis_geometry, LayerKind, LayerSpec, ModelGraph, Tensor8};
use crate::error::{Error, Result};

#[inline]
pub fn requantize(acc: i32, shift: u32, relu: bool) -> i8 {
    let v = (acc >> shift).clamp(i8::MIN as i32, i8::MAX as i32);
    if relu {
        v.max(0) as i8
    } else {
        v as i8
    }
}

/// Run every layer, returning one activation tensor (`[h, w, c]`) per layer.
pub fn golden_forward(graph: &ModelGraph, image: &Tensor8) -> Result<Vec<Tensor8>> {
    let expected = [graph.input_h, graph.input_w, graph.input_channels];
    if image.dims != expected {
        return Err(Error::Dimension(format!(
            "image dims {:?}, model expects {:?}",
            image.dims, expected
        )));
    }
    let mut outputs: Vec<Tensor8> = Vec::with_capacity(graph.layers.len());
    for (i, layer) in graph.layers.iter().enumerate() {
        let input = outputs.last().unwrap_or(image);
        let out = forward_layer(layer, input, graph.shapes[i]);
        outputs.push(out);
    }
    Ok(outputs)
}

fn forward_layer(layer: &LayerSpec, input: &Tensor8, out_shape: (usize, usize, usize)) -> Tensor8 {
    let (ih, iw, ic) = (input.dims[0], input.dims[1], input.dims[2]);
    let (oh, ow, oc) = out_shape;
    let (_, pad_top) =
        axis_geometry(ih, layer.kernel_h, layer.stride, layer.padding).expect("shape inferred");
    let (_, pad_left) =
        axis_geometry(iw, layer.kernel_w, layer.stride, layer.padding).expect("shape inferred");
    let cm = layer.channel_multiplier as usize;
    let mut data = Vec::with_capacity(oh * ow * oc);

    for oy in 0..oh {
        for ox in 0..ow {
            let y0 = (oy * layer.stride) as isize - pad_top as isize;
            let x0 = (ox * layer.stride) as isize - pad_left as isize;
            // in-bounds kernel cells of this window
            let cells: Vec<(usize, usize, usize, usize)> = (0..layer.kernel_h)
                .flat_map(|r| (0..layer.kernel_w).map(move |c| (r, c)))
                .filter_map(|(r, c)| {
                    let y = y0 + r as isize;
                    let x = x0 + c as isize;
                    (y >= 0 && x >= 0 && (y as usize) < ih && (x as usize) < iw)
                        .then_some((r, c, y as usize, x as usize))
                })
                .collect();
            for o in 0..oc {
                let acc: i32 = match layer.kind {
                    LayerKind::Conv | LayerKind::PointwiseConv | LayerKind::FullyConnected => cells
                        .iter()
                        .map(|&(r, c, y, x)| {
                            (0..ic)
                                .map(|i| {
                                    input.at3(y, x, i) as i32 * layer.weight(o, r, c, i) as i32
                                })
                                .sum::<i32>()
                        })
                        .sum(),
                    LayerKind::DepthwiseConv => cells
                        .iter()
                        .map(|&(r, c, y, x)| {
                            input.at3(y, x, o / cm) as i32 * layer.weight(o, r, c, 0) as i32
                        })
                        .sum(),
                    LayerKind::MaxPool => cells
                        .iter()
                        .map(|&(_, _, y, x)| input.at3(y, x, o) as i32)
                        .max()
                        .unwrap_or(0),
                    LayerKind::AvgPool => {
                        let sum: i32 = cells
                            .iter()
                            .map(|&(_, _, y, x)| input.at3(y, x, o) as i32)
                            .sum();
                        sum / cells.len().max(1) as i32
                    }
                };
                data.push(requantize(acc, layer.requant_shift, layer.relu));
            }
        }
    }
    Tensor8 {
        dims: vec![oh, ow, oc],
        data,
    }
}
