use serde::Serialize;

use super::{LayerImpl, Plan};
use crate::error::{Error, Result};
use crate::kpu::{live_variants, WindowGeometry};
use crate::model::{LayerKind, ModelGraph};
use crate::rate::Rate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerResources {
    pub layer: usize,
    pub kind: LayerKind,
    /// Instantiated KPU variants (1 for FCU-style layers).
    pub variants: u64,
    pub multipliers: u64,
    pub adders: u64,
    pub weight_words: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResourceEstimate {
    pub multipliers: u64,
    pub adders: u64,
    pub weight_words: u64,
    pub layers: Vec<LayerResources>,
}

/// Multiplier, adder and weight-storage counts.
///
/// Sliding-window layers instantiate `kernel_h * kernel_w` multipliers per
/// KPU, `j` KPUs per MAC unit, one set of units per live variant. FCU-style
/// layers have `j` multipliers per FCU. Adders are counted as the inputs a
/// reduction tree must absorb: every product except one per emitted result.
pub fn estimate_resources(graph: &ModelGraph, impls: &[LayerImpl]) -> Result<ResourceEstimate> {
    if impls.len() != graph.layers.len() {
        return Err(Error::PlanMismatch(format!(
            "{} layer implementations for {} layers",
            impls.len(),
            graph.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(impls.len());
    for (i, (layer, imp)) in graph.layers.iter().zip(impls).enumerate() {
        let variants = if layer.kind.is_fcu_style() {
            1
        } else {
            let (h, w, _) = graph.input_shape(i);
            let geom = WindowGeometry::new(
                h,
                w,
                layer.kernel_h,
                layer.kernel_w,
                layer.stride,
                layer.padding,
                imp.pixels as usize,
            )?;
            live_variants(&geom).into_iter().filter(|&l| l).count() as u64
        };
        let area = layer.kernel_area() as u64;
        let (multipliers, outputs) = match layer.kind {
            LayerKind::Conv => (
                variants * area * imp.j * imp.unit_count,
                variants * imp.unit_count,
            ),
            LayerKind::DepthwiseConv => (
                variants * area * imp.j * imp.unit_count,
                variants * imp.unit_count * imp.j,
            ),
            LayerKind::PointwiseConv | LayerKind::FullyConnected => {
                (imp.j * imp.unit_count, imp.unit_count)
            }
            LayerKind::MaxPool | LayerKind::AvgPool => (0, 0),
        };
        layers.push(LayerResources {
            layer: i,
            kind: layer.kind,
            variants,
            multipliers,
            adders: multipliers.saturating_sub(outputs),
            weight_words: layer.weights.as_ref().map_or(0, |w| w.len() as u64),
        });
    }
    Ok(ResourceEstimate {
        multipliers: layers.iter().map(|l| l.multipliers).sum(),
        adders: layers.iter().map(|l| l.adders).sum(),
        weight_words: layers.iter().map(|l| l.weight_words).sum(),
        layers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Throughput {
    /// Cycles between frames, rounded up when the rate does not divide the frame.
    pub cycles_per_frame: u64,
    pub exact_cycles_per_frame: Rate,
    pub fps: f64,
    pub latency_lower_bound_cycles: u64,
}

/// Closed-form frame interval, FPS at `f_clk_mhz`, and a latency bound
/// counting line-buffer fill and one configuration cycle per layer.
pub fn estimate_throughput(graph: &ModelGraph, plan: &Plan, f_clk_mhz: f64) -> Result<Throughput> {
    if !(f_clk_mhz > 0.0 && f_clk_mhz.is_finite()) {
        return Err(Error::Validation(format!(
            "clock {f_clk_mhz} MHz must be positive"
        )));
    }
    let exact = Rate::integer(graph.input_features())
        .checked_div(plan.input_rate)
        .ok_or_else(|| Error::Rate("input rate must be positive".into()))?;
    let cycles = exact.ceil().max(1);
    let mut fill = 0u64;
    for (i, (layer, (imp, rates))) in graph
        .layers
        .iter()
        .zip(plan.impls.iter().zip(&plan.profile.layers))
        .enumerate()
    {
        let lead_pixels = if layer.kind.is_fcu_style() {
            0
        } else {
            let (h, w, _) = graph.input_shape(i);
            let geom = WindowGeometry::new(
                h,
                w,
                layer.kernel_h,
                layer.kernel_w,
                layer.stride,
                layer.padding,
                imp.pixels as usize,
            )?;
            geom.anchor(0, 0) as u64
        };
        let lead = Rate::integer(lead_pixels * layer.in_channels) / rates.input;
        fill += lead.ceil() + imp.configs;
    }
    Ok(Throughput {
        cycles_per_frame: cycles,
        exact_cycles_per_frame: exact,
        fps: f_clk_mhz * 1e6 / cycles as f64,
        latency_lower_bound_cycles: cycles + fill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dse::{plan_network, select_impl, Strategy};
    use crate::model::{zoo, LayerSpec, Padding};
    use proptest::prelude::*;

    fn r(n: u64, d: u64) -> Rate {
        Rate::new(n, d).unwrap()
    }

    fn single(layer: LayerSpec, input: (usize, usize, usize), imp: LayerImpl) -> LayerResources {
        let g = ModelGraph::build(input, vec![layer], 1).unwrap();
        estimate_resources(&g, &[imp]).unwrap().layers.remove(0)
    }

    #[test]
    fn fully_connected_count() {
        let imp = select_impl(32, 64, r(1, 8), LayerKind::FullyConnected).unwrap();
        assert_eq!((imp.j, imp.h), (8, 64));
        let res = single(LayerSpec::fully_connected(32, 64), (1, 1, 32), imp);
        assert_eq!(res.multipliers, 8);
        assert_eq!(res.adders, 7);
        assert_eq!(res.weight_words, 32 * 64);
    }

    #[test]
    fn first_conv_count() {
        let imp = select_impl(3, 32, r(3, 32), LayerKind::Conv).unwrap();
        let res = single(LayerSpec::conv(3, 32, 3, 1, Padding::Same), (8, 8, 3), imp);
        assert_eq!(res.multipliers, 27);
    }

    #[test]
    fn stride_two_elision_keeps_count() {
        let layer = || LayerSpec::conv(3, 8, 3, 2, Padding::Same);
        let one = select_impl(3, 8, r(3, 1), LayerKind::Conv).unwrap();
        let two = select_impl(3, 8, r(6, 1), LayerKind::Conv).unwrap();
        assert_eq!(two.pixels, 2);
        let a = single(layer(), (8, 8, 3), one);
        let b = single(layer(), (8, 8, 3), two);
        assert_eq!(b.variants, 1);
        assert_eq!(a.multipliers, b.multipliers);
        // stride 1 needs both variants
        let c = single(LayerSpec::conv(3, 8, 3, 1, Padding::Same), (8, 8, 3), two);
        assert_eq!(c.multipliers, 2 * a.multipliers);
    }

    #[test]
    fn pools_and_depthwise() {
        let imp = select_impl(8, 8, r(2, 1), LayerKind::MaxPool).unwrap();
        let res = single(LayerSpec::max_pool(8, 2, 2, Padding::None), (4, 4, 8), imp);
        assert_eq!((res.multipliers, res.weight_words), (0, 0));
        let imp = select_impl(8, 8, r(2, 1), LayerKind::DepthwiseConv).unwrap();
        let res = single(
            LayerSpec::depthwise(8, 1, 3, 1, Padding::Same),
            (4, 4, 8),
            imp,
        );
        // two KPUs of nine multipliers, each emitting its own result
        assert_eq!((res.multipliers, res.adders), (18, 16));
    }

    #[test]
    fn frame_interval_and_fps() {
        let g = zoo::mobilenet_v2(1);
        let plan = plan_network(&g, r(6, 1), Strategy::Proposed).unwrap();
        let t = estimate_throughput(&g, &plan, 403.71).unwrap();
        assert_eq!(t.cycles_per_frame, 25_088);
        assert!((t.fps - 16_091.7).abs() < 1.0, "{}", t.fps);
        assert!(t.latency_lower_bound_cycles > t.cycles_per_frame);
        let plan = plan_network(&g, r(3, 32), Strategy::Proposed).unwrap();
        let t = estimate_throughput(&g, &plan, 353.48).unwrap();
        assert_eq!(t.cycles_per_frame, 1_605_632);
        assert!((t.fps - 220.15).abs() < 0.1, "{}", t.fps);
    }

    #[test]
    fn whole_frame_per_cycle() {
        let g = ModelGraph::build((2, 2, 3), vec![LayerSpec::pointwise(3, 3)], 1).unwrap();
        let plan = plan_network(&g, Rate::integer(12), Strategy::Proposed).unwrap();
        assert_eq!(
            estimate_throughput(&g, &plan, 100.0)
                .unwrap()
                .cycles_per_frame,
            1
        );
        assert!(estimate_throughput(&g, &plan, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn multipliers_grow_with_rate(
            d_in in 1u64..=32, d_out in 1u64..=32, n in 1u64..=40, d in 1u64..=16, k in 1usize..=3
        ) {
            let conv = || LayerSpec::conv(d_in, d_out, k, 1, Padding::Same);
            let g = ModelGraph::build((4, 4, d_in as usize), vec![conv()], 1).unwrap();
            let lo = r(n, d);
            let hi = r(n + 1, d);
            let count = |t: Rate| {
                let imp = select_impl(d_in, d_out, t, LayerKind::Conv).unwrap();
                estimate_resources(&g, &[imp]).unwrap().multipliers
            };
            prop_assert!(count(lo) <= count(hi));
        }
    }
}
