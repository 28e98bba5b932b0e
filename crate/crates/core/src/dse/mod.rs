//! Per-layer implementation selection.
//!
//! A layer consumes `j` features per cycle per pixel lane and computes `h`
//! neurons (kernels) in sequence on each unit, so one unit cycles through
//! `C = h * d_in / j` weight configurations per pixel and the layer accepts
//! `P * j / h` features per cycle. The proposed strategy restricts `j` to
//! divisors of `d_in` and `h` to divisors of the neuron limit, then picks the
//! smallest `j / h` that still meets the incoming rate, preferring large `h`
//! (fewer, wider units). The legacy strategy derives the parameters from the
//! rate's numerator and denominator directly and may round.

mod plan_file;
mod resources;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpu::{derive_streaming, KpuVariantSchedule, WindowGeometry};
use crate::model::{LayerKind, LayerSpec, ModelGraph};
use crate::rate::{gcd, layer_output_rate, propagate, Rate, RateProfile};

pub use plan_file::{PlanFile, PlanLayer, PlanTotals, VariantEntry};
pub use resources::{
    estimate_resources, estimate_throughput, LayerResources, ResourceEstimate, Throughput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Proposed,
    Legacy,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Proposed => "proposed",
            Strategy::Legacy => "legacy",
        }
    }
}

/// Parameters of one layer's hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerImpl {
    /// Pixels per cycle (parallel lanes).
    pub pixels: u64,
    pub j: u64,
    pub h: u64,
    /// Weight configurations each unit cycles through per pixel.
    pub configs: u64,
    /// MAC units or FCUs; FCU banks are counted once per lane.
    pub unit_count: u64,
    pub kpus_per_unit: u64,
    pub achieved_in_rate: Rate,
    pub strategy: Strategy,
    /// Legacy data interleaving factor; reported only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interleave: Option<u64>,
}

impl LayerImpl {
    /// Build the record for `(P, j, h)` on a layer with `d_in` inputs and
    /// neuron limit `h_lim`. `j` and `h` need not divide; the last channel
    /// group and the last unit are then partially filled.
    pub fn realize(
        kind: LayerKind,
        d_in: u64,
        h_lim: u64,
        pixels: u64,
        j: u64,
        h: u64,
        strategy: Strategy,
    ) -> LayerImpl {
        let groups = d_in.div_ceil(j);
        let configs = h * groups;
        let units = h_lim.div_ceil(h);
        LayerImpl {
            pixels,
            j,
            h,
            configs,
            unit_count: if kind.is_fcu_style() {
                units * pixels
            } else {
                units
            },
            kpus_per_unit: j,
            achieved_in_rate: Rate::new(pixels * d_in, configs).expect("configs > 0"),
            strategy,
            interleave: None,
        }
    }

    /// Channel groups of `j` per pixel.
    pub fn groups(&self, d_in: u64) -> u64 {
        d_in.div_ceil(self.j)
    }

    /// Units serving one lane.
    pub fn units_per_lane(&self, kind: LayerKind) -> u64 {
        if kind.is_fcu_style() {
            self.unit_count / self.pixels
        } else {
            self.unit_count
        }
    }

    /// `j | d_in` and `h | h_lim`: every unit sees only valid data.
    pub fn is_divisible(&self, d_in: u64, h_lim: u64) -> bool {
        d_in.is_multiple_of(self.j) && h_lim.is_multiple_of(self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub j: u64,
    pub h: u64,
    pub rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub target: Rate,
    /// Ascending rate, then descending `h`.
    pub pairs: Vec<Candidate>,
}

impl CandidateSet {
    pub fn best(&self) -> Option<Candidate> {
        self.pairs.first().copied()
    }
}

/// Result of candidate enumeration: either pairs, or a request for more
/// pixel lanes because one lane cannot carry the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Candidates {
    Set(CandidateSet),
    Escalate { pixels: u64 },
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            low.push(i);
            if i * i != n {
                high.push(n / i);
            }
        }
        i += 1;
    }
    low.extend(high.into_iter().rev());
    low
}

fn check_target(target: Rate) -> Result<()> {
    if target.is_zero() {
        return Err(Error::Rate("target rate must be positive".into()));
    }
    Ok(())
}

/// All `(j, h)` with `j | d_in`, `h | h_lim` and `j / h >= target`.
pub fn candidate_set(d_in: u64, h_lim: u64, target: Rate) -> Result<Candidates> {
    check_target(target)?;
    if d_in == 0 || h_lim == 0 {
        return Err(Error::Validation("channel counts must be positive".into()));
    }
    if target > Rate::integer(d_in) {
        return Ok(Candidates::Escalate {
            pixels: target.scale(1, d_in).ceil(),
        });
    }
    let js = divisors(d_in);
    let mut pairs = Vec::new();
    for h in divisors(h_lim) {
        for &j in &js {
            let rate = Rate::new(j, h)?;
            if rate >= target {
                pairs.push(Candidate { j, h, rate });
            }
        }
    }
    pairs.sort_by(|a, b| a.rate.cmp(&b.rate).then(b.h.cmp(&a.h)));
    Ok(Candidates::Set(CandidateSet { target, pairs }))
}

/// Smallest `j / h >= target` over divisor pairs, ties to the largest `h`.
fn best_pair(d_in: u64, h_lim: u64, target: Rate) -> (u64, u64) {
    let js = divisors(d_in);
    let mut best: Option<(Rate, u64, u64)> = None;
    for h in divisors(h_lim).into_iter().rev() {
        // smallest j with j >= target * h
        let need = target.scale(h, 1);
        let Some(&j) = js.iter().find(|&&j| Rate::integer(j) >= need) else {
            continue;
        };
        let rate = Rate::new(j, h).expect("h > 0");
        if best.is_none_or(|(r, _, _)| rate < r) {
            best = Some((rate, j, h));
        }
    }
    let (_, j, h) = best.expect("(d_in, 1) always qualifies");
    (j, h)
}

/// Proposed selection.
pub fn select_impl(d_in: u64, d_out: u64, target: Rate, kind: LayerKind) -> Result<LayerImpl> {
    check_target(target)?;
    let h_lim = neuron_limit(kind, d_in, d_out)?;
    let pixels = if target > Rate::integer(d_in) {
        target.scale(1, d_in).ceil()
    } else {
        1
    };
    let lane_target = target.scale(1, pixels);
    let (j, h) = best_pair(d_in, h_lim, lane_target);
    Ok(LayerImpl::realize(
        kind,
        d_in,
        h_lim,
        pixels,
        j,
        h,
        Strategy::Proposed,
    ))
}

/// Legacy selection from the rate's numerator and denominator.
pub fn select_impl_legacy(
    d_in: u64,
    d_out: u64,
    target: Rate,
    kind: LayerKind,
) -> Result<LayerImpl> {
    check_target(target)?;
    let h_lim = neuron_limit(kind, d_in, d_out)?;
    if target > Rate::integer(d_in) {
        return Err(Error::UnsupportedByLegacy {
            layer: 0,
            target: target.to_string(),
            d_in,
        });
    }
    if kind.is_fcu_style() {
        let (j_max, h_max) = (target.num(), target.den());
        let h = divisors(d_out)
            .into_iter()
            .filter(|&h| h <= h_max)
            .max()
            .expect("1 divides d_out");
        return Ok(LayerImpl::realize(
            kind,
            d_in,
            h_lim,
            1,
            j_max,
            h,
            Strategy::Legacy,
        ));
    }
    let configs = Rate::integer(d_in)
        .checked_div(target)
        .expect("target > 0")
        .ceil()
        .min(d_in * h_lim);
    let g = gcd(d_in, configs);
    let mut imp = LayerImpl::realize(
        kind,
        d_in,
        h_lim,
        1,
        d_in / g,
        configs / g,
        Strategy::Legacy,
    );
    debug_assert_eq!(imp.configs, configs);
    imp.interleave = Some(configs.div_ceil(d_in));
    Ok(imp)
}

fn neuron_limit(kind: LayerKind, d_in: u64, d_out: u64) -> Result<u64> {
    if d_in == 0 || d_out == 0 {
        return Err(Error::Validation("channel counts must be positive".into()));
    }
    if kind.is_channelwise() {
        if !d_out.is_multiple_of(d_in) {
            return Err(Error::Validation(format!(
                "{}: {d_out} outputs is not a multiple of {d_in} inputs",
                kind.name()
            )));
        }
        Ok(d_out / d_in)
    } else {
        Ok(d_out)
    }
}

pub fn select(strategy: Strategy, layer: &LayerSpec, target: Rate) -> Result<LayerImpl> {
    let (d_in, d_out) = (layer.in_channels, layer.out_channels);
    match strategy {
        Strategy::Proposed => select_impl(d_in, d_out, target, layer.kind),
        Strategy::Legacy => select_impl_legacy(d_in, d_out, target, layer.kind),
    }
}

/// A complete network implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub strategy: Strategy,
    pub input_rate: Rate,
    pub impls: Vec<LayerImpl>,
    pub profile: RateProfile,
    /// KPU variants of every sliding-window layer; empty for FCU-style layers.
    pub schedules: Vec<Vec<KpuVariantSchedule>>,
}

impl Plan {
    /// Every layer's capacity equals the flow it receives.
    pub fn is_rate_matched(&self) -> bool {
        self.profile.layers.iter().all(|l| l.achieved == l.input)
    }

    /// Rate matched and every layer satisfies the divisibility constraints.
    pub fn is_clean(&self, graph: &ModelGraph) -> bool {
        self.is_rate_matched()
            && self
                .impls
                .iter()
                .zip(&graph.layers)
                .all(|(imp, l)| imp.is_divisible(l.in_channels, l.neuron_limit()))
    }

    pub fn escalated_layers(&self) -> Vec<usize> {
        self.impls
            .iter()
            .enumerate()
            .filter(|(_, imp)| imp.pixels > 1)
            .map(|(i, _)| i)
            .collect()
    }
}

fn with_layer(err: Error, layer: usize) -> Error {
    match err {
        Error::UnsupportedByLegacy { target, d_in, .. } => Error::UnsupportedByLegacy {
            layer,
            target,
            d_in,
        },
        Error::Shape { msg, .. } => Error::Shape { layer, msg },
        Error::Validation(msg) => Error::Validation(format!("layer {layer}: {msg}")),
        Error::Rate(msg) => Error::Rate(format!("layer {layer}: {msg}")),
        other => other,
    }
}

pub(crate) fn layer_schedules(
    graph: &ModelGraph,
    layer: usize,
    pixels: u64,
) -> Result<Vec<KpuVariantSchedule>> {
    let spec = &graph.layers[layer];
    if spec.kind.is_fcu_style() {
        return Ok(Vec::new());
    }
    let (h, w, _) = graph.input_shape(layer);
    WindowGeometry::new(
        h,
        w,
        spec.kernel_h,
        spec.kernel_w,
        spec.stride,
        spec.padding,
        pixels as usize,
    )
    .and_then(|g| derive_streaming(&g))
    .map_err(|e| with_layer(e, layer))
}

/// Select every layer in order, each against the rate the previous one emits.
pub fn plan_network(graph: &ModelGraph, input_rate: Rate, strategy: Strategy) -> Result<Plan> {
    check_target(input_rate)?;
    let mut rate = input_rate;
    let mut impls = Vec::with_capacity(graph.layers.len());
    for (i, layer) in graph.layers.iter().enumerate() {
        impls.push(select(strategy, layer, rate).map_err(|e| with_layer(e, i))?);
        rate = layer_output_rate(graph, i, rate)?;
    }
    let profile = propagate(graph, input_rate, &impls)?;
    let schedules = (0..graph.layers.len())
        .into_par_iter()
        .map(|i| layer_schedules(graph, i, impls[i].pixels))
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan {
        strategy,
        input_rate,
        impls,
        profile,
        schedules,
    })
}
