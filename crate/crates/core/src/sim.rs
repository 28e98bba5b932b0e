//! Cycle-accurate simulation of a planned accelerator.
//!
//! Every feature on every layer boundary carries the cycle at which it
//! becomes available. A source drives the input image in raster order,
//! `num` features every `den` cycles. Each layer's lanes walk their pixels in
//! order; for every pixel the `j`-wide channel groups are held for `h` cycles
//! each (one slot), during which every unit computes `h` neurons in turn. A
//! slot starts once its last feature has arrived and the previous slot is
//! done. Results are available the cycle after they are computed and leave
//! through a reorder buffer in stream order. Boundaries are unbounded FIFOs
//! without back-pressure, so evaluating the layers one after another gives
//! the same cycle numbers as stepping them all together.
//!
//! A rate-matched layer is started with enough prefill that its slots repeat
//! with the frame period from the first frame on.
//!
//! Sliding windows are computed when their anchor pixel arrives, from
//! operands routed through the layer's KPU variant (lane, delay) taps.
//! Windows not on the stride grid are computed and discarded: the units stay
//! busy, the results are filtered by a window-position counter.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::dse::{LayerImpl, Plan, Strategy};
use crate::error::{Error, Result};
use crate::kpu::{KpuVariantSchedule, WindowGeometry};
use crate::model::{
    golden_forward, requantize, LayerKind, LayerSpec, ModelGraph, Padding, Tensor8,
};
use crate::rate::Rate;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Record a per-cycle event trace.
    pub trace: bool,
    /// Skip plan validation; lets tests run deliberately broken plans.
    pub unchecked: bool,
}

/// Features in stream order (pixel-major, channel innermost) with the cycle
/// each becomes available.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureStream {
    pub channels: usize,
    pub values: Vec<i8>,
    pub times: Vec<u64>,
}

impl FeatureStream {
    pub fn pixels(&self) -> usize {
        self.values.len() / self.channels
    }

    /// Drive `frames` copies of `image` (plus `extra_pixels` of the next) at
    /// `rate` features per cycle.
    pub fn source(image: &Tensor8, pixels: usize, rate: Rate) -> FeatureStream {
        let channels = image.dims[2];
        let len = pixels * channels;
        let values = image.data.iter().copied().cycle().take(len).collect();
        let (num, den) = (rate.num(), rate.den());
        let times = (0..len as u64).map(|k| k / num * den).collect();
        FeatureStream {
            channels,
            values,
            times,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Mac,
    Depthwise,
    Fcu,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitStats {
    pub name: String,
    pub kind: UnitKind,
    pub multipliers: u64,
    /// Neuron cycles with valid operands inside the measurement window.
    pub busy_cycles: u64,
    /// Neuron cycles whose result belongs to a stride-valid window.
    pub productive_cycles: u64,
    pub active_multiplier_cycles: u64,
    pub window_cycles: u64,
    /// Idle run length -> occurrences.
    pub idle_runs: BTreeMap<u64, u64>,
}

impl UnitStats {
    /// Multiplier utilization; pool units report the share of cycles spent
    /// on windows that are kept.
    pub fn utilization(&self) -> f64 {
        if self.window_cycles == 0 {
            return 0.0;
        }
        if self.kind == UnitKind::Pool {
            return self.productive_cycles as f64 / self.window_cycles as f64;
        }
        self.active_multiplier_cycles as f64 / (self.multipliers * self.window_cycles) as f64
    }

    pub fn is_full(&self) -> bool {
        self.kind != UnitKind::Pool
            && self.active_multiplier_cycles == self.multipliers * self.window_cycles
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSim {
    pub index: usize,
    pub kind: LayerKind,
    pub pixels: u64,
    /// `[start, end)` cycles of the steady-state measurement.
    pub window: (u64, u64),
    pub units: Vec<UnitStats>,
    pub multipliers: u64,
    pub active_multiplier_cycles: u64,
    pub multiplier_capacity: u64,
    /// Peak occupancy of the FIFO feeding this layer.
    pub fifo_high_water: u64,
    pub fifo_high_water_per_frame: Vec<u64>,
    pub output_pixels: u64,
}

impl LayerSim {
    pub fn utilization(&self) -> Option<f64> {
        (self.multiplier_capacity > 0)
            .then(|| self.active_multiplier_cycles as f64 / self.multiplier_capacity as f64)
    }

    pub fn fully_utilized(&self) -> bool {
        self.multiplier_capacity > 0 && self.active_multiplier_cycles == self.multiplier_capacity
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub layer: usize,
    pub frame: usize,
    pub row: usize,
    pub col: usize,
    pub channel: usize,
    pub expected: i8,
    pub got: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub tool_version: String,
    pub strategy: Strategy,
    pub input_rate: Rate,
    pub seed: u64,
    pub frames: usize,
    pub functional_pass: bool,
    pub first_mismatch: Option<Mismatch>,
    /// Exact frame period implied by the input rate.
    pub predicted_cycles_per_frame: Rate,
    /// Mean interval between completions of steady-state output frames.
    pub measured_cycles_per_frame: Rate,
    /// Cycle at which each output frame's last feature is available.
    pub frame_completions: Vec<u64>,
    /// First input feature to the first complete output frame.
    pub latency_cycles: u64,
    pub layers: Vec<LayerSim>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SimReport {
    pub fn min_multiplier_utilization(&self) -> Option<f64> {
        self.layers
            .iter()
            .filter_map(|l| l.utilization())
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Exact agreement; a fractional period only averages out when the
    /// measured frames span a multiple of its denominator.
    pub fn measured_matches_prediction(&self) -> bool {
        self.measured_cycles_per_frame == self.predicted_cycles_per_frame
    }

    /// Frames to simulate so the steady span covers whole periods of a
    /// fractional frame interval.
    pub fn frames_for_exact_period(graph: &ModelGraph, input_rate: Rate) -> usize {
        let period = Rate::integer(graph.input_features()) / input_rate;
        2 + period.den() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct TraceRow {
    pub cycle: u64,
    pub unit: String,
    pub event: String,
}

pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "cycle,unit,event")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.cycle, r.unit, r.event)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerUtilization {
    pub layer: usize,
    pub kind: LayerKind,
    pub min: f64,
    pub mean: f64,
    pub full: bool,
    /// Units below 100%, with their idle-run histograms.
    pub flagged: Vec<(String, f64, BTreeMap<u64, u64>)>,
}

/// Per-layer min/mean unit utilization, flagging every unit below 100%.
pub fn measure_utilization(report: &SimReport) -> Vec<LayerUtilization> {
    report
        .layers
        .iter()
        .map(|l| {
            let utils: Vec<f64> = l.units.iter().map(UnitStats::utilization).collect();
            let min = utils.iter().copied().fold(f64::INFINITY, f64::min);
            let mean = utils.iter().sum::<f64>() / utils.len().max(1) as f64;
            let flagged = l
                .units
                .iter()
                .filter(|u| u.kind != UnitKind::Pool && !u.is_full())
                .map(|u| (u.name.clone(), u.utilization(), u.idle_runs.clone()))
                .collect::<Vec<_>>();
            LayerUtilization {
                layer: l.index,
                kind: l.kind,
                min: if utils.is_empty() { 0.0 } else { min },
                mean,
                full: flagged.is_empty(),
                flagged,
            }
        })
        .collect()
}

/// Per-layer knobs of [`simulate_layer`].
#[derive(Debug, Clone, Copy)]
pub struct LayerRun {
    pub frames: usize,
    /// Start with prefill so slots repeat with the frame period.
    pub prefill: bool,
    pub trace: bool,
}

pub struct LayerOutput {
    pub stream: FeatureStream,
    pub stats: LayerSim,
    pub trace: Vec<TraceRow>,
}

fn geometry(graph: &ModelGraph, layer: usize, pixels: usize) -> Result<WindowGeometry> {
    let spec = &graph.layers[layer];
    let (h, w, _) = graph.input_shape(layer);
    if spec.kind.is_fcu_style() {
        WindowGeometry::new(h, w, 1, 1, 1, Padding::None, pixels)
    } else {
        WindowGeometry::new(
            h,
            w,
            spec.kernel_h,
            spec.kernel_w,
            spec.stride,
            spec.padding,
            pixels,
        )
    }
}

/// Input pixels layer `layer` needs to emit its first `outputs` pixels.
fn input_needed(graph: &ModelGraph, layer: usize, geom: &WindowGeometry, outputs: usize) -> usize {
    if outputs == 0 {
        return 0;
    }
    let (oh, ow, _) = graph.shapes[layer];
    let last = outputs - 1;
    let (frame, local) = (last / (oh * ow), last % (oh * ow));
    frame * geom.frame_pixels() + geom.anchor(local / ow, local % ow) + 1
}

struct Datapath<'a> {
    spec: &'a LayerSpec,
    d_in: usize,
    area: usize,
    weights: &'a [i8],
}

impl Datapath<'_> {
    #[inline]
    fn conv_partial(
        &self,
        input: &[i8],
        taps: &[Option<usize>],
        o: usize,
        c0: usize,
        c1: usize,
    ) -> i32 {
        let mut acc = 0i32;
        for (t, src) in taps.iter().enumerate() {
            if let Some(p) = *src {
                let x = &input[p * self.d_in + c0..p * self.d_in + c1];
                let wbase = (o * self.area + t) * self.d_in;
                let w = &self.weights[wbase + c0..wbase + c1];
                acc += x
                    .iter()
                    .zip(w)
                    .map(|(&a, &b)| a as i32 * b as i32)
                    .sum::<i32>();
            }
        }
        acc
    }

    #[inline]
    fn depthwise(&self, input: &[i8], taps: &[Option<usize>], o: usize, c: usize) -> i32 {
        taps.iter()
            .enumerate()
            .filter_map(|(t, src)| {
                src.map(|p| {
                    input[p * self.d_in + c] as i32 * self.weights[o * self.area + t] as i32
                })
            })
            .sum()
    }

    #[inline]
    fn pool(&self, input: &[i8], taps: &[Option<usize>], c: usize) -> i32 {
        let cells = taps
            .iter()
            .flatten()
            .map(|&p| input[p * self.d_in + c] as i32);
        match self.spec.kind {
            LayerKind::MaxPool => cells.max().unwrap_or(0),
            _ => {
                let (sum, n) = cells.fold((0i32, 0i32), |(s, n), v| (s + v, n + 1));
                sum / n.max(1)
            }
        }
    }
}

struct UnitTrack {
    stats: UnitStats,
    last_end: u64,
}

impl UnitTrack {
    fn busy(
        &mut self,
        start: u64,
        len: u64,
        window: (u64, u64),
        mults_active: u64,
        productive: bool,
    ) {
        let s = start.max(window.0);
        let e = (start + len).min(window.1);
        if s >= e {
            return;
        }
        let gap_from = self.last_end.max(window.0);
        if s > gap_from {
            *self.stats.idle_runs.entry(s - gap_from).or_insert(0) += 1;
        }
        self.last_end = e;
        self.stats.busy_cycles += e - s;
        self.stats.active_multiplier_cycles += (e - s) * mults_active;
        if productive {
            self.stats.productive_cycles += e - s;
        }
    }

    fn finish(&mut self, window: (u64, u64)) {
        let gap_from = self.last_end.max(window.0);
        if window.1 > gap_from {
            *self.stats.idle_runs.entry(window.1 - gap_from).or_insert(0) += 1;
        }
        self.stats.window_cycles = window.1 - window.0;
    }
}

/// Simulate one layer over `input`; see the module docs for the timing model.
pub fn simulate_layer(
    graph: &ModelGraph,
    layer: usize,
    imp: &LayerImpl,
    schedules: &[KpuVariantSchedule],
    input: &FeatureStream,
    run: LayerRun,
) -> Result<LayerOutput> {
    let spec = &graph.layers[layer];
    let kind = spec.kind;
    let d_in = spec.in_channels as usize;
    let d_out = spec.out_channels as usize;
    let cm = spec.channel_multiplier as usize;
    let h_lim = spec.neuron_limit() as usize;
    let (oh, ow, _) = graph.shapes[layer];
    let out_hw = oh * ow;
    let p = imp.pixels as usize;
    let (j, h) = (imp.j as usize, imp.h as usize);
    let groups = d_in.div_ceil(j);
    let units = h_lim.div_ceil(h);
    let geom = geometry(graph, layer, p)?;
    let in_hw = geom.frame_pixels();
    let area = if kind.is_fcu_style() {
        1
    } else {
        spec.kernel_area()
    };

    if input.channels != d_in
        || !input.values.len().is_multiple_of(d_in)
        || input.times.len() != input.values.len()
    {
        return Err(Error::StreamOrder {
            layer,
            msg: format!(
                "stream of {} channels, layer expects {d_in}",
                input.channels
            ),
        });
    }
    if let Some(k) = input.times.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::StreamOrder {
            layer,
            msg: format!("feature {} arrives before feature {k}", k + 1),
        });
    }
    if !kind.is_fcu_style() && schedules.len() != p {
        return Err(Error::PlanMismatch(format!(
            "layer {layer}: {} KPU variants for {p} pixels per cycle",
            schedules.len()
        )));
    }

    let live: Vec<bool> = if kind.is_fcu_style() {
        vec![true; p]
    } else {
        schedules.iter().map(|v| !v.elided).collect()
    };

    let datapath = Datapath {
        spec,
        d_in,
        area,
        weights: spec.weights.as_ref().map_or(&[][..], |w| &w.data[..]),
    };
    let (unit_kind, unit_mults, tag) = match kind {
        LayerKind::Conv => (UnitKind::Mac, j * area, "mac"),
        LayerKind::DepthwiseConv => (UnitKind::Depthwise, j * area, "kpu"),
        LayerKind::PointwiseConv | LayerKind::FullyConnected => (UnitKind::Fcu, j, "fcu"),
        LayerKind::MaxPool | LayerKind::AvgPool => (UnitKind::Pool, 0, "pool"),
    };

    let n_in = input.pixels();
    let frames_in = n_in.div_ceil(in_hw);
    let out_cap = frames_in * out_hw * d_out;
    let mut out_values = vec![0i8; out_cap];
    let mut out_times = vec![u64::MAX; out_cap];
    let mut trace = Vec::new();

    // slot start times per live lane
    let mut lane_slots: Vec<Option<Vec<u64>>> = Vec::with_capacity(p);
    for m in 0..p {
        if !live[m] || m >= n_in {
            lane_slots.push(None);
            continue;
        }
        let ready: Vec<u64> = (m..n_in)
            .step_by(p)
            .flat_map(|n| (0..groups).map(move |g| (n, g)))
            .map(|(n, g)| input.times[n * d_in + ((g + 1) * j).min(d_in) - 1])
            .collect();
        let mut slots = Vec::with_capacity(ready.len());
        let start = if run.prefill {
            ready
                .iter()
                .enumerate()
                .map(|(k, &t)| t as i128 - (k * h) as i128)
                .max()
                .unwrap_or(0) as u64
        } else {
            0
        };
        let mut next = start;
        for &t in &ready {
            let s = next.max(t);
            slots.push(s);
            next = s + h as u64;
        }
        lane_slots.push(Some(slots));
    }

    // measurement window: whole frame periods, from the first slot of frame 1
    // to the first slot of frame F
    let frame_start = |f: usize| {
        lane_slots
            .iter()
            .enumerate()
            .filter_map(|(m, slots)| {
                let n = (f * in_hw..).find(|n| n % p == m).expect("lane exists");
                let g = (n - m) / p * groups;
                slots.as_ref().and_then(|s| s.get(g).copied())
            })
            .min()
    };
    let window = match (frame_start(1), frame_start(run.frames)) {
        (Some(a), Some(b)) if a < b => (a, b),
        _ => (0, 0),
    };

    let mut tracks: Vec<Vec<UnitTrack>> = Vec::with_capacity(p);
    let mut acc = vec![0i32; h_lim];
    let mut taps: Vec<Option<usize>> = vec![None; area];
    for m in 0..p {
        let Some(slots) = &lane_slots[m] else {
            tracks.push(Vec::new());
            continue;
        };
        let mut lane_tracks: Vec<UnitTrack> = (0..units)
            .map(|u| UnitTrack {
                stats: UnitStats {
                    name: format!("L{layer}.{tag}{m}.u{u}"),
                    kind: unit_kind,
                    multipliers: unit_mults as u64,
                    busy_cycles: 0,
                    productive_cycles: 0,
                    active_multiplier_cycles: 0,
                    window_cycles: 0,
                    idle_runs: BTreeMap::new(),
                },
                last_end: 0,
            })
            .collect();
        let variant = schedules.get(m);
        for (k, &s) in slots.iter().enumerate() {
            let n = m + k / groups * p;
            let g = k % groups;
            let c0 = g * j;
            let c1 = ((g + 1) * j).min(d_in);

            // window-position counter: which output, if any, this anchor makes
            let target = if kind.is_fcu_style() {
                Some(((n / in_hw) as u64, (n % in_hw) / ow, (n % in_hw) % ow))
            } else {
                geom.window_at(n as u64)
            };
            let out_pix = match target {
                Some((f, oy, ox)) => {
                    let anchor = f as usize * in_hw + geom.anchor(oy, ox);
                    if !kind.is_fcu_style() && (anchor != n || schedules[m].elided) {
                        return Err(Error::StreamOrder {
                            layer,
                            msg: format!("window ({oy}, {ox}) anchored on lane {m} belongs to another variant"),
                        });
                    }
                    if g == 0 {
                        route(&geom, variant, n, oy, ox, &mut taps);
                    }
                    Some(f as usize * out_hw + oy * ow + ox)
                }
                None => None,
            };
            if run.trace && g == 0 {
                trace.push(TraceRow {
                    cycle: s,
                    unit: format!("L{layer}.{tag}{m}"),
                    event: format!(
                        "pixel {n}{}",
                        if out_pix.is_some() { " window" } else { "" }
                    ),
                });
            }

            for (u, track) in lane_tracks.iter_mut().enumerate() {
                let active = h.min(h_lim.saturating_sub(u * h));
                track.busy(
                    s,
                    active as u64,
                    window,
                    ((c1 - c0) * area) as u64,
                    out_pix.is_some(),
                );
                if unit_kind == UnitKind::Pool && track.last_end > 0 {
                    // comparators carry no multipliers
                    track.stats.active_multiplier_cycles = 0;
                }
                let Some(op) = out_pix else { continue };
                for i in 0..active {
                    let q = u * h + i;
                    let t = s + i as u64 + 1;
                    match kind {
                        LayerKind::Conv | LayerKind::PointwiseConv | LayerKind::FullyConnected => {
                            if g == 0 {
                                acc[q] = 0;
                            }
                            acc[q] += datapath.conv_partial(&input.values, &taps, q, c0, c1);
                            if g == groups - 1 {
                                let idx = op * d_out + q;
                                out_values[idx] = requantize(acc[q], spec.requant_shift, spec.relu);
                                out_times[idx] = t;
                            }
                        }
                        LayerKind::DepthwiseConv => {
                            for c in c0..c1 {
                                let o = c * cm + q;
                                let idx = op * d_out + o;
                                let v = datapath.depthwise(&input.values, &taps, o, c);
                                out_values[idx] = requantize(v, spec.requant_shift, spec.relu);
                                out_times[idx] = t;
                            }
                        }
                        LayerKind::MaxPool | LayerKind::AvgPool => {
                            for c in c0..c1 {
                                let idx = op * d_out + c;
                                let v = datapath.pool(&input.values, &taps, c);
                                out_values[idx] = requantize(v, spec.requant_shift, spec.relu);
                                out_times[idx] = t;
                            }
                        }
                    }
                    if run.trace && g == groups - 1 || run.trace && kind.is_channelwise() {
                        trace.push(TraceRow {
                            cycle: t - 1,
                            unit: track.stats.name.clone(),
                            event: format!("emit pixel {op} neuron {q}"),
                        });
                    }
                }
            }
        }
        for t in &mut lane_tracks {
            t.finish(window);
        }
        tracks.push(lane_tracks);
    }

    // outputs leave in stream order; they must form a complete prefix
    let produced = out_times.iter().take_while(|&&t| t != u64::MAX).count();
    if out_times[produced..].iter().any(|&t| t != u64::MAX) || produced % d_out != 0 {
        return Err(Error::StreamOrder {
            layer,
            msg: format!("outputs are not a contiguous prefix after {produced} features"),
        });
    }
    out_values.truncate(produced);
    out_times.truncate(produced);
    for k in 1..out_times.len() {
        out_times[k] = out_times[k].max(out_times[k - 1]);
    }

    let (fifo_high_water, fifo_high_water_per_frame) =
        fifo_occupancy(input, &lane_slots, &live, p, groups, j, in_hw);

    let units: Vec<UnitStats> = tracks.into_iter().flatten().map(|t| t.stats).collect();
    let mult_units = units.iter().filter(|u| u.kind != UnitKind::Pool);
    let multipliers: u64 = mult_units.clone().map(|u| u.multipliers).sum();
    let active: u64 = mult_units.clone().map(|u| u.active_multiplier_cycles).sum();
    let capacity: u64 = mult_units.map(|u| u.multipliers * u.window_cycles).sum();
    Ok(LayerOutput {
        stream: FeatureStream {
            channels: d_out,
            values: out_values,
            times: out_times,
        },
        stats: LayerSim {
            index: layer,
            kind,
            pixels: imp.pixels,
            window,
            units,
            multipliers,
            active_multiplier_cycles: active,
            multiplier_capacity: capacity,
            fifo_high_water,
            fifo_high_water_per_frame,
            output_pixels: (produced / d_out) as u64,
        },
        trace,
    })
}

/// Fill `taps` with the source pixel of every kernel cell of the window
/// anchored at `n`, or `None` where the padding select zeroes the operand.
fn route(
    geom: &WindowGeometry,
    variant: Option<&KpuVariantSchedule>,
    n: usize,
    oy: usize,
    ox: usize,
    taps: &mut [Option<usize>],
) {
    let Some(v) = variant else {
        taps[0] = Some(n);
        return;
    };
    let step = n / geom.pixels;
    for (cell, t) in v.taps.iter().enumerate() {
        taps[cell] = if geom.row_outside(oy, t.row) || geom.col_outside(ox, t.col) {
            None
        } else {
            let src = (step - t.delay) * geom.pixels + t.lane;
            debug_assert_eq!(src, n - geom.tap_offset(t.row, t.col));
            Some(src)
        };
    }
}

/// Peak number of features waiting between arrival and the slot that first
/// reads them, overall and per input frame.
fn fifo_occupancy(
    input: &FeatureStream,
    lane_slots: &[Option<Vec<u64>>],
    live: &[bool],
    p: usize,
    groups: usize,
    j: usize,
    in_hw: usize,
) -> (u64, Vec<u64>) {
    let d_in = input.channels;
    let n_in = input.pixels();
    let Some(first_live) = live.iter().position(|&l| l) else {
        return (0, Vec::new());
    };
    // all lanes of a step advance together; read the step's first live lane
    let mut departures = Vec::with_capacity(input.times.len());
    for n in 0..n_in {
        let step_pixel = n / p * p + first_live;
        let Some(Some(slots)) = lane_slots.get(first_live).filter(|_| step_pixel < n_in) else {
            continue;
        };
        for c in 0..d_in {
            let g = c / j;
            departures.push((n, slots[(step_pixel - first_live) / p * groups + g]));
        }
    }
    let mut deps: Vec<u64> = departures.iter().map(|&(_, t)| t).collect();
    deps.sort_unstable();

    let frames = n_in.div_ceil(in_hw);
    let frame_start: Vec<u64> = (0..frames).map(|f| input.times[f * in_hw * d_in]).collect();
    let mut per_frame = vec![0u64; frames];
    let (mut ai, mut di, mut occ, mut peak) = (0usize, 0usize, 0i64, 0i64);
    let arrivals = &input.times;
    while ai < arrivals.len() {
        let t = arrivals[ai];
        while ai < arrivals.len() && arrivals[ai] == t {
            occ += 1;
            ai += 1;
        }
        while di < deps.len() && deps[di] <= t {
            occ -= 1;
            di += 1;
        }
        peak = peak.max(occ);
        let f = frame_start.partition_point(|&s| s <= t).saturating_sub(1);
        per_frame[f] = per_frame[f].max(occ.max(0) as u64);
    }
    (peak.max(0) as u64, per_frame)
}

/// Stream `frames` copies of `image` through every layer of `plan`.
pub fn simulate(
    graph: &ModelGraph,
    plan: &Plan,
    image: &Tensor8,
    frames: usize,
    opts: SimOptions,
) -> Result<SimReport> {
    if frames < 2 {
        return Err(Error::Validation(
            "at least 2 frames are needed to reach steady state".into(),
        ));
    }
    let expected = [graph.input_h, graph.input_w, graph.input_channels];
    if image.dims != expected {
        return Err(Error::Dimension(format!(
            "image dims {:?}, model expects {:?}",
            image.dims, expected
        )));
    }
    if plan.impls.len() != graph.layers.len() || plan.schedules.len() != graph.layers.len() {
        return Err(Error::PlanMismatch(format!(
            "plan covers {} layers, model has {}",
            plan.impls.len(),
            graph.layers.len()
        )));
    }
    if !opts.unchecked {
        let resources = crate::dse::estimate_resources(graph, &plan.impls)?;
        crate::dse::PlanFile::from_plan(graph, plan, &resources).to_plan(graph)?;
    }
    let golden = golden_forward(graph, image)?;
    let layers = graph.layers.len();

    // how many pixels each boundary must carry: one frame beyond the last
    // measured one, plus whatever windows spilling into later frames need
    let geoms = (0..layers)
        .map(|i| geometry(graph, i, plan.impls[i].pixels as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut needed_out = {
        let (oh, ow, _) = graph.output_shape();
        frames * oh * ow
    };
    let mut needed_in = vec![0usize; layers];
    for i in (0..layers).rev() {
        let g = &geoms[i];
        needed_in[i] = input_needed(graph, i, g, needed_out).max((frames + 1) * g.frame_pixels());
        needed_out = needed_in[i];
    }
    let src_pixels = needed_in.first().copied().unwrap_or(0);

    let mut stream = FeatureStream::source(image, src_pixels, plan.input_rate);
    let mut stats = Vec::with_capacity(layers);
    let mut trace = Vec::new();
    let mut first_mismatch = None;
    for i in 0..layers {
        let imp = &plan.impls[i];
        let rates = &plan.profile.layers[i];
        let run = LayerRun {
            frames,
            prefill: rates.achieved == rates.input,
            trace: opts.trace,
        };
        let out = simulate_layer(graph, i, imp, &plan.schedules[i], &stream, run)?;
        let required = if i + 1 < layers {
            needed_in[i + 1]
        } else {
            let (oh, ow, _) = graph.output_shape();
            frames * oh * ow
        };
        if out.stream.pixels() < required {
            return Err(Error::Deadlock {
                layer: i,
                msg: format!(
                    "produced {} of {required} output pixels from {} input pixels; units stalled",
                    out.stream.pixels(),
                    stream.pixels()
                ),
            });
        }
        if first_mismatch.is_none() {
            first_mismatch = compare(i, &out.stream, &golden[i], frames);
        }
        stats.push(out.stats);
        trace.extend(out.trace);
        stream = out.stream;
    }

    let (oh, ow, oc) = graph.output_shape();
    let frame_features = oh * ow * oc;
    let frame_completions: Vec<u64> = (0..frames)
        .map(|f| stream.times[(f + 1) * frame_features - 1])
        .collect();
    let measured = if frames == 2 {
        Rate::integer(frame_completions[1] - frame_completions[0])
    } else {
        Rate::new(
            frame_completions[frames - 1] - frame_completions[1],
            (frames - 2) as u64,
        )?
    };
    let predicted = Rate::integer(graph.input_features())
        .checked_div(plan.input_rate)
        .ok_or_else(|| Error::Rate("input rate must be positive".into()))?;
    trace.sort();

    Ok(SimReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        strategy: plan.strategy,
        input_rate: plan.input_rate,
        seed: graph.seed,
        frames,
        functional_pass: first_mismatch.is_none(),
        first_mismatch,
        predicted_cycles_per_frame: predicted,
        measured_cycles_per_frame: measured,
        latency_cycles: frame_completions[0],
        frame_completions,
        layers: stats,
        trace,
    })
}

fn compare(
    layer: usize,
    stream: &FeatureStream,
    golden: &Tensor8,
    frames: usize,
) -> Option<Mismatch> {
    let per_frame = golden.len();
    let (w, c) = (golden.dims[1], golden.dims[2]);
    for f in 0..frames {
        let got = &stream.values[f * per_frame..(f + 1) * per_frame];
        if let Some(k) = got.iter().zip(&golden.data).position(|(a, b)| a != b) {
            return Some(Mismatch {
                layer,
                frame: f,
                row: k / c / w,
                col: k / c % w,
                channel: k % c,
                expected: golden.data[k],
                got: got[k],
            });
        }
    }
    None
}
