//! The plan file: the JSON contract between planning and simulation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layer_schedules, LayerImpl, Plan, ResourceEstimate, Strategy};
use crate::error::{Error, Result};
use crate::kpu::{KpuVariantSchedule, TapAssignment};
use crate::model::{LayerKind, ModelGraph};
use crate::rate::{propagate, Rate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub variant_id: usize,
    pub elided: bool,
    pub taps: Vec<TapAssignment>,
    pub window_count: usize,
}

impl From<&KpuVariantSchedule> for VariantEntry {
    fn from(s: &KpuVariantSchedule) -> Self {
        VariantEntry {
            variant_id: s.variant_id,
            elided: s.elided,
            taps: s.taps.clone(),
            window_count: s.window_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLayer {
    pub kind: LayerKind,
    pub d_in: u64,
    pub d_out: u64,
    #[serde(rename = "P")]
    pub pixels: u64,
    pub j: u64,
    pub h: u64,
    #[serde(rename = "C")]
    pub configs: u64,
    pub unit_count: u64,
    pub kpus_per_unit: u64,
    pub multipliers: u64,
    pub achieved_rate: Rate,
    pub input_rate: Rate,
    pub output_rate: Rate,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interleave: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kpu_variants: Vec<VariantEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTotals {
    pub multipliers: u64,
    pub adders: u64,
    pub weight_words: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub tool_version: String,
    pub strategy: Strategy,
    pub input_rate: Rate,
    pub seed: u64,
    /// `[height, width, channels]` of the model input.
    pub model_input: [usize; 3],
    pub totals: PlanTotals,
    pub layers: Vec<PlanLayer>,
}

impl PlanFile {
    pub fn from_plan(graph: &ModelGraph, plan: &Plan, resources: &ResourceEstimate) -> PlanFile {
        let layers = graph
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let imp = &plan.impls[i];
                let rates = &plan.profile.layers[i];
                PlanLayer {
                    kind: l.kind,
                    d_in: l.in_channels,
                    d_out: l.out_channels,
                    pixels: imp.pixels,
                    j: imp.j,
                    h: imp.h,
                    configs: imp.configs,
                    unit_count: imp.unit_count,
                    kpus_per_unit: imp.kpus_per_unit,
                    multipliers: resources.layers[i].multipliers,
                    achieved_rate: imp.achieved_in_rate,
                    input_rate: rates.input,
                    output_rate: rates.output,
                    strategy: imp.strategy,
                    interleave: imp.interleave,
                    kpu_variants: plan.schedules[i].iter().map(VariantEntry::from).collect(),
                }
            })
            .collect();
        PlanFile {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            strategy: plan.strategy,
            input_rate: plan.input_rate,
            seed: graph.seed,
            model_input: [graph.input_h, graph.input_w, graph.input_channels],
            totals: PlanTotals {
                multipliers: resources.multipliers,
                adders: resources.adders,
                weight_words: resources.weight_words,
            },
            layers,
        }
    }

    /// Rebuild a [`Plan`] for `graph`, rejecting anything inconsistent.
    pub fn to_plan(&self, graph: &ModelGraph) -> Result<Plan> {
        let input = [graph.input_h, graph.input_w, graph.input_channels];
        if self.model_input != input {
            return Err(Error::PlanMismatch(format!(
                "plan is for input {:?}, model has {:?}",
                self.model_input, input
            )));
        }
        if self.layers.len() != graph.layers.len() {
            return Err(Error::PlanMismatch(format!(
                "plan has {} layers, model has {}",
                self.layers.len(),
                graph.layers.len()
            )));
        }
        let mut impls = Vec::with_capacity(self.layers.len());
        for (i, (pl, spec)) in self.layers.iter().zip(&graph.layers).enumerate() {
            if pl.kind != spec.kind || pl.d_in != spec.in_channels || pl.d_out != spec.out_channels
            {
                return Err(Error::PlanMismatch(format!(
                    "layer {i}: plan describes {} {}->{}, model has {} {}->{}",
                    pl.kind.name(),
                    pl.d_in,
                    pl.d_out,
                    spec.kind.name(),
                    spec.in_channels,
                    spec.out_channels
                )));
            }
            impls.push(check_layer(i, pl, spec.neuron_limit())?);
        }
        let profile = propagate(graph, self.input_rate, &impls)?;
        for (i, (pl, rates)) in self.layers.iter().zip(&profile.layers).enumerate() {
            if pl.input_rate != rates.input || pl.output_rate != rates.output {
                return Err(Error::PlanMismatch(format!(
                    "layer {i}: plan rates {} -> {}, model gives {} -> {}",
                    pl.input_rate, pl.output_rate, rates.input, rates.output
                )));
            }
            if pl.strategy == Strategy::Proposed && rates.achieved < rates.input {
                return Err(Error::Validation(format!(
                    "layer {i}: capacity {} is below the incoming rate {}",
                    rates.achieved, rates.input
                )));
            }
        }
        let mut schedules = Vec::with_capacity(impls.len());
        for (i, (pl, imp)) in self.layers.iter().zip(&impls).enumerate() {
            let derived = layer_schedules(graph, i, imp.pixels)?;
            if !pl.kpu_variants.is_empty() {
                let expected: Vec<VariantEntry> = derived.iter().map(VariantEntry::from).collect();
                if pl.kpu_variants != expected {
                    return Err(Error::PlanMismatch(format!(
                        "layer {i}: KPU variants differ from the ones derived for this geometry"
                    )));
                }
            }
            schedules.push(derived);
        }
        Ok(Plan {
            strategy: self.strategy,
            input_rate: self.input_rate,
            impls,
            profile,
            schedules,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PlanFile> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

fn check_layer(i: usize, pl: &PlanLayer, h_lim: u64) -> Result<LayerImpl> {
    let fail = |msg: String| Err(Error::Validation(format!("layer {i}: {msg}")));
    if pl.pixels == 0 || pl.j == 0 || pl.h == 0 {
        return fail("P, j and h must be positive".into());
    }
    match pl.strategy {
        Strategy::Proposed => {
            if !pl.d_in.is_multiple_of(pl.j) {
                return fail(format!(
                    "j = {} does not divide the {} input features; a partial channel group would feed padding",
                    pl.j, pl.d_in
                ));
            }
            if !h_lim.is_multiple_of(pl.h) {
                return fail(format!(
                    "h = {} does not divide the neuron count {h_lim}; units would compute unequal numbers of neurons and idle while synchronizing",
                    pl.h
                ));
            }
        }
        Strategy::Legacy => {
            if pl.pixels != 1 {
                return fail("legacy layers process one pixel per cycle".into());
            }
        }
    }
    let mut imp = LayerImpl::realize(pl.kind, pl.d_in, h_lim, pl.pixels, pl.j, pl.h, pl.strategy);
    imp.interleave = pl.interleave;
    if imp.configs != pl.configs {
        return fail(format!(
            "C = {} but h and j give {}",
            pl.configs, imp.configs
        ));
    }
    if imp.unit_count != pl.unit_count || imp.kpus_per_unit != pl.kpus_per_unit {
        return fail(format!(
            "{} units of {} KPUs recorded, parameters give {} of {}",
            pl.unit_count, pl.kpus_per_unit, imp.unit_count, imp.kpus_per_unit
        ));
    }
    if imp.achieved_in_rate != pl.achieved_rate {
        return fail(format!(
            "achieved rate {} recorded, parameters give {}",
            pl.achieved_rate, imp.achieved_in_rate
        ));
    }
    Ok(imp)
}
