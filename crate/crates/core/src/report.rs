//! Tables and summaries behind the command-line front end.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dse::{
    estimate_resources, estimate_throughput, plan_network, Plan, PlanFile, ResourceEstimate,
    Strategy, Throughput,
};
use crate::error::{Error, Result};
use crate::model::{load_model, zoo, ModelFile, ModelGraph, DEFAULT_SEED};
use crate::rate::Rate;
use crate::sim::{measure_utilization, simulate, SimOptions, SimReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Markdown => "md",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// A titled grid of preformatted cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(title: impl Into<String>, headers: &[&str]) -> Table {
        Table {
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        out += &format!("| {} |\n", self.headers.join(" | "));
        out += &format!("|{}\n", "---|".repeat(self.headers.len()));
        for row in &self.rows {
            out += &format!("| {} |\n", row.join(" | "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Markdown => self.to_markdown(),
            Format::Csv => self.to_csv(),
            Format::Json => serde_json::to_string_pretty(self).expect("table serializes") + "\n",
        }
    }
}

pub fn render_tables(tables: &[Table], format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(tables).expect("tables serialize") + "\n",
        Format::Csv => tables
            .iter()
            .map(|t| format!("# {}\n{}", t.title, t.to_csv()))
            .collect::<Vec<_>>()
            .join("\n"),
        Format::Markdown => tables
            .iter()
            .map(Table::to_markdown)
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

/// Model by file path, or one of the built-in topologies.
pub fn load_graph(model: &str, seed: Option<u64>) -> Result<ModelGraph> {
    let path = Path::new(model);
    if path.exists() {
        let Some(seed) = seed else {
            return load_model(path);
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        file.seed = Some(seed);
        return file.into_graph(path.parent());
    }
    builtin(model, seed.unwrap_or(DEFAULT_SEED)).ok_or_else(|| {
        Error::Validation(format!(
            "no model file {model:?}; built-in models are {}",
            BUILTINS.join(", ")
        ))
    })
}

pub const BUILTINS: [&str; 4] = ["mobilenet_v1", "mobilenet_v2", "toy3", "tiny"];

pub fn builtin(name: &str, seed: u64) -> Option<ModelGraph> {
    match name {
        "mobilenet_v1" => Some(zoo::mobilenet_v1(seed)),
        "mobilenet_v2" => Some(zoo::mobilenet_v2(seed)),
        "toy3" => Some(zoo::toy3(seed)),
        "tiny" => Some(zoo::tiny_test_model(seed)),
        _ => None,
    }
}

/// A plan with its costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub plan: Plan,
    pub resources: ResourceEstimate,
    pub throughput: Throughput,
    pub file: PlanFile,
}

impl PlanReport {
    pub fn build(graph: &ModelGraph, plan: Plan, clock_mhz: f64) -> Result<PlanReport> {
        let resources = estimate_resources(graph, &plan.impls)?;
        let throughput = estimate_throughput(graph, &plan, clock_mhz)?;
        let file = PlanFile::from_plan(graph, &plan, &resources);
        Ok(PlanReport {
            plan,
            resources,
            throughput,
            file,
        })
    }

    pub fn new(
        graph: &ModelGraph,
        rate: Rate,
        strategy: Strategy,
        clock_mhz: f64,
    ) -> Result<PlanReport> {
        Self::build(graph, plan_network(graph, rate, strategy)?, clock_mhz)
    }

    /// `achieved / input - 1` per layer: capacity wasted (or missing, when
    /// negative) relative to the incoming flow.
    pub fn overshoot(&self) -> Vec<f64> {
        self.plan
            .profile
            .layers
            .iter()
            .map(|l| (l.achieved / l.input).to_f64() - 1.0)
            .collect()
    }
}

fn percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

pub fn plan_table(graph: &ModelGraph, report: &PlanReport) -> Table {
    let strategy = report.plan.strategy.name();
    let mut t = Table::new(
        format!(
            "{strategy} plan at {} features/cycle",
            report.plan.input_rate
        ),
        &[
            "layer",
            "kind",
            "d_in",
            "d_out",
            "P",
            "j",
            "h",
            "C",
            "units",
            "multipliers",
            "input rate",
            "achieved",
            "overshoot",
            "escalated",
        ],
    );
    let overshoot = report.overshoot();
    for (i, (layer, pl)) in graph.layers.iter().zip(&report.file.layers).enumerate() {
        t.push(vec![
            i.to_string(),
            layer.kind.name().to_string(),
            pl.d_in.to_string(),
            pl.d_out.to_string(),
            pl.pixels.to_string(),
            pl.j.to_string(),
            pl.h.to_string(),
            pl.configs.to_string(),
            pl.unit_count.to_string(),
            pl.multipliers.to_string(),
            pl.input_rate.to_string(),
            pl.achieved_rate.to_string(),
            percent(overshoot[i]),
            if pl.pixels > 1 { "yes" } else { "" }.to_string(),
        ]);
    }
    t
}

pub fn totals_table(reports: &[&PlanReport], clock_mhz: f64) -> Table {
    let mut t = Table::new(
        format!("totals at {clock_mhz} MHz"),
        &[
            "strategy",
            "multipliers",
            "adders",
            "weight words",
            "cycles/frame",
            "fps",
            "latency bound (cycles)",
        ],
    );
    for r in reports {
        t.push(vec![
            r.plan.strategy.name().to_string(),
            r.resources.multipliers.to_string(),
            r.resources.adders.to_string(),
            r.resources.weight_words.to_string(),
            r.throughput.cycles_per_frame.to_string(),
            format!("{:.2}", r.throughput.fps),
            r.throughput.latency_lower_bound_cycles.to_string(),
        ]);
    }
    t
}

/// Side-by-side overshoot of the two strategies.
pub fn comparison_table(graph: &ModelGraph, proposed: &PlanReport, legacy: &PlanReport) -> Table {
    let mut t = Table::new(
        "proposed vs legacy",
        &[
            "layer",
            "kind",
            "input rate",
            "proposed achieved",
            "proposed overshoot",
            "legacy achieved",
            "legacy overshoot",
            "proposed multipliers",
            "legacy multipliers",
        ],
    );
    let (po, lo) = (proposed.overshoot(), legacy.overshoot());
    for (i, layer) in graph.layers.iter().enumerate() {
        let (p, l) = (&proposed.file.layers[i], &legacy.file.layers[i]);
        t.push(vec![
            i.to_string(),
            layer.kind.name().to_string(),
            p.input_rate.to_string(),
            p.achieved_rate.to_string(),
            percent(po[i]),
            l.achieved_rate.to_string(),
            percent(lo[i]),
            p.multipliers.to_string(),
            l.multipliers.to_string(),
        ]);
    }
    t
}

/// One-line verdict of a simulation.
pub fn sim_summary(report: &SimReport) -> String {
    let verdict = if report.functional_pass {
        "PASS"
    } else {
        "FAIL"
    };
    let util = report
        .min_multiplier_utilization()
        .map_or("n/a".to_string(), percent);
    let cycles = |r: Rate| {
        if r.is_integer() {
            r.num().to_string()
        } else {
            format!("{:.2}", r.to_f64())
        }
    };
    let mut line = format!(
        "{verdict}, utilization {util}, {} cycles/frame (predicted {})",
        cycles(report.measured_cycles_per_frame),
        cycles(report.predicted_cycles_per_frame)
    );
    if let Some(m) = &report.first_mismatch {
        line += &format!(
            "; first mismatch in layer {} frame {} at ({}, {}, {}): expected {}, got {}",
            m.layer, m.frame, m.row, m.col, m.channel, m.expected, m.got
        );
    }
    line
}

pub fn sim_table(report: &SimReport) -> Table {
    let mut t = Table::new(
        format!(
            "{} simulation at {} features/cycle",
            report.strategy.name(),
            report.input_rate
        ),
        &[
            "layer",
            "kind",
            "P",
            "units",
            "multipliers",
            "min util",
            "mean util",
            "flagged units",
            "fifo high-water",
        ],
    );
    for (l, u) in report.layers.iter().zip(measure_utilization(report)) {
        t.push(vec![
            l.index.to_string(),
            l.kind.name().to_string(),
            l.pixels.to_string(),
            l.units.len().to_string(),
            l.multipliers.to_string(),
            percent(u.min),
            percent(u.mean),
            u.flagged.len().to_string(),
            l.fifo_high_water.to_string(),
        ]);
    }
    t
}

pub fn run_simulation(
    graph: &ModelGraph,
    plan: &Plan,
    seed: u64,
    frames: usize,
    trace: bool,
) -> Result<SimReport> {
    let image = graph.random_image(seed);
    let mut report = simulate(
        graph,
        plan,
        &image,
        frames,
        SimOptions {
            trace,
            unchecked: false,
        },
    )?;
    report.seed = seed;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub rate: Rate,
    pub strategy: Strategy,
    pub multipliers: Option<u64>,
    pub adders: Option<u64>,
    pub cycles_per_frame: Option<u64>,
    pub fps: Option<f64>,
    pub escalated_layers: usize,
    pub min_utilization: Option<f64>,
    pub functional_pass: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    pub clock_mhz: f64,
    /// Frames to simulate per row; `None` skips simulation.
    pub simulate_frames: Option<usize>,
    pub seed: u64,
}

fn sweep_row(graph: &ModelGraph, rate: Rate, strategy: Strategy, cfg: SweepConfig) -> SweepRow {
    let mut row = SweepRow {
        rate,
        strategy,
        multipliers: None,
        adders: None,
        cycles_per_frame: None,
        fps: None,
        escalated_layers: 0,
        min_utilization: None,
        functional_pass: None,
        error: None,
    };
    let report = match PlanReport::new(graph, rate, strategy, cfg.clock_mhz) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.multipliers = Some(report.resources.multipliers);
    row.adders = Some(report.resources.adders);
    row.cycles_per_frame = Some(report.throughput.cycles_per_frame);
    row.fps = Some(report.throughput.fps);
    row.escalated_layers = report.plan.escalated_layers().len();
    if let Some(frames) = cfg.simulate_frames {
        match run_simulation(graph, &report.plan, cfg.seed, frames, false) {
            Ok(sim) => {
                row.min_utilization = sim.min_multiplier_utilization();
                row.functional_pass = Some(sim.functional_pass);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    row
}

/// Plan (and optionally simulate) every rate with every strategy; rows come
/// back in input order and failures are recorded per row.
pub fn sweep(
    graph: &ModelGraph,
    rates: &[Rate],
    strategies: &[Strategy],
    cfg: SweepConfig,
) -> Vec<SweepRow> {
    let jobs: Vec<(Rate, Strategy)> = rates
        .iter()
        .flat_map(|&r| strategies.iter().map(move |&s| (r, s)))
        .collect();
    jobs.par_iter()
        .map(|&(r, s)| sweep_row(graph, r, s, cfg))
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(
        "rate sweep",
        &[
            "rate",
            "strategy",
            "multipliers",
            "adders",
            "cycles/frame",
            "fps",
            "escalated layers",
            "min util",
            "functional",
            "error",
        ],
    );
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        t.push(vec![
            r.rate.to_string(),
            r.strategy.name().to_string(),
            opt(r.multipliers.map(|v| v.to_string())),
            opt(r.adders.map(|v| v.to_string())),
            opt(r.cycles_per_frame.map(|v| v.to_string())),
            opt(r.fps.map(|v| format!("{v:.2}"))),
            r.escalated_layers.to_string(),
            opt(r.min_utilization.map(percent)),
            opt(r
                .functional_pass
                .map(|p| if p { "pass" } else { "FAIL" }.to_string())),
            opt(r.error.clone()),
        ]);
    }
    t
}
