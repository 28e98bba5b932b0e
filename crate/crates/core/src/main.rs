use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rateflow::dse::{PlanFile, Strategy};
use rateflow::model::{save_model, DEFAULT_SEED};
use rateflow::report::{
    builtin, comparison_table, load_graph, plan_table, render_tables, run_simulation, sim_summary,
    sim_table, sweep, sweep_table, totals_table, Format, PlanReport, SweepConfig, BUILTINS,
};
use rateflow::sim::write_trace_csv;
use rateflow::{Error, Rate};

/// Rate-matched dataflow CNN accelerator planner and simulator
#[derive(Parser, Debug)]
#[command(name = "rateflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select per-layer parameters for an input rate and cost the result
    Plan(PlanArgs),
    /// Simulate a plan cycle by cycle and check it against the golden model
    Simulate(SimulateArgs),
    /// Plan a model at several input rates
    Sweep(SweepArgs),
    /// Write a built-in topology as a model file
    GenModel(GenModelArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Model file, or one of the built-in models (mobilenet_v1, mobilenet_v2, toy3, tiny)
    #[arg(long)]
    model: String,

    /// Parameter selection strategy
    #[arg(long, value_enum, default_value_t = StrategyArg::Proposed)]
    strategy: StrategyArg,

    /// Clock frequency used for FPS projections
    #[arg(long, default_value_t = 200.0)]
    clock_mhz: f64,

    /// Seed for generated weights and the input image
    #[arg(long)]
    seed: Option<u64>,

    /// Directory for plan, report and trace files
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = FormatArg::Md)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,

    /// Input features per cycle, as num/den
    #[arg(long, value_parser = parse_rate)]
    rate: Rate,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,

    /// Input features per cycle; required unless --plan is given
    #[arg(long, value_parser = parse_rate)]
    rate: Option<Rate>,

    /// Plan file to simulate instead of planning inline
    #[arg(long, conflicts_with = "rate")]
    plan: Option<PathBuf>,

    /// Frames to stream; the first is warm-up
    #[arg(long, default_value_t = 2)]
    frames: usize,

    /// Write a per-cycle event trace (trace.csv) to --out
    #[arg(long)]
    trace: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,

    /// Rates to sweep, comma separated or repeated
    #[arg(long = "rate", value_parser = parse_rate, value_delimiter = ',', required = true)]
    rates: Vec<Rate>,

    /// Also simulate every row and report its utilization
    #[arg(long)]
    simulate: bool,

    /// Frames per simulated row
    #[arg(long, default_value_t = 2)]
    frames: usize,
}

#[derive(Args, Debug)]
struct GenModelArgs {
    /// Built-in topology to write
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(BUILTINS))]
    arch: String,

    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,

    /// Model file to write
    #[arg(long)]
    out: PathBuf,

    /// Also write the generated weights as raw blobs next to the model file
    #[arg(long)]
    with_weights: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Proposed,
    Legacy,
    Both,
}

impl StrategyArg {
    fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyArg::Proposed => vec![Strategy::Proposed],
            StrategyArg::Legacy => vec![Strategy::Legacy],
            StrategyArg::Both => vec![Strategy::Proposed, Strategy::Legacy],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Md,
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Md => Format::Markdown,
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

fn parse_rate(s: &str) -> Result<Rate, String> {
    let rate: Rate = s.parse().map_err(|e: Error| e.to_string())?;
    if rate.is_zero() {
        return Err("rate must be positive".into());
    }
    Ok(rate)
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(Error::Deadlock { .. }) => 3,
            _ => 1,
        };
        Failure { code, err }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn write_out(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn plan_name(strategies: usize, s: Strategy) -> String {
    if strategies == 1 {
        "plan.json".to_string()
    } else {
        format!("plan_{}.json", s.name())
    }
}

fn cmd_plan(args: PlanArgs) -> Result<(), Failure> {
    let c = &args.common;
    let graph = load_graph(&c.model, c.seed)?;
    let format = Format::from(c.format);
    let strategies = c.strategy.strategies();
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    for &s in &strategies {
        match PlanReport::new(&graph, args.rate, s, c.clock_mhz) {
            Ok(r) => {
                tables.push(plan_table(&graph, &r));
                reports.push(r);
            }
            // with both strategies, a legacy failure still leaves a report
            Err(e) if strategies.len() > 1 => eprintln!("{} strategy: {e}", s.name()),
            Err(e) => return Err(e.into()),
        }
    }
    if reports.is_empty() {
        return Err(anyhow!("no strategy produced a plan").into());
    }
    tables.push(totals_table(
        &reports.iter().collect::<Vec<_>>(),
        c.clock_mhz,
    ));
    if let [p, l] = &reports[..] {
        tables.push(comparison_table(&graph, p, l));
    }
    let text = render_tables(&tables, format);
    emit(&text);
    if let Some(dir) = &c.out {
        for r in &reports {
            write_out(
                dir,
                &plan_name(strategies.len(), r.plan.strategy),
                &(r.file.to_json() + "\n"),
            )?;
        }
        write_out(dir, &format!("plan_table.{}", format.extension()), &text)?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let c = &args.common;
    let format = Format::from(c.format);
    if args.trace && c.out.is_none() {
        return Err(anyhow!("--trace needs --out for the trace file").into());
    }
    let plan_file = args.plan.as_ref().map(PlanFile::load).transpose()?;
    // a plan records the seed its weights were generated from
    let seed = c.seed.or(plan_file.as_ref().map(|p| p.seed));
    let graph = load_graph(&c.model, seed)?;
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let plans = match (&plan_file, args.rate) {
        (Some(file), _) => vec![file.to_plan(&graph)?],
        (None, Some(rate)) => c
            .strategy
            .strategies()
            .into_iter()
            .map(|s| rateflow::dse::plan_network(&graph, rate, s))
            .collect::<Result<Vec<_>, _>>()?,
        (None, None) => return Err(anyhow!("either --rate or --plan is required").into()),
    };
    let mut code = 0;
    let mut tables = Vec::new();
    for plan in &plans {
        let report = run_simulation(&graph, plan, seed, args.frames, args.trace)?;
        emit(&format!(
            "{}: {}\n",
            plan.strategy.name(),
            sim_summary(&report)
        ));
        if !report.functional_pass {
            code = 2;
        }
        tables.push(sim_table(&report));
        if let Some(dir) = &c.out {
            let suffix = if plans.len() > 1 {
                format!("_{}", plan.strategy.name())
            } else {
                String::new()
            };
            let json = serde_json::to_string_pretty(&report).context("serializing report")? + "\n";
            write_out(dir, &format!("sim_report{suffix}.json"), &json)?;
            if args.trace {
                let mut buf = Vec::new();
                write_trace_csv(&report.trace, &mut buf).context("formatting trace")?;
                write_out(
                    dir,
                    &format!("trace{suffix}.csv"),
                    &String::from_utf8_lossy(&buf),
                )?;
            }
        }
    }
    emit(&render_tables(&tables, format));
    if code != 0 {
        return Err(Failure {
            code,
            err: anyhow!("simulated outputs differ from the golden model"),
        });
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let c = &args.common;
    if args.rates.len() < 2 {
        return Err(anyhow!("a sweep needs at least two rates").into());
    }
    let graph = load_graph(&c.model, c.seed)?;
    let cfg = SweepConfig {
        clock_mhz: c.clock_mhz,
        simulate_frames: args.simulate.then_some(args.frames),
        seed: c.seed.unwrap_or(DEFAULT_SEED),
    };
    let rows = sweep(&graph, &args.rates, &c.strategy.strategies(), cfg);
    let format = Format::from(c.format);
    let text = sweep_table(&rows).render(format);
    emit(&text);
    if let Some(dir) = &c.out {
        write_out(dir, &format!("sweep.{}", format.extension()), &text)?;
    }
    if rows.iter().any(|r| r.functional_pass == Some(false)) {
        return Err(Failure {
            code: 2,
            err: anyhow!("a simulated row differs from the golden model"),
        });
    }
    Ok(())
}

fn cmd_gen_model(args: GenModelArgs) -> Result<(), Failure> {
    let graph = builtin(&args.arch, args.seed)
        .ok_or_else(|| anyhow!("unknown architecture {}", args.arch))?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_model(&graph, &args.out, args.with_weights)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenModel(a) => cmd_gen_model(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
