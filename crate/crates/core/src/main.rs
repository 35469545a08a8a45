//! Command-line front end. Subcommands load model and hardware descriptions
//! (compiled-in presets or JSON files), run the planner, simulator, schedule
//! analyses, and the tensor codec, and print JSON reports; traces and event
//! timelines export as CSV.
//!
//! Exit codes: 0 on success, 2 on input or usage errors, 3 when no feasible
//! result exists (planning infeasibility, a policy that does not fit, a
//! failed verification).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tiergen::compress::{self, QuantConfig, Tensor};
use tiergen::costmodel::{coeffs_for_policy, FRACTION_NAMES};
use tiergen::model::{
    self, format_bytes, validate_policy, HardwareProfile, ModelSpec, Policy, Workload,
};
use tiergen::policy::{
    baseline_policy, grid_oracle, plan, BaselineKind, PlanError, PlanResult, SearchConfig,
};
use tiergen::presets;
use tiergen::schedule::{
    self, brute_force_optimal, budget_from_bytes, budget_weight_loads,
    diagonal_steady_loads_per_cycle, io_account, io_lower_bound, ComputeGraph, IoAccount,
    ScheduleTrace,
};
use tiergen::sim::{
    export_events_csv, simulate, simulate_pipeline, PipelineResult, SimConfig, SimError,
    SimResult,
};

#[derive(Parser)]
#[command(
    name = "tiergen",
    version,
    about = "Planner, cost analyzer, and simulator for offloading-based LLM \
             generative inference over a GPU/CPU/disk hierarchy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report weight, KV-cache, and activation byte totals for a workload.
    Footprint(FootprintArgs),
    /// Search batch sizes and placements for the highest-throughput policy.
    Plan(PlanArgs),
    /// Predict block execution of a policy or a named baseline.
    Simulate(SimulateArgs),
    /// Generate a block schedule and account for its I/O.
    Schedule(ScheduleArgs),
    /// Quantize a raw half-precision tensor file group-wise.
    Quantize(QuantizeArgs),
}

/// Input errors exit with 2, infeasibility verdicts with 3.
enum CmdError {
    Input(String),
    Infeasible(String),
}

type CmdResult = Result<(), CmdError>;

fn input<E: std::fmt::Display>(e: E) -> CmdError {
    CmdError::Input(e.to_string())
}

fn file_err<E: std::fmt::Display>(path: &Path, e: E) -> CmdError {
    CmdError::Input(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Footprint(args) => cmd_footprint(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Schedule(args) => cmd_schedule(args),
        Command::Quantize(args) => cmd_quantize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Infeasible(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Resolves a model argument: preset name first, then a JSON file path.
fn load_model(spec: &str) -> Result<ModelSpec, CmdError> {
    if let Ok(m) = presets::model_preset(spec) {
        return Ok(m);
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|e| {
        CmdError::Input(format!(
            "{spec}: {e} (known model presets: {})",
            presets::model_preset_names().join(", ")
        ))
    })?;
    let m: ModelSpec = serde_json::from_str(&text).map_err(|e| file_err(path, e))?;
    m.validate().map_err(|e| file_err(path, e))?;
    Ok(m)
}

/// Resolves a hardware argument: preset name first, then a JSON file path.
fn load_hardware(spec: &str) -> Result<HardwareProfile, CmdError> {
    if let Ok(hw) = presets::hardware_preset(spec) {
        return Ok(hw);
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|e| {
        CmdError::Input(format!(
            "{spec}: {e} (known hardware presets: {})",
            presets::hardware_preset_names().join(", ")
        ))
    })?;
    let hw: HardwareProfile = serde_json::from_str(&text).map_err(|e| file_err(path, e))?;
    hw.validate().map_err(|e| file_err(path, e))?;
    Ok(hw)
}

fn load_policy(path: &Path) -> Result<Policy, CmdError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let policy: Policy = serde_json::from_str(&text).map_err(|e| file_err(path, e))?;
    let violations = validate_policy(&policy);
    if let Some(v) = violations.first() {
        return Err(file_err(path, &v.0));
    }
    Ok(policy)
}

fn workload_of(s: u64, n: u64) -> Result<Workload, CmdError> {
    let w = Workload {
        prompt_len: s,
        gen_len: n,
    };
    w.validate().map_err(input)?;
    Ok(w)
}

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).map_err(input)?;
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{text}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        return Err(input(e));
    }
    Ok(())
}

// ---------------------------------------------------------------- footprint

#[derive(Args)]
struct FootprintArgs {
    /// Model preset name or path to a model JSON file.
    #[arg(long)]
    model: String,
    /// Sequences in the batch.
    #[arg(long)]
    batch: u64,
    /// Prompt length in tokens.
    #[arg(long)]
    s: u64,
    /// Tokens to generate per sequence.
    #[arg(long)]
    n: u64,
    /// Policy JSON file; adds per-device byte splits to the report.
    #[arg(long, value_name = "PATH")]
    policy: Option<PathBuf>,
}

#[derive(Serialize)]
struct FootprintReport {
    model: String,
    batch: u64,
    prompt_len: u64,
    gen_len: u64,
    weights_bytes: u128,
    weights_display: String,
    kv_peak_bytes: u128,
    kv_display: String,
    activations_bytes: u128,
    activations_display: String,
    kv_to_weights_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights_split: Option<model::DeviceSplit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kv_split: Option<model::DeviceSplit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activations_split: Option<model::DeviceSplit>,
}

fn cmd_footprint(args: FootprintArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let workload = workload_of(args.s, args.n)?;
    if args.batch == 0 {
        return Err(CmdError::Input("batch must be at least 1".into()));
    }
    let policy = args.policy.as_deref().map(load_policy).transpose()?;
    let report = model::footprint(&model, args.batch, &workload, policy.as_ref());
    print_json(&FootprintReport {
        model: args.model,
        batch: args.batch,
        prompt_len: args.s,
        gen_len: args.n,
        weights_bytes: report.weights_bytes,
        weights_display: format_bytes(report.weights_bytes),
        kv_peak_bytes: report.kv_peak_bytes,
        kv_display: format_bytes(report.kv_peak_bytes),
        activations_bytes: report.activations_bytes,
        activations_display: format_bytes(report.activations_bytes),
        kv_to_weights_ratio: report.kv_peak_bytes as f64 / report.weights_bytes as f64,
        weights_split: report.weights_split,
        kv_split: report.kv_split,
        activations_split: report.activations_split,
    })
}

// --------------------------------------------------------------------- plan

#[derive(Args)]
struct PlanArgs {
    /// Model preset name or path to a model JSON file.
    #[arg(long)]
    model: String,
    /// Hardware preset name or path to a profile JSON file.
    #[arg(long)]
    hw: String,
    /// Prompt length in tokens.
    #[arg(long)]
    s: u64,
    /// Tokens to generate per sequence.
    #[arg(long)]
    n: u64,
    /// Comma-separated GPU batch sizes to try (default 4,8,...,256).
    #[arg(long, value_delimiter = ',', value_name = "N,N,...")]
    gbs: Option<Vec<u64>>,
    /// Largest GPU-batch count per block to try (default 20).
    #[arg(long, value_name = "N")]
    num_gpu_batches: Option<u64>,
    /// Upper bound on block latency in seconds.
    #[arg(long, value_name = "SECONDS")]
    latency_ceiling: Option<f64>,
    /// Fix a placement fraction, e.g. --pin wg=0.5 (repeatable).
    #[arg(long, value_name = "NAME=VALUE")]
    pin: Vec<String>,
    /// Quantize weights and KV cache (4-bit, group 64) during the search.
    #[arg(long)]
    compress: bool,
    /// Keep decode attention on the GPU even for offloaded cache.
    #[arg(long)]
    no_delegation: bool,
    /// Check the result against a placement grid at this resolution.
    #[arg(long, value_name = "RES")]
    oracle_check: Option<f64>,
}

#[derive(Serialize)]
struct OracleReport {
    resolution: f64,
    /// Best objective over the fraction grid, seconds per block-token.
    grid_objective: f64,
    grid_fractions: [f64; 9],
    lp_objective: f64,
    /// (grid - lp) / grid; how far the grid sits above the LP bound.
    gap_fraction: f64,
    lp_at_or_below_grid: bool,
}

#[derive(Serialize)]
struct PlanWithOracle {
    plan: PlanResult,
    oracle_check: OracleReport,
}

fn parse_pins(specs: &[String]) -> Result<[Option<f64>; 9], CmdError> {
    let mut pins = [None; 9];
    for spec in specs {
        let (name, value) = spec.split_once('=').ok_or_else(|| {
            CmdError::Input(format!("pin `{spec}` is not of the form name=value"))
        })?;
        let idx = FRACTION_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| {
                CmdError::Input(format!(
                    "unknown fraction `{name}` (expected one of {})",
                    FRACTION_NAMES.join(", ")
                ))
            })?;
        let v: f64 = value
            .parse()
            .map_err(|e| CmdError::Input(format!("pin `{spec}`: {e}")))?;
        if pins[idx].is_some() {
            return Err(CmdError::Input(format!("fraction `{name}` pinned twice")));
        }
        pins[idx] = Some(v);
    }
    Ok(pins)
}

fn plan_error(e: PlanError) -> CmdError {
    match e {
        PlanError::NoFeasible(_) => CmdError::Infeasible(e.to_string()),
        _ => CmdError::Input(e.to_string()),
    }
}

fn cmd_plan(args: PlanArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let hw = load_hardware(&args.hw)?;
    let workload = workload_of(args.s, args.n)?;
    let mut config = SearchConfig {
        pins: parse_pins(&args.pin)?,
        latency_ceiling: args.latency_ceiling,
        cpu_delegation: !args.no_delegation,
        compression: args.compress.then(QuantConfig::default),
        ..SearchConfig::default()
    };
    if let Some(gbs) = args.gbs {
        config.gbs_candidates = gbs;
    }
    if let Some(nb) = args.num_gpu_batches {
        config.max_num_gpu_batches = nb;
    }
    if let Some(res) = args.oracle_check {
        if !(res > 0.0 && res <= 1.0) {
            return Err(CmdError::Input(format!(
                "oracle resolution {res} is outside (0, 1]"
            )));
        }
    }

    let result = plan(&model, &hw, &workload, &config).map_err(plan_error)?;

    match args.oracle_check {
        None => print_json(&result),
        Some(res) => {
            let coeffs = coeffs_for_policy(&result.policy, &model, &hw, &workload);
            let grid = grid_oracle(&coeffs, &hw, res).ok_or_else(|| {
                CmdError::Infeasible("no grid point at this resolution fits".into())
            })?;
            let lp = result.lp_objective;
            let oracle_check = OracleReport {
                resolution: res,
                grid_objective: grid.objective,
                grid_fractions: grid.fractions,
                lp_objective: lp,
                gap_fraction: (grid.objective - lp) / grid.objective,
                lp_at_or_below_grid: lp <= grid.objective * (1.0 + 1e-9) + 1e-12,
            };
            print_json(&PlanWithOracle {
                plan: result,
                oracle_check,
            })
        }
    }
}

// ----------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineArg {
    /// All weights on CPU (disk if they do not fit), cache and activations
    /// on GPU, single batch per block.
    #[value(alias = "deepspeed")]
    DeepspeedLike,
    /// As many whole layers as fit on the GPU, remainder on CPU or disk.
    #[value(alias = "accelerate")]
    AccelerateLike,
}

impl BaselineArg {
    fn kind(self) -> BaselineKind {
        match self {
            BaselineArg::DeepspeedLike => BaselineKind::DeepSpeedLike,
            BaselineArg::AccelerateLike => BaselineKind::AccelerateLike,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Model preset name or path to a model JSON file.
    #[arg(long)]
    model: String,
    /// Hardware preset name or path to a profile JSON file.
    #[arg(long)]
    hw: String,
    /// Prompt length in tokens.
    #[arg(long)]
    s: u64,
    /// Tokens to generate per sequence.
    #[arg(long)]
    n: u64,
    /// Policy JSON file to simulate.
    #[arg(long, value_name = "PATH", conflicts_with = "baseline")]
    policy: Option<PathBuf>,
    /// Simulate a named baseline configuration instead of a policy file.
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    /// Split the layers over this many pipeline stages.
    #[arg(long, value_name = "M", default_value_t = 1)]
    pipeline: u64,
    /// Also run the planner and report the planned-vs-baseline ratio.
    #[arg(long, value_parser = ["planned"], value_name = "WHAT")]
    compare: Option<String>,
    /// Write the event timeline as CSV to this path.
    #[arg(long, value_name = "PATH")]
    events_csv: Option<PathBuf>,
    /// Simulate even where a device's capacity is exceeded.
    #[arg(long)]
    allow_oom: bool,
}

#[derive(Serialize)]
struct SimulateReport {
    policy: Policy,
    result: SimResult,
}

#[derive(Serialize)]
struct PipelineReport {
    policy: Policy,
    result: PipelineResult,
}

#[derive(Serialize)]
struct CompareSide {
    policy: Policy,
    result: SimResult,
}

#[derive(Serialize)]
struct CompareReport {
    baseline_kind: BaselineKind,
    baseline: CompareSide,
    planned: CompareSide,
    /// planned generation throughput over baseline generation throughput.
    throughput_ratio: f64,
}

fn sim_error(e: SimError) -> CmdError {
    match e {
        SimError::Oom { .. } => CmdError::Infeasible(e.to_string()),
        _ => CmdError::Input(e.to_string()),
    }
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let hw = load_hardware(&args.hw)?;
    let workload = workload_of(args.s, args.n)?;

    // Published baseline shapes may overshoot this capacity model slightly;
    // they are priced as configured rather than rejected.
    let (policy, baseline_oom) = match (&args.policy, args.baseline) {
        (Some(path), None) => (load_policy(path)?, false),
        (None, Some(kind)) => (
            baseline_policy(kind.kind(), &model, &hw, &workload).map_err(plan_error)?,
            true,
        ),
        _ => {
            return Err(CmdError::Input(
                "provide exactly one of --policy or --baseline".into(),
            ))
        }
    };
    let config = SimConfig {
        record_events: args.events_csv.is_some(),
        allow_oom: args.allow_oom || baseline_oom,
    };

    if let Some(what) = &args.compare {
        debug_assert_eq!(what, "planned");
        if args.baseline.is_none() {
            return Err(CmdError::Input("--compare planned needs --baseline".into()));
        }
        if args.pipeline != 1 {
            return Err(CmdError::Input(
                "--compare reports plain block execution; drop --pipeline".into(),
            ));
        }
        let baseline_result = simulate(&model, &hw, &workload, &policy, &config).map_err(sim_error)?;
        let planned =
            plan(&model, &hw, &workload, &SearchConfig::default()).map_err(plan_error)?;
        let planned_config = SimConfig {
            record_events: false,
            allow_oom: false,
        };
        let planned_result =
            simulate(&model, &hw, &workload, &planned.policy, &planned_config).map_err(sim_error)?;
        let ratio =
            planned_result.generation_throughput / baseline_result.generation_throughput;
        let report = CompareReport {
            baseline_kind: args.baseline.expect("checked above").kind(),
            baseline: CompareSide {
                policy,
                result: strip_events(baseline_result, args.events_csv.as_deref())?,
            },
            planned: CompareSide {
                policy: planned.policy,
                result: planned_result,
            },
            throughput_ratio: ratio,
        };
        return print_json(&report);
    }

    if args.pipeline != 1 {
        if args.events_csv.is_some() {
            return Err(CmdError::Input(
                "the event timeline is only recorded without --pipeline".into(),
            ));
        }
        let result = simulate_pipeline(&model, &hw, &workload, &policy, args.pipeline, &config)
            .map_err(sim_error)?;
        return print_json(&PipelineReport { policy, result });
    }

    let result = simulate(&model, &hw, &workload, &policy, &config).map_err(sim_error)?;
    let result = strip_events(result, args.events_csv.as_deref())?;
    print_json(&SimulateReport { policy, result })
}

/// Writes recorded events to `path` and drops them from the JSON report.
fn strip_events(mut result: SimResult, path: Option<&Path>) -> Result<SimResult, CmdError> {
    if let Some(path) = path {
        let events = result.events.take().unwrap_or_default();
        let file = fs::File::create(path).map_err(|e| file_err(path, e))?;
        export_events_csv(&events, file).map_err(|e| file_err(path, e))?;
    }
    result.events = None;
    Ok(result)
}

// ----------------------------------------------------------------- schedule

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleKind {
    /// Row-by-row traversal, reloading each layer for every row.
    #[value(alias = "row-major")]
    Row,
    /// Column-by-column within a block, one weight load per column.
    Zigzag,
    /// Staggered waves meeting the weight-I/O lower bound in steady state.
    Diagonal,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Traversal order.
    #[arg(long, value_enum)]
    kind: ScheduleKind,
    /// Independent sequences (rows) in the compute graph.
    #[arg(long)]
    rows: u64,
    /// Tokens generated per row.
    #[arg(long)]
    n: u64,
    /// Layers per token column.
    #[arg(long)]
    l: u64,
    /// Prompt length in tokens.
    #[arg(long)]
    s: u64,
    /// Block size in rows (default: all rows in one block).
    #[arg(long)]
    bls: Option<u64>,
    /// Model preset or JSON path; needed for byte accounting and budgets.
    #[arg(long)]
    model: Option<String>,
    /// Report weight, activation, and KV bytes moved by the trace.
    #[arg(long)]
    account: bool,
    /// Cache capacity in bytes; reports the weight-load lower bound and the
    /// trace's loads under that budget.
    #[arg(long, value_name = "BYTES")]
    cmem: Option<u128>,
    /// Search all orderings for the minimum weight loads (small graphs).
    #[arg(long)]
    brute_force: bool,
    /// Write the trace as CSV to this path.
    #[arg(long, value_name = "PATH")]
    trace_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct BudgetReport {
    capacity_units: u64,
    lower_bound_loads: u64,
    trace_loads: u64,
    trace_loads_per_row: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagonal_steady_loads_per_cycle: Option<u64>,
}

#[derive(Serialize)]
struct BruteForceReport {
    weight_loads: u64,
    weight_loads_per_row: f64,
}

#[derive(Serialize)]
struct ScheduleReport {
    kind: &'static str,
    rows: u64,
    tokens: u64,
    layers: u64,
    prompt_len: u64,
    block_size: u64,
    steps: usize,
    weight_loads_total: u64,
    weight_loads_per_row: f64,
    /// Loads per layer color, summed over the trace.
    weight_load_count: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    io: Option<IoAccount>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<BudgetReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    brute_force: Option<BruteForceReport>,
}

fn build_trace(kind: ScheduleKind, graph: &ComputeGraph, bls: u64) -> Result<ScheduleTrace, CmdError> {
    match kind {
        ScheduleKind::Row => Ok(schedule::row_major(graph)),
        ScheduleKind::Zigzag => schedule::zigzag(graph, bls).map_err(input),
        ScheduleKind::Diagonal => schedule::diagonal(graph, bls).map_err(input),
    }
}

fn cmd_schedule(args: ScheduleArgs) -> CmdResult {
    let graph = ComputeGraph::new(args.rows, args.n, args.l, args.s).map_err(input)?;
    let bls = args.bls.unwrap_or(args.rows);
    let trace = build_trace(args.kind, &graph, bls)?;
    let model = args.model.as_deref().map(load_model).transpose()?;

    let mut loads_per_color = vec![0u64; graph.layers as usize];
    for step in &trace.steps {
        if let Some(c) = step.weight_load {
            loads_per_color[c as usize] += 1;
        }
    }

    let io = if args.account {
        let model = model
            .as_ref()
            .ok_or_else(|| CmdError::Input("--account needs --model".into()))?;
        Some(io_account(&trace, model))
    } else {
        None
    };

    let budget = args
        .cmem
        .map(|cmem| {
            let model = model
                .as_ref()
                .ok_or_else(|| CmdError::Input("--cmem needs --model".into()))?;
            let budget = budget_from_bytes(cmem, model);
            if budget.units == 0 {
                return Err(CmdError::Input(format!(
                    "{cmem} bytes hold no cache at all for this model"
                )));
            }
            let trace_loads =
                budget_weight_loads(&trace.square_order(), &graph, &budget).map_err(input)?;
            Ok(BudgetReport {
                capacity_units: budget.units,
                lower_bound_loads: io_lower_bound(&graph, &budget),
                trace_loads,
                trace_loads_per_row: trace_loads as f64 / graph.rows as f64,
                diagonal_steady_loads_per_cycle: diagonal_steady_loads_per_cycle(&trace, &budget)
                    .map_err(input)?,
            })
        })
        .transpose()?;

    let brute_force = if args.brute_force {
        let budget = budget
            .as_ref()
            .ok_or_else(|| CmdError::Input("--brute-force needs --cmem and --model".into()))?;
        let result = brute_force_optimal(
            &graph,
            &schedule::CacheBudget {
                units: budget.capacity_units,
            },
        )
        .map_err(input)?;
        Some(BruteForceReport {
            weight_loads: result.weight_loads,
            weight_loads_per_row: result.weight_loads as f64 / graph.rows as f64,
        })
    } else {
        None
    };

    if let Some(path) = &args.trace_csv {
        let file = fs::File::create(path).map_err(|e| file_err(path, e))?;
        schedule::export_csv(&trace, file).map_err(|e| file_err(path, e))?;
    }

    print_json(&ScheduleReport {
        kind: match args.kind {
            ScheduleKind::Row => "row",
            ScheduleKind::Zigzag => "zigzag",
            ScheduleKind::Diagonal => "diagonal",
        },
        rows: graph.rows,
        tokens: graph.tokens,
        layers: graph.layers,
        prompt_len: graph.prompt_len,
        block_size: trace.block_size,
        steps: trace.steps.len(),
        weight_loads_total: loads_per_color.iter().sum(),
        weight_loads_per_row: loads_per_color.iter().sum::<u64>() as f64 / graph.rows as f64,
        weight_load_count: loads_per_color,
        io,
        budget,
        brute_force,
    })
}

// ----------------------------------------------------------------- quantize

#[derive(Args)]
struct QuantizeArgs {
    /// Raw little-endian half-precision tensor file.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Output path for the quantized payload.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Code width in bits (1..=8, or 16 for passthrough).
    #[arg(long)]
    bits: u8,
    /// Elements per quantization group.
    #[arg(long, default_value_t = 64)]
    group: u64,
    /// Decode the result and check the per-group round-trip error bound.
    #[arg(long)]
    verify: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    max_abs_error: f64,
    /// Largest per-group error relative to that group's half-step bound
    /// (max-min) / (2 (2^bits - 1)); 0 for constant groups and passthrough.
    worst_error_to_bound: f64,
    bound_satisfied: bool,
}

/// Half-step quantization bound plus one single-precision ulp at the
/// group's magnitude, covering the final cast of decoded values to f32.
fn group_bound(lo: f64, hi: f64, levels: f64) -> f64 {
    let cast_slack = lo.abs().max(hi.abs()) * f32::EPSILON as f64;
    (hi - lo) / (2.0 * levels) + cast_slack
}

#[derive(Serialize)]
struct QuantizeReport {
    elements: usize,
    bits: u8,
    group_size: u64,
    effective_bits: f64,
    effective_ratio: f64,
    input_bytes: u64,
    payload_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<VerifyReport>,
}

/// Checks every group's round-trip error against its half-step bound.
fn verify_roundtrip(data: &[f32], decoded: &[f32], bits: u8, group: usize) -> VerifyReport {
    let levels = if bits >= 16 {
        f64::INFINITY
    } else {
        ((1u32 << bits) - 1) as f64
    };
    let mut max_abs_error: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let mut satisfied = true;
    for (orig, deq) in data.chunks(group).zip(decoded.chunks(group)) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in orig {
            lo = lo.min(v as f64);
            hi = hi.max(v as f64);
        }
        let bound = group_bound(lo, hi, levels);
        let mut err: f64 = 0.0;
        for (&a, &b) in orig.iter().zip(deq) {
            err = err.max((a as f64 - b as f64).abs());
        }
        max_abs_error = max_abs_error.max(err);
        if err > bound {
            satisfied = false;
        }
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(err / bound);
        } else if err > 0.0 {
            worst_ratio = f64::INFINITY;
        }
    }
    VerifyReport {
        max_abs_error,
        worst_error_to_bound: worst_ratio,
        bound_satisfied: satisfied,
    }
}

fn cmd_quantize(args: QuantizeArgs) -> CmdResult {
    let bytes = fs::read(&args.input).map_err(|e| file_err(&args.input, e))?;
    if bytes.is_empty() || bytes.len() % 2 != 0 {
        return Err(CmdError::Input(format!(
            "{}: expected a nonempty, even-length half-precision file, got {} bytes",
            args.input.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(2)
        .map(|pair| compress::f16_bits_to_f32(u16::from_le_bytes([pair[0], pair[1]])))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CmdError::Input(format!(
            "{}: input holds non-finite values",
            args.input.display()
        )));
    }

    let cfg = QuantConfig {
        bits: args.bits,
        group_size: args.group,
        ..QuantConfig::default()
    };
    let elements = data.len();
    let tensor = Tensor::new(data, vec![elements]).map_err(input)?;
    let quantized = compress::quantize(&tensor, &cfg, 0).map_err(input)?;
    let payload = compress::to_bytes(&quantized);

    if let Some(path) = &args.output {
        fs::write(path, &payload).map_err(|e| file_err(path, e))?;
    }

    // Verification decodes the serialized payload, not the in-memory form,
    // so the narrowed per-group metadata is part of what is checked.
    let verify = args
        .verify
        .then(|| -> Result<VerifyReport, CmdError> {
            let restored = compress::from_bytes(&payload).map_err(input)?;
            let decoded = compress::dequantize(&restored);
            Ok(verify_roundtrip(
                &tensor.data,
                &decoded.data,
                args.bits,
                args.group as usize,
            ))
        })
        .transpose()?;
    let failed = verify.as_ref().is_some_and(|v| !v.bound_satisfied);

    print_json(&QuantizeReport {
        elements,
        bits: args.bits,
        group_size: args.group,
        effective_bits: cfg.effective_bits(),
        effective_ratio: cfg.effective_ratio(),
        input_bytes: bytes.len() as u64,
        payload_bytes: payload.len() as u64,
        output: args.output.map(|p| p.display().to_string()),
        verify,
    })?;

    if failed {
        return Err(CmdError::Infeasible(
            "round-trip error exceeds the per-group bound".into(),
        ));
    }
    Ok(())
}
