//! Compute-graph schedules and their I/O theory: row-major, zig-zag, and
//! diagonal traversals, trace validation, exact I/O accounting, block-size
//! bounds, the weight-I/O lower bound, and a brute-force optimality oracle.
//!
//! Two accountings coexist deliberately. Trace walks (`validate_trace`,
//! `trace_peak_bytes`, `io_account`) price physical bytes: a row in progress
//! holds its activations plus KV cache for every layer, and zig-zag blocks
//! pre-allocate full-length cache buffers while the other traversals grow
//! them per finished token. The optimality machinery (`io_lower_bound`,
//! `budget_weight_loads`, `brute_force_optimal`) instead uses the proof's
//! relaxed units: activations are ignored and each computed square charges
//! its own layer's cache, s+i-1 token-units for the i-th token, against the
//! capacity available per weight-residency window. The two agree on weight
//! load counts where both are defined; only the optimality results use the
//! relaxed units.

use crate::model::{elements_to_bytes, weight_bytes, ModelSpec, Workload};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("graph dimensions must be nonzero")]
    EmptyGraph,
    #[error("block size {bls} is invalid for {rows} rows: {reason}")]
    InvalidBlockSize { bls: u64, rows: u64, reason: String },
    #[error("weights alone exceed capacity ({weight_bytes} >= {cmem} bytes)")]
    WeightsExceedCapacity { weight_bytes: u128, cmem: u128 },
    #[error("graph has {squares} squares, above the brute-force cap of {cap}")]
    SizeCap { squares: u64, cap: u64 },
    #[error("a single square needs {needed} cache units but capacity is {capacity}")]
    UnschedulableSquare { needed: u64, capacity: u64 },
}

/// The block's computational graph: `rows` independent samples, each a
/// `tokens * layers` strip of squares. Squares in the same layer share
/// weights (the layer index is the square's color). `prompt_len` sets the
/// KV-cache cost of each token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComputeGraph {
    pub rows: u64,
    pub tokens: u64,
    pub layers: u64,
    pub prompt_len: u64,
}

impl ComputeGraph {
    pub fn new(rows: u64, tokens: u64, layers: u64, prompt_len: u64) -> Result<Self, ScheduleError> {
        if rows == 0 || tokens == 0 || layers == 0 || prompt_len == 0 {
            return Err(ScheduleError::EmptyGraph);
        }
        Ok(ComputeGraph {
            rows,
            tokens,
            layers,
            prompt_len,
        })
    }

    pub fn squares(&self) -> u64 {
        self.rows * self.tokens * self.layers
    }

    pub fn columns(&self) -> u64 {
        self.tokens * self.layers
    }

    /// KV token-units charged by the proof for a square of the given token
    /// (0-based): s + i - 1 for the 1-based token i.
    pub fn square_cost_units(&self, token: u64) -> u64 {
        self.prompt_len + token
    }
}

/// One (row, token, layer) unit of compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Square {
    pub row: u64,
    pub token: u64,
    pub layer: u64,
}

impl Square {
    pub fn column(&self, graph: &ComputeGraph) -> u64 {
        self.token * graph.layers + self.layer
    }

    pub fn color(&self) -> u64 {
        self.layer
    }
}

/// How a trace budgets KV-cache memory in the physical walk: zig-zag blocks
/// allocate every row's full-length buffer up front, the other traversals
/// grow caches as tokens finish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheLayout {
    Preallocated,
    Grown,
}

/// One computed square plus the I/O attached to it: an optional weight load
/// right before the compute, and the rows whose buffers are released right
/// after it. Activation and KV movement per square is implied by the token
/// index and priced by `io_account`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub square: Square,
    pub weight_load: Option<u64>,
    pub frees: Vec<u64>,
}

/// Window metadata for diagonal traces: where each diagonal starts and how
/// many waves it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagonalPhase {
    pub start_step: usize,
    pub active_waves: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTrace {
    pub graph: ComputeGraph,
    pub steps: Vec<TraceStep>,
    pub layout: CacheLayout,
    pub block_size: u64,
    pub diagonal_phases: Vec<DiagonalPhase>,
}

/// Sorted (descending) 1-based column indices of the rows in progress.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorkingState {
    pub columns: Vec<u64>,
}

impl ScheduleTrace {
    pub fn square_order(&self) -> Vec<Square> {
        self.steps.iter().map(|s| s.square).collect()
    }

    /// Working state after each step.
    pub fn working_states(&self) -> Vec<WorkingState> {
        let mut progress: HashMap<u64, u64> = HashMap::new();
        let last = self.graph.columns();
        let mut out = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let col = step.square.column(&self.graph) + 1;
            if col == last {
                progress.remove(&step.square.row);
            } else {
                progress.insert(step.square.row, col);
            }
            let mut columns: Vec<u64> = progress.values().copied().collect();
            columns.sort_unstable_by(|a, b| b.cmp(a));
            out.push(WorkingState { columns });
        }
        out
    }
}

/// One sample at a time, left to right; weights load on every color switch
/// and buffers free when the row finishes.
pub fn row_major(graph: &ComputeGraph) -> ScheduleTrace {
    let mut steps = Vec::with_capacity(graph.squares() as usize);
    let mut resident: Option<u64> = None;
    for row in 0..graph.rows {
        for token in 0..graph.tokens {
            for layer in 0..graph.layers {
                let square = Square { row, token, layer };
                let weight_load = if resident != Some(layer) {
                    resident = Some(layer);
                    Some(layer)
                } else {
                    None
                };
                let frees = if token == graph.tokens - 1 && layer == graph.layers - 1 {
                    vec![row]
                } else {
                    vec![]
                };
                steps.push(TraceStep {
                    square,
                    weight_load,
                    frees,
                });
            }
        }
    }
    ScheduleTrace {
        graph: *graph,
        steps,
        layout: CacheLayout::Grown,
        block_size: 1,
        diagonal_phases: vec![],
    }
}

/// Blocks of `bls` rows traversed column by column: every column of every
/// block loads its layer's weights once and runs all the block's rows with
/// them. Cache buffers are pre-allocated per block and freed at block end.
pub fn zigzag(graph: &ComputeGraph, bls: u64) -> Result<ScheduleTrace, ScheduleError> {
    if bls == 0 || bls > graph.rows {
        return Err(ScheduleError::InvalidBlockSize {
            bls,
            rows: graph.rows,
            reason: "block size must be in 1..=rows".into(),
        });
    }
    let mut steps = Vec::with_capacity(graph.squares() as usize);
    let mut block_start = 0;
    while block_start < graph.rows {
        let block_end = (block_start + bls).min(graph.rows);
        for token in 0..graph.tokens {
            for layer in 0..graph.layers {
                for row in block_start..block_end {
                    let last_of_block = token == graph.tokens - 1
                        && layer == graph.layers - 1
                        && row == block_end - 1;
                    steps.push(TraceStep {
                        square: Square { row, token, layer },
                        weight_load: (row == block_start).then_some(layer),
                        frees: if last_of_block {
                            (block_start..block_end).collect()
                        } else {
                            vec![]
                        },
                    });
                }
            }
        }
        block_start = block_end;
    }
    Ok(ScheduleTrace {
        graph: *graph,
        steps,
        layout: CacheLayout::Preallocated,
        block_size: bls,
        diagonal_phases: vec![],
    })
}

/// Staggered waves of `bls / tokens` rows: each diagonal admits one wave,
/// advances every active wave by one token, and sweeps the layers as
/// sub-diagonals that each load their weights once. After the warm-up,
/// `tokens` waves run at once and every sub-diagonal computes one token of
/// every wave. A single-row graph degenerates to the row-major order.
pub fn diagonal(graph: &ComputeGraph, bls: u64) -> Result<ScheduleTrace, ScheduleError> {
    if graph.rows == 1 {
        let mut t = row_major(graph);
        t.block_size = bls.max(1);
        return Ok(t);
    }
    let n = graph.tokens;
    if bls == 0 || bls > graph.rows || bls % n != 0 {
        return Err(ScheduleError::InvalidBlockSize {
            bls,
            rows: graph.rows,
            reason: format!("diagonal needs a block size in 1..=rows divisible by tokens ({n})"),
        });
    }
    let g = bls / n;
    if graph.rows % g != 0 {
        return Err(ScheduleError::InvalidBlockSize {
            bls,
            rows: graph.rows,
            reason: format!("rows must split into whole waves of {g}"),
        });
    }
    let waves = graph.rows / g;
    let mut steps = Vec::with_capacity(graph.squares() as usize);
    let mut phases = Vec::new();
    let diagonals = waves + n - 1;
    for d in 0..diagonals {
        let w_lo = d.saturating_sub(n - 1);
        let w_hi = d.min(waves - 1);
        phases.push(DiagonalPhase {
            start_step: steps.len(),
            active_waves: w_hi - w_lo + 1,
        });
        for layer in 0..graph.layers {
            let mut loaded = false;
            for w in w_lo..=w_hi {
                let token = d - w;
                for r in 0..g {
                    let row = w * g + r;
                    let finishes = token == n - 1 && layer == graph.layers - 1;
                    steps.push(TraceStep {
                        square: Square { row, token, layer },
                        weight_load: (!loaded).then_some(layer),
                        frees: if finishes { vec![row] } else { vec![] },
                    });
                    loaded = true;
                }
            }
        }
    }
    Ok(ScheduleTrace {
        graph: *graph,
        steps,
        layout: CacheLayout::Grown,
        block_size: bls,
        diagonal_phases: phases,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceViolation {
    LeftDependency { step: usize, square: Square },
    Missing { squares: u64 },
    Retention { step: usize, row: u64 },
    Capacity { step: usize, needed_bytes: u128, capacity_bytes: u128 },
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceViolation::LeftDependency { step, square } => write!(
                f,
                "left-dependency violated at step {step}: row {} token {} layer {} is not the row's next square",
                square.row, square.token, square.layer
            ),
            TraceViolation::Missing { squares } => {
                write!(f, "trace is missing {squares} squares")
            }
            TraceViolation::Retention { step, row } => write!(
                f,
                "cache for row {row} freed before its rightmost square at step {step}"
            ),
            TraceViolation::Capacity {
                step,
                needed_bytes,
                capacity_bytes,
            } => write!(
                f,
                "capacity exceeded at step {step}: needs {needed_bytes} bytes, capacity {capacity_bytes}"
            ),
        }
    }
}

/// Physical byte walk shared by validation and peak measurement. Resident
/// memory at a step is all weights, one decode-sized activation per live
/// row, and per-row KV cache under the trace's layout rule.
struct Walk<'a> {
    trace: &'a ScheduleTrace,
    h1: u128,
    bpe: f64,
    weights: u128,
}

impl<'a> Walk<'a> {
    fn new(trace: &'a ScheduleTrace, model: &ModelSpec) -> Walk<'a> {
        Walk {
            trace,
            h1: model.hidden as u128,
            bpe: model.bytes_per_element,
            weights: weight_bytes(model),
        }
    }

    fn act_bytes(&self) -> u128 {
        elements_to_bytes(self.h1, self.bpe)
    }

    fn full_cache_bytes(&self) -> u128 {
        let g = &self.trace.graph;
        let tokens = (g.prompt_len + g.tokens) as u128;
        elements_to_bytes(2 * self.h1 * g.layers as u128 * tokens, self.bpe)
    }

    fn grown_cache_bytes(&self, finished_tokens: u64) -> u128 {
        if finished_tokens == 0 {
            return 0;
        }
        let g = &self.trace.graph;
        let tokens = (g.prompt_len + finished_tokens) as u128;
        elements_to_bytes(2 * self.h1 * g.layers as u128 * tokens, self.bpe)
    }

    /// Returns the peak bytes and the first capacity violation, if any.
    /// Memory is sampled while each square runs, so a token's new KV entry
    /// joins the tally only once the token's last layer has finished.
    fn run(&self, capacity: Option<u128>) -> (u128, Option<TraceViolation>) {
        let g = &self.trace.graph;
        let mut columns_done: HashMap<u64, u64> = HashMap::new();
        let mut live: HashMap<u64, bool> = HashMap::new();
        let mut peak = 0u128;
        let mut violation = None;
        for (i, step) in self.trace.steps.iter().enumerate() {
            let row = step.square.row;
            live.entry(row).or_insert(true);
            let mut mem = self.weights;
            for (&r, _) in live.iter().filter(|(_, &alive)| alive) {
                mem += self.act_bytes();
                mem += match self.trace.layout {
                    CacheLayout::Preallocated => self.full_cache_bytes(),
                    CacheLayout::Grown => {
                        self.grown_cache_bytes(columns_done.get(&r).copied().unwrap_or(0) / g.layers)
                    }
                };
            }
            peak = peak.max(mem);
            if violation.is_none() {
                if let Some(cap) = capacity {
                    if mem > cap {
                        violation = Some(TraceViolation::Capacity {
                            step: i,
                            needed_bytes: mem,
                            capacity_bytes: cap,
                        });
                    }
                }
            }
            *columns_done.entry(row).or_insert(0) += 1;
            for &r in &step.frees {
                live.insert(r, false);
            }
        }
        (peak, violation)
    }
}

/// Checks the trace against the graph: each row computes its squares left
/// to right exactly once, nothing runs after its buffers were freed, rows
/// free no earlier than their rightmost square, and (when a capacity is
/// given) the physical walk never exceeds it.
pub fn validate_trace(
    trace: &ScheduleTrace,
    model: &ModelSpec,
    capacity_bytes: Option<u128>,
) -> Result<(), TraceViolation> {
    let g = &trace.graph;
    let mut next_column: HashMap<u64, u64> = HashMap::new();
    let mut freed: HashMap<u64, bool> = HashMap::new();
    let mut computed = 0u64;
    for (i, step) in trace.steps.iter().enumerate() {
        let sq = step.square;
        let expected = next_column.get(&sq.row).copied().unwrap_or(0);
        if sq.row >= g.rows || sq.column(g) != expected {
            return Err(TraceViolation::LeftDependency { step: i, square: sq });
        }
        if freed.get(&sq.row).copied().unwrap_or(false) {
            return Err(TraceViolation::Retention { step: i, row: sq.row });
        }
        next_column.insert(sq.row, expected + 1);
        computed += 1;
        for &r in &step.frees {
            if next_column.get(&r).copied().unwrap_or(0) < g.columns() {
                return Err(TraceViolation::Retention { step: i, row: r });
            }
            freed.insert(r, true);
        }
    }
    if computed != g.squares() {
        return Err(TraceViolation::Missing {
            squares: g.squares() - computed,
        });
    }
    if let (_, Some(v)) = Walk::new(trace, model).run(capacity_bytes) {
        return Err(v);
    }
    Ok(())
}

/// Max resident bytes over the physical walk of the trace.
pub fn trace_peak_bytes(trace: &ScheduleTrace, model: &ModelSpec) -> u128 {
    Walk::new(trace, model).run(None).0
}

/// Event-summed I/O of a trace. For zig-zag traces the activation and KV
/// totals equal the closed forms 2(2 h1 s bls l + 2 h1 bls l (n-1)) and
/// 4 h1 bls l (s n + n(n-1)/2) exactly.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IoAccount {
    pub weight_bytes_loaded: u128,
    pub activation_bytes_moved: u128,
    pub kv_bytes_moved: u128,
    pub weight_loads_total: u64,
    pub weight_load_count: Vec<u64>,
}

pub fn io_account(trace: &ScheduleTrace, model: &ModelSpec) -> IoAccount {
    let g = &trace.graph;
    let h1 = model.hidden as u128;
    let s = g.prompt_len as u128;
    let layer_w = elements_to_bytes(model.layer_weight_elements(), model.bytes_per_element);
    let mut loads_per_color = vec![0u64; g.layers as usize];
    let mut act_elems = 0u128;
    let mut kv_elems = 0u128;
    for step in &trace.steps {
        if let Some(color) = step.weight_load {
            loads_per_color[color as usize] += 1;
        }
        // Every square reloads its input activations and stores its output,
        // both prompt-sized for the first token and single-token after.
        let act_len = if step.square.token == 0 { s } else { 1 };
        act_elems += 2 * act_len * h1;
        // The first token writes the prompt's KV; each later token reads the
        // cache built so far and appends one entry.
        let (kv_load, kv_store) = if step.square.token == 0 {
            (0, s)
        } else {
            (s + step.square.token as u128 - 1, 1)
        };
        kv_elems += 2 * (kv_load + kv_store) * h1;
    }
    let weight_loads_total = loads_per_color.iter().sum();
    IoAccount {
        weight_bytes_loaded: layer_w * weight_loads_total as u128,
        activation_bytes_moved: elements_to_bytes(act_elems, model.bytes_per_element),
        kv_bytes_moved: elements_to_bytes(kv_elems, model.bytes_per_element),
        weight_loads_total,
        weight_load_count: loads_per_color,
    }
}

fn capacity_headroom(resident_weight_bytes: u128, cmem_bytes: u128) -> Result<f64, ScheduleError> {
    if cmem_bytes <= resident_weight_bytes {
        return Err(ScheduleError::WeightsExceedCapacity {
            weight_bytes: resident_weight_bytes,
            cmem: cmem_bytes,
        });
    }
    Ok((cmem_bytes - resident_weight_bytes) as f64)
}

/// Largest zig-zag block size that fits: bls <= (cmem - w) / (2 h1 + 4 h1 l (s+n)).
pub fn max_bls_zigzag(
    model: &ModelSpec,
    workload: &Workload,
    resident_weight_bytes: u128,
    cmem_bytes: u128,
) -> Result<u64, ScheduleError> {
    Ok(max_bls_zigzag_real(model, workload, resident_weight_bytes, cmem_bytes)?.floor() as u64)
}

fn max_bls_zigzag_real(
    model: &ModelSpec,
    workload: &Workload,
    resident_weight_bytes: u128,
    cmem_bytes: u128,
) -> Result<f64, ScheduleError> {
    let free = capacity_headroom(resident_weight_bytes, cmem_bytes)?;
    let h1 = model.hidden as f64;
    let l = model.layers as f64;
    let sn = (workload.prompt_len + workload.gen_len) as f64;
    let bpe = model.bytes_per_element / 2.0;
    Ok(free / ((2.0 * h1 + 4.0 * h1 * l * sn) * bpe))
}

/// Largest diagonal block size: bls <= n (cmem - w) / (2 h1 n + 2 h1 l (2s+n)(n-1)).
pub fn max_bls_diagonal(
    model: &ModelSpec,
    workload: &Workload,
    resident_weight_bytes: u128,
    cmem_bytes: u128,
) -> Result<u64, ScheduleError> {
    Ok(max_bls_diagonal_real(model, workload, resident_weight_bytes, cmem_bytes)?.floor() as u64)
}

fn max_bls_diagonal_real(
    model: &ModelSpec,
    workload: &Workload,
    resident_weight_bytes: u128,
    cmem_bytes: u128,
) -> Result<f64, ScheduleError> {
    let free = capacity_headroom(resident_weight_bytes, cmem_bytes)?;
    let h1 = model.hidden as f64;
    let l = model.layers as f64;
    let s = workload.prompt_len as f64;
    let n = workload.gen_len as f64;
    let bpe = model.bytes_per_element / 2.0;
    let denom = (2.0 * h1 * n + 2.0 * h1 * l * (2.0 * s + n) * (n - 1.0)) * bpe;
    Ok(n * free / denom)
}

/// Ratio of the two bounds before integer flooring.
pub fn bls_ratio(
    model: &ModelSpec,
    workload: &Workload,
    resident_weight_bytes: u128,
    cmem_bytes: u128,
) -> Result<f64, ScheduleError> {
    let z = max_bls_zigzag_real(model, workload, resident_weight_bytes, cmem_bytes)?;
    let d = max_bls_diagonal_real(model, workload, resident_weight_bytes, cmem_bytes)?;
    Ok(d / z)
}

/// KV cache capacity in the proof's units: one unit holds one token of one
/// layer's cache for one row (2 h1 elements).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheBudget {
    pub units: u64,
}

pub fn budget_from_bytes(bytes: u128, model: &ModelSpec) -> CacheBudget {
    let unit = elements_to_bytes(2 * model.hidden as u128, model.bytes_per_element);
    CacheBudget {
        units: (bytes / unit).min(u64::MAX as u128) as u64,
    }
}

/// Total proof-units demand of the whole graph: every square of token i
/// charges s+i-1 units.
pub fn total_demand_units(graph: &ComputeGraph) -> u128 {
    let s = graph.prompt_len as u128;
    let n = graph.tokens as u128;
    let per_row_layer = s * n + n * (n - 1) / 2;
    graph.rows as u128 * graph.layers as u128 * per_row_layer
}

/// Weight loads needed by any schedule: ceil(M / M') where M is the summed
/// unit cost of all squares and M' the per-residency capacity.
pub fn io_lower_bound(graph: &ComputeGraph, budget: &CacheBudget) -> u64 {
    let m = total_demand_units(graph);
    let mp = budget.units.max(1) as u128;
    m.div_ceil(mp) as u64
}

/// Replays a square order through the proof's budget machine: one resident
/// color at a time, each computed square charging its unit cost against the
/// current residency window; a color switch or an exhausted window forces a
/// fresh load. Returns the number of loads.
pub fn budget_weight_loads(
    order: &[Square],
    graph: &ComputeGraph,
    budget: &CacheBudget,
) -> Result<u64, ScheduleError> {
    let mut loads = 0u64;
    let mut resident: Option<u64> = None;
    let mut used = 0u64;
    for sq in order {
        let cost = graph.square_cost_units(sq.token);
        if cost > budget.units {
            return Err(ScheduleError::UnschedulableSquare {
                needed: cost,
                capacity: budget.units,
            });
        }
        if resident == Some(sq.color()) && used + cost <= budget.units {
            used += cost;
        } else {
            loads += 1;
            resident = Some(sq.color());
            used = cost;
        }
    }
    Ok(loads)
}

/// Budget-machine weight loads inside the trace's steady-state diagonals
/// (the ones running the full `tokens` waves), divided by their count.
/// None when the trace never reaches steady state or is not diagonal.
pub fn diagonal_steady_loads_per_cycle(
    trace: &ScheduleTrace,
    budget: &CacheBudget,
) -> Result<Option<u64>, ScheduleError> {
    let n = trace.graph.tokens;
    let steady: Vec<usize> = (0..trace.diagonal_phases.len())
        .filter(|&i| trace.diagonal_phases[i].active_waves == n)
        .collect();
    let (Some(&first), Some(&last)) = (steady.first(), steady.last()) else {
        return Ok(None);
    };
    if steady.len() != last - first + 1 {
        return Ok(None);
    }
    let start = trace.diagonal_phases[first].start_step;
    let end = trace
        .diagonal_phases
        .get(last + 1)
        .map_or(trace.steps.len(), |p| p.start_step);

    // Run the machine over the whole trace so the steady window starts from
    // a realistic residual state, then count loads inside the window.
    let mut loads_in_window = 0u64;
    let mut resident: Option<u64> = None;
    let mut used = 0u64;
    for (i, step) in trace.steps.iter().enumerate() {
        let sq = step.square;
        let cost = trace.graph.square_cost_units(sq.token);
        if cost > budget.units {
            return Err(ScheduleError::UnschedulableSquare {
                needed: cost,
                capacity: budget.units,
            });
        }
        let fresh = !(resident == Some(sq.color()) && used + cost <= budget.units);
        if fresh {
            resident = Some(sq.color());
            used = cost;
            if i >= start && i < end {
                loads_in_window += 1;
            }
        } else {
            used += cost;
        }
    }
    let cycles = steady.len() as u64;
    if loads_in_window % cycles != 0 {
        return Ok(None);
    }
    Ok(Some(loads_in_window / cycles))
}

/// A provably minimal-weight-I/O compute order under the proof's budget
/// accounting, found by shortest-path search over working states.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub weight_loads: u64,
    pub order: Vec<Square>,
}

const BRUTE_FORCE_SQUARE_CAP: u64 = 200;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct SearchState {
    /// Progress (1-based last computed column) per in-progress row, sorted
    /// descending. Identical rows are interchangeable.
    progress: Vec<u16>,
    unstarted: u16,
    resident: u16,
    used: u16,
}

const NO_COLOR: u16 = u16::MAX;

pub fn brute_force_optimal(
    graph: &ComputeGraph,
    budget: &CacheBudget,
) -> Result<BruteForceResult, ScheduleError> {
    if graph.squares() > BRUTE_FORCE_SQUARE_CAP {
        return Err(ScheduleError::SizeCap {
            squares: graph.squares(),
            cap: BRUTE_FORCE_SQUARE_CAP,
        });
    }
    let max_cost = graph.square_cost_units(graph.tokens - 1);
    if max_cost > budget.units {
        return Err(ScheduleError::UnschedulableSquare {
            needed: max_cost,
            capacity: budget.units,
        });
    }
    let columns = graph.columns() as u16;
    let start = SearchState {
        progress: vec![],
        unstarted: graph.rows as u16,
        resident: NO_COLOR,
        used: 0,
    };

    let cost_of = |column1: u16| -> u16 {
        // 1-based column c belongs to 0-based token (c-1)/layers.
        let token = (column1 as u64 - 1) / graph.layers;
        graph.square_cost_units(token) as u16
    };
    let color_of = |column1: u16| -> u16 { ((column1 as u64 - 1) % graph.layers) as u16 };

    let mut dist: HashMap<SearchState, u64> = HashMap::new();
    let mut prev: HashMap<SearchState, (SearchState, u16)> = HashMap::new();
    let mut heap: BinaryHeap<std::cmp::Reverse<(u64, SearchState)>> = BinaryHeap::new();
    dist.insert(start.clone(), 0);
    heap.push(std::cmp::Reverse((0, start)));

    let goal = |s: &SearchState| s.progress.is_empty() && s.unstarted == 0;
    let mut final_state: Option<SearchState> = None;

    while let Some(std::cmp::Reverse((d, state))) = heap.pop() {
        if dist.get(&state) != Some(&d) {
            continue;
        }
        if goal(&state) {
            final_state = Some(state);
            break;
        }
        // Candidate next columns: advance any distinct in-progress value,
        // or start a fresh row.
        let mut candidates: Vec<u16> = state
            .progress
            .iter()
            .copied()
            .filter(|&p| p < columns)
            .map(|p| p + 1)
            .collect();
        if state.unstarted > 0 {
            candidates.push(1);
        }
        candidates.sort_unstable();
        candidates.dedup();
        for col in candidates {
            let cost = cost_of(col);
            let color = color_of(col);
            let (extra, used) = if state.resident == color && state.used + cost <= budget.units as u16
            {
                (0, state.used + cost)
            } else {
                (1, cost)
            };
            let mut next = state.clone();
            if col == 1 {
                next.unstarted -= 1;
            } else {
                let idx = next.progress.iter().position(|&p| p == col - 1).unwrap();
                next.progress.remove(idx);
            }
            if col < columns {
                next.progress.push(col);
                next.progress.sort_unstable_by(|a, b| b.cmp(a));
            }
            next.resident = color;
            next.used = used;
            let nd = d + extra;
            if dist.get(&next).is_none_or(|&old| nd < old) {
                dist.insert(next.clone(), nd);
                prev.insert(next.clone(), (state.clone(), col));
                heap.push(std::cmp::Reverse((nd, next)));
            }
        }
    }

    let end = final_state.expect("search space is finite and the goal is reachable");
    let weight_loads = dist[&end];

    // Rebuild the column path, then assign rows greedily: each column goes
    // to the row whose progress sits right behind it.
    let mut cols_rev = Vec::with_capacity(graph.squares() as usize);
    let mut cur = end;
    while let Some((p, col)) = prev.get(&cur) {
        cols_rev.push(*col);
        cur = p.clone();
    }
    cols_rev.reverse();
    let mut row_progress: Vec<u16> = vec![0; graph.rows as usize];
    let mut order = Vec::with_capacity(cols_rev.len());
    for col in cols_rev {
        let row = row_progress
            .iter()
            .position(|&p| p == col - 1)
            .expect("path respects row progress");
        row_progress[row] = col;
        order.push(Square {
            row: row as u64,
            token: (col as u64 - 1) / graph.layers,
            layer: (col as u64 - 1) % graph.layers,
        });
    }
    Ok(BruteForceResult {
        weight_loads,
        order,
    })
}

/// Writes the trace as CSV: step, row, token, layer, loads, stores, device.
/// `loads` holds semicolon-joined entries (w<color> for a weight load,
/// a<tokens> and k<tokens> for activation/KV reads); `stores` holds
/// a<tokens>, k<tokens>, and f<row> for buffer frees; `device` is the tier
/// holding the row's cache in the two-tier walk.
pub fn export_csv<W: std::io::Write>(
    trace: &ScheduleTrace,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "row", "token", "layer", "loads", "stores", "device"])?;
    let s = trace.graph.prompt_len;
    for (i, step) in trace.steps.iter().enumerate() {
        let sq = step.square;
        let mut loads = Vec::new();
        if let Some(c) = step.weight_load {
            loads.push(format!("w{c}"));
        }
        let act_len = if sq.token == 0 { s } else { 1 };
        loads.push(format!("a{act_len}"));
        if sq.token > 0 {
            loads.push(format!("k{}", s + sq.token - 1));
        }
        let mut stores = vec![format!("a{act_len}"), format!("k{}", if sq.token == 0 { s } else { 1 })];
        for &r in &step.frees {
            stores.push(format!("f{r}"));
        }
        w.write_record([
            i.to_string(),
            sq.row.to_string(),
            sq.token.to_string(),
            sq.layer.to_string(),
            loads.join(";"),
            stores.join(";"),
            "cpu".to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
