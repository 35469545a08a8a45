//! Step-through execution of generation blocks over the memory hierarchy.
//!
//! The analytic model prices every decode layer at the average cache length
//! s + n/2. The simulator instead walks each (token, layer) iteration at
//! that token's true cache length, runs the six channels in parallel, and
//! completes the iteration at their barrier. Decode totals therefore never
//! undercut the analytic block latency, and match it exactly whenever one
//! channel dominates every iteration at constant bandwidth.

use serde::Serialize;
use std::io;
use thiserror::Error;

use crate::costmodel::{
    cost_coeffs, coeffs_for_policy, effective_delegation, feasible, peak_memory,
    CapacityViolation, CostCoeffs, LinTerm, PeakMemoryReport, Phase, WC, WD,
};
use crate::model::{
    validate_policy, HardwareError, HardwareProfile, ModelError, ModelSpec, Policy, Workload,
};
use crate::schedule::ScheduleTrace;

/// Lane order used by every per-channel array in this module.
pub const CHANNEL_NAMES: [&str; 6] = ["ctog", "gtoc", "dtoc", "ctod", "gpu_comp", "cpu_comp"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hardware(#[from] HardwareError),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("policy exceeds memory capacity: {}", oom_summary(.violations))]
    Oom { violations: Vec<CapacityViolation> },
    #[error("cannot split {layers} layers into {stages} equal pipeline stages")]
    Pipeline { layers: u64, stages: u64 },
}

fn oom_summary(violations: &[CapacityViolation]) -> String {
    match violations.first() {
        None => "no violations recorded".into(),
        Some(first) if violations.len() == 1 => first.to_string(),
        Some(first) => format!("{} (and {} more)", first, violations.len() - 1),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimConfig {
    /// Record a per-transfer event timeline in the result.
    pub record_events: bool,
    /// Simulate policies that exceed a capacity constraint instead of
    /// refusing them.
    pub allow_oom: bool,
}

/// One transfer or compute leg on a channel lane. `batch` is the microbatch
/// index; weight legs cover the whole layer and carry no index. `bytes` is
/// zero for compute legs.
#[derive(Debug, Clone, Serialize)]
pub struct SimEvent {
    pub step: u64,
    pub phase: Phase,
    pub token: u64,
    pub layer: u64,
    pub batch: Option<u64>,
    pub channel: &'static str,
    pub start: f64,
    pub end: f64,
    pub bytes: f64,
}

/// Busy seconds per channel lane over the whole block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ChannelSeconds {
    pub ctog: f64,
    pub gtoc: f64,
    pub dtoc: f64,
    pub ctod: f64,
    pub gpu_comp: f64,
    pub cpu_comp: f64,
}

impl ChannelSeconds {
    fn from_lanes(lanes: [f64; 6]) -> Self {
        ChannelSeconds {
            ctog: lanes[0],
            gtoc: lanes[1],
            dtoc: lanes[2],
            ctod: lanes[3],
            gpu_comp: lanes[4],
            cpu_comp: lanes[5],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub prefill_latency: f64,
    pub decode_latency: f64,
    pub total_latency: f64,
    /// bls * n / total latency: every token the block emits, prompt pass
    /// included in the time.
    pub generation_throughput: f64,
    /// bls * (n - 1) / decode latency; zero when nothing is decoded.
    pub decode_throughput: f64,
    pub channel_busy: ChannelSeconds,
    pub peak_memory: PeakMemoryReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<SimEvent>>,
}

/// Block results for a model split into equal pipeline stages, one stage
/// resident per accelerator slot. Latencies are for one full block passing
/// every stage; throughputs assume the steady state where all stages stay
/// busy, so one slot per token bounds the rate.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineResult {
    pub stages: u64,
    pub prefill_latency: f64,
    pub decode_latency: f64,
    pub total_latency: f64,
    pub generation_throughput: f64,
    pub decode_throughput: f64,
    pub stage_peak_memory: PeakMemoryReport,
}

/// Channel seconds for one iteration: busy time per lane, the weight prefix
/// of each transfer lane, and the byte rate each lane was priced at.
struct IterationLegs {
    seconds: [f64; 6],
    weight_seconds: [f64; 4],
    bw: [f64; 4],
}

fn weight_share(term: &LinTerm, f: &[f64; 9]) -> f64 {
    term.coefs[WC] * f[WC] + term.coefs[WD] * f[WD]
}

fn prefill_legs(c: &CostCoeffs, f: &[f64; 9]) -> IterationLegs {
    IterationLegs {
        seconds: [
            c.ctog_p.eval(f),
            c.gtoc_p.eval(f),
            c.dtoc_p.eval(f),
            c.ctod_p.eval(f),
            c.comp_p.eval(f),
            0.0,
        ],
        weight_seconds: [
            weight_share(&c.ctog_p, f),
            weight_share(&c.gtoc_p, f),
            weight_share(&c.dtoc_p, f),
            weight_share(&c.ctod_p, f),
        ],
        bw: c.bw_p,
    }
}

fn decode_legs(c: &CostCoeffs, f: &[f64; 9]) -> IterationLegs {
    IterationLegs {
        seconds: [
            c.ctog_g.eval(f),
            c.gtoc_g.eval(f),
            c.dtoc_g.eval(f),
            c.ctod_g.eval(f),
            c.gpu_comp_g.eval(f),
            c.cpu_comp_g.eval(f),
        ],
        weight_seconds: [
            weight_share(&c.ctog_g, f),
            weight_share(&c.gtoc_g, f),
            weight_share(&c.dtoc_g, f),
            weight_share(&c.ctod_g, f),
        ],
        bw: c.bw_g,
    }
}

/// GPU and CPU compute overlap with transfers but sum at the barrier, the
/// same convention the analytic layer latency uses.
fn barrier(legs: &IterationLegs) -> f64 {
    let s = &legs.seconds;
    s[0].max(s[1]).max(s[2]).max(s[3]).max(s[4] + s[5])
}

/// Coefficients whose decode channel terms are exact for token index `t`
/// (1-based): the average cache length s + n'/2 collapses to s + t at
/// n' = 2t, and no other decode channel term reads the generation length.
fn coeffs_at_token(
    model: &ModelSpec,
    hw: &HardwareProfile,
    prompt_len: u64,
    t: u64,
    gbs: u64,
    num_gpu_batches: u64,
    cpu_delegation: bool,
    compression_ratio: f64,
) -> CostCoeffs {
    let pinned = Workload {
        prompt_len,
        gen_len: 2 * t,
    };
    cost_coeffs(
        model,
        hw,
        &pinned,
        gbs,
        num_gpu_batches,
        cpu_delegation,
        compression_ratio,
    )
}

struct Engine {
    clock: f64,
    step: u64,
    num_gpu_batches: u64,
    busy: [f64; 6],
    events: Option<Vec<SimEvent>>,
}

impl Engine {
    fn new(record_events: bool, num_gpu_batches: u64) -> Self {
        Engine {
            clock: 0.0,
            step: 0,
            num_gpu_batches,
            busy: [0.0; 6],
            events: record_events.then(Vec::new),
        }
    }

    /// Runs one (token, layer) iteration and returns its barrier duration.
    /// Each lane serializes its legs from the iteration start: the weight
    /// prefix first on transfer lanes, then one slice per microbatch; the
    /// CPU compute lane queues behind the GPU one.
    fn run_iteration(&mut self, phase: Phase, token: u64, layer: u64, legs: &IterationLegs) -> f64 {
        let duration = barrier(legs);
        if self.events.is_some() {
            self.record(phase, token, layer, legs);
        }
        for (lane, seconds) in self.busy.iter_mut().zip(legs.seconds) {
            *lane += seconds;
        }
        self.clock += duration;
        self.step += 1;
        duration
    }

    fn record(&mut self, phase: Phase, token: u64, layer: u64, legs: &IterationLegs) {
        let start = self.clock;
        let step = self.step;
        let nb = self.num_gpu_batches;
        let events = self.events.as_mut().expect("recording enabled");
        let mut push = |channel: usize, batch: Option<u64>, from: f64, seconds: f64, rate: f64| {
            events.push(SimEvent {
                step,
                phase,
                token,
                layer,
                batch,
                channel: CHANNEL_NAMES[channel],
                start: from,
                end: from + seconds,
                bytes: seconds * rate,
            });
        };
        for ch in 0..4 {
            let total = legs.seconds[ch];
            if total <= 0.0 {
                continue;
            }
            let mut cursor = start;
            let weight = legs.weight_seconds[ch];
            if weight > 0.0 {
                push(ch, None, cursor, weight, legs.bw[ch]);
                cursor += weight;
            }
            let slice = ((total - weight) / nb as f64).max(0.0);
            if slice > 0.0 {
                for k in 0..nb {
                    push(ch, Some(k), cursor, slice, legs.bw[ch]);
                    cursor += slice;
                }
            }
        }
        let mut cursor = start;
        for ch in [4, 5] {
            let slice = legs.seconds[ch] / nb as f64;
            if slice > 0.0 {
                for k in 0..nb {
                    push(ch, Some(k), cursor, slice, 0.0);
                    cursor += slice;
                }
            }
        }
    }
}

fn check_inputs(
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
    policy: &Policy,
) -> Result<(), SimError> {
    model.validate()?;
    workload.validate()?;
    hw.validate()?;
    let violations = validate_policy(policy);
    if !violations.is_empty() {
        let joined = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(SimError::Policy(joined));
    }
    Ok(())
}

fn check_capacity(
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
    policy: &Policy,
    config: &SimConfig,
) -> Result<(), SimError> {
    let violations = feasible(policy, model, hw, workload);
    if !violations.is_empty() && !config.allow_oom {
        return Err(SimError::Oom { violations });
    }
    Ok(())
}

/// Executes one block and reports latencies, throughput, per-channel busy
/// time, and peak memory; optionally a full transfer timeline.
pub fn simulate(
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
    policy: &Policy,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    check_inputs(model, hw, workload, policy)?;
    check_capacity(model, hw, workload, policy, config)?;

    let f = policy.fractions();
    let delegation = effective_delegation(policy);
    let ratio = policy
        .compression
        .as_ref()
        .map_or(1.0, |c| c.effective_ratio());
    let layers = model.layers;
    let n = workload.gen_len;
    let mut engine = Engine::new(config.record_events, policy.num_gpu_batches);

    let base = coeffs_for_policy(policy, model, hw, workload);
    let pre = prefill_legs(&base, &f);
    let mut prefill_latency = 0.0;
    for layer in 0..layers {
        prefill_latency += engine.run_iteration(Phase::Prefill, 0, layer, &pre);
    }

    let mut decode_latency = 0.0;
    for t in 1..n {
        let coeffs = coeffs_at_token(
            model,
            hw,
            workload.prompt_len,
            t,
            policy.gbs,
            policy.num_gpu_batches,
            delegation,
            ratio,
        );
        let legs = decode_legs(&coeffs, &f);
        let mut token_total = 0.0;
        for layer in 0..layers {
            token_total += engine.run_iteration(Phase::Decode, t, layer, &legs);
        }
        decode_latency += token_total;
    }

    let total_latency = prefill_latency + decode_latency;
    let bls = policy.block_size() as f64;
    let decode_throughput = if n > 1 {
        bls * (n - 1) as f64 / decode_latency
    } else {
        0.0
    };
    Ok(SimResult {
        prefill_latency,
        decode_latency,
        total_latency,
        generation_throughput: bls * n as f64 / total_latency,
        decode_throughput,
        channel_busy: ChannelSeconds::from_lanes(engine.busy),
        peak_memory: peak_memory(policy, model, hw, workload),
        events: engine.events,
    })
}

/// Executes one block through `stages` equal pipeline stages. Each stage
/// owns layers/stages layers and runs the same placement policy against its
/// own capacity check; stage boundaries hand the activation slab over the
/// GPU-CPU link in both directions. With one stage this reproduces
/// `simulate` bit for bit.
pub fn simulate_pipeline(
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
    policy: &Policy,
    stages: u64,
    config: &SimConfig,
) -> Result<PipelineResult, SimError> {
    check_inputs(model, hw, workload, policy)?;
    if stages == 0 || model.layers % stages != 0 {
        return Err(SimError::Pipeline {
            layers: model.layers,
            stages,
        });
    }
    let stage_model = ModelSpec {
        layers: model.layers / stages,
        ..model.clone()
    };
    check_capacity(&stage_model, hw, workload, policy, config)?;

    let f = policy.fractions();
    let delegation = effective_delegation(policy);
    let ratio = policy
        .compression
        .as_ref()
        .map_or(1.0, |c| c.effective_ratio());
    let stage_layers = stage_model.layers;
    let n = workload.gen_len;
    let bls = policy.block_size() as f64;

    let (handoff_pre, handoff_dec) = if stages > 1 {
        let bpe = model.bytes_per_element / 2.0;
        let h1 = model.hidden as f64;
        let act_pre = 2.0 * workload.prompt_len as f64 * h1 * bls * bpe;
        let act_dec = 2.0 * h1 * bls * bpe;
        let link = |bytes: f64| bytes / hw.gtoc_bdw.at(bytes) + bytes / hw.ctog_bdw.at(bytes);
        (link(act_pre), link(act_dec))
    } else {
        (0.0, 0.0)
    };

    let base = coeffs_for_policy(policy, &stage_model, hw, workload);
    let duration_pre = barrier(&prefill_legs(&base, &f));
    let mut slot_prefill = 0.0;
    for _ in 0..stage_layers {
        slot_prefill += duration_pre;
    }
    slot_prefill += handoff_pre;
    let mut prefill_latency = 0.0;
    for _ in 0..stages {
        prefill_latency += slot_prefill;
    }

    let mut decode_latency = 0.0;
    let mut slot_decode_sum = 0.0;
    for t in 1..n {
        let coeffs = coeffs_at_token(
            &stage_model,
            hw,
            workload.prompt_len,
            t,
            policy.gbs,
            policy.num_gpu_batches,
            delegation,
            ratio,
        );
        let duration = barrier(&decode_legs(&coeffs, &f));
        let mut slot = 0.0;
        for _ in 0..stage_layers {
            slot += duration;
        }
        slot += handoff_dec;
        slot_decode_sum += slot;
        let mut token_total = 0.0;
        for _ in 0..stages {
            token_total += slot;
        }
        decode_latency += token_total;
    }

    let total_latency = prefill_latency + decode_latency;
    let decode_throughput = if n > 1 {
        bls * (n - 1) as f64 / slot_decode_sum
    } else {
        0.0
    };
    Ok(PipelineResult {
        stages,
        prefill_latency,
        decode_latency,
        total_latency,
        generation_throughput: bls * n as f64 / (slot_prefill + slot_decode_sum),
        decode_throughput,
        stage_peak_memory: peak_memory(policy, &stage_model, hw, workload),
    })
}

/// Timing of one schedule trace on a two-device setup: weights and cache
/// live on the CPU side, every square moves its weights (when the trace
/// loads them), activations, and cache slice over the link and computes on
/// the GPU. Each step completes at the max of its three lanes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplayResult {
    pub steps: u64,
    pub total_latency: f64,
    pub ctog_seconds: f64,
    pub gtoc_seconds: f64,
    pub compute_seconds: f64,
}

pub fn replay(
    trace: &ScheduleTrace,
    model: &ModelSpec,
    hw: &HardwareProfile,
) -> Result<ReplayResult, SimError> {
    model.validate()?;
    hw.validate()?;
    let s = trace.graph.prompt_len as f64;
    let h1 = model.hidden as f64;
    let h2 = model.mlp_hidden as f64;
    let bpe = model.bytes_per_element / 2.0;
    let weight_bytes = (8.0 * h1 * h1 + 4.0 * h1 * h2) * bpe;

    let mut total = 0.0;
    let mut ctog_seconds = 0.0;
    let mut gtoc_seconds = 0.0;
    let mut compute_seconds = 0.0;
    for step in &trace.steps {
        let t = step.square.token;
        let (act_len, kv_load, kv_store) = if t == 0 {
            (s, 0.0, s)
        } else {
            (1.0, s + t as f64 - 1.0, 1.0)
        };
        let ctog_bytes = step.weight_load.map_or(0.0, |_| weight_bytes)
            + 2.0 * act_len * h1 * bpe
            + 4.0 * kv_load * h1 * bpe;
        let gtoc_bytes = 2.0 * act_len * h1 * bpe + 4.0 * kv_store * h1 * bpe;
        let ctog = ctog_bytes / hw.ctog_bdw.at(ctog_bytes);
        let gtoc = gtoc_bytes / hw.gtoc_bdw.at(gtoc_bytes);
        let compute = if t == 0 {
            (8.0 * s * h1 * h1 + 4.0 * s * h1 * h2) / hw.mm_flops
                + 4.0 * s * s * h1 / hw.bmm_flops
        } else {
            (8.0 * h1 * h1 + 4.0 * h1 * h2) / hw.mm_flops
                + 4.0 * (s + t as f64) * h1 / hw.bmm_flops
        };
        total += ctog.max(gtoc).max(compute);
        ctog_seconds += ctog;
        gtoc_seconds += gtoc;
        compute_seconds += compute;
    }
    Ok(ReplayResult {
        steps: trace.steps.len() as u64,
        total_latency: total,
        ctog_seconds,
        gtoc_seconds,
        compute_seconds,
    })
}

/// Writes the event timeline as CSV with columns
/// step,kind,i,j,k,channel,start,end,bytes. `k` is empty on weight legs.
pub fn export_events_csv<W: io::Write>(events: &[SimEvent], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["step", "kind", "i", "j", "k", "channel", "start", "end", "bytes"])?;
    for e in events {
        writer.write_record([
            e.step.to_string(),
            e.phase.to_string(),
            e.token.to_string(),
            e.layer.to_string(),
            e.batch.map_or_else(String::new, |k| k.to_string()),
            e.channel.to_string(),
            e.start.to_string(),
            e.end.to_string(),
            e.bytes.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
