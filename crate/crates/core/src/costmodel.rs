//! Analytic per-layer cost model: prefill and decode latency as the max over
//! five hardware channels, block latency and throughput, and peak-memory
//! accounting for GPU, CPU, and NVMe.
//!
//! Every quantity is assembled as a term that is linear in the nine placement
//! fractions, so the policy LP, the grid-search oracle, and the direct
//! evaluators below all price a policy through the same coefficients.
//!
//! Conventions: byte formulas follow the 2-bytes-per-element layout and scale
//! with `bytes_per_element / 2`; decode KV reads use the averaged length
//! (s + n/2) rather than exact per-step lengths (the simulator uses exact
//! lengths). With compression attached, weight and KV-cache bytes in I/O and
//! home terms shrink by the codec's effective ratio, CPU delegation is
//! forced off, and working buffers stay at dense size. With delegation off,
//! decode attention runs on the GPU and the KV cache read is charged to the
//! CPU-to-GPU channel. Piecewise bandwidth tables are sampled once per
//! channel and phase at the full-traffic transfer size, which keeps every
//! term linear in the fractions.

use crate::model::{Device, HardwareProfile, ModelSpec, Policy, Workload};
use serde::Serialize;
use std::fmt;

/// Canonical order of the placement fractions in every coefficient vector.
pub const FRACTION_NAMES: [&str; 9] = ["wg", "wc", "wd", "cg", "cc", "cd", "hg", "hc", "hd"];
pub const WG: usize = 0;
pub const WC: usize = 1;
pub const WD: usize = 2;
pub const CG: usize = 3;
pub const CC: usize = 4;
pub const CD: usize = 5;
pub const HG: usize = 6;
pub const HC: usize = 7;
pub const HD: usize = 8;

/// Names of the six GPU working-set candidates, in coefficient order.
pub const GPU_WORKING_CANDIDATES: [&str; 6] = ["qkv", "att1", "att2", "embed", "mlp1", "mlp2"];

/// Affine function of the nine placement fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinTerm {
    pub constant: f64,
    pub coefs: [f64; 9],
}

impl LinTerm {
    pub const ZERO: LinTerm = LinTerm {
        constant: 0.0,
        coefs: [0.0; 9],
    };

    pub fn eval(&self, fractions: &[f64; 9]) -> f64 {
        let mut v = self.constant;
        for (c, f) in self.coefs.iter().zip(fractions) {
            v += c * f;
        }
        v
    }

    /// Value when every fraction is 1: an upper envelope used to pick the
    /// nominal transfer size for bandwidth tables.
    fn at_ones(&self) -> f64 {
        self.constant + self.coefs.iter().sum::<f64>()
    }

    fn add(&mut self, idx: usize, v: f64) -> &mut Self {
        self.coefs[idx] += v;
        self
    }

    fn add_const(&mut self, v: f64) -> &mut Self {
        self.constant += v;
        self
    }

    pub fn plus(&self, other: &LinTerm) -> LinTerm {
        let mut out = *self;
        out.constant += other.constant;
        for (a, b) in out.coefs.iter_mut().zip(&other.coefs) {
            *a += b;
        }
        out
    }

    fn scaled(&self, k: f64) -> LinTerm {
        let mut out = *self;
        out.constant *= k;
        for c in out.coefs.iter_mut() {
            *c *= k;
        }
        out
    }
}

/// All cost and memory coefficients for one (gbs, num_gpu_batches) candidate.
/// Channel terms are seconds per layer; memory terms are bytes.
#[derive(Debug, Clone)]
pub struct CostCoeffs {
    pub ctog_p: LinTerm,
    pub gtoc_p: LinTerm,
    pub dtoc_p: LinTerm,
    pub ctod_p: LinTerm,
    pub comp_p: LinTerm,

    pub ctog_g: LinTerm,
    pub gtoc_g: LinTerm,
    pub dtoc_g: LinTerm,
    pub ctod_g: LinTerm,
    pub gpu_comp_g: LinTerm,
    pub cpu_comp_g: LinTerm,

    pub gpu_home_p: LinTerm,
    pub gpu_wbase_p: LinTerm,
    pub gpu_wcand_p: [LinTerm; 6],
    pub gpu_home_g: LinTerm,
    pub gpu_wbase_g: LinTerm,
    pub gpu_wcand_g: [LinTerm; 6],
    pub cpu_home_p: LinTerm,
    pub cpu_w_p: LinTerm,
    pub cpu_home_g: LinTerm,
    pub cpu_w_g: LinTerm,
    pub nvme_peak: LinTerm,

    /// Effective bandwidths each channel's byte traffic was priced at,
    /// bytes/s; multiplying a channel time by its rate recovers bytes.
    pub bw_p: [f64; 4],
    pub bw_g: [f64; 4],

    pub bls: f64,
    pub gbs: u64,
    pub num_gpu_batches: u64,
    pub layers: u64,
    pub gen_len: u64,
    pub cpu_delegation: bool,
}

impl CostCoeffs {
    /// comp^g as one term: GPU and CPU compute overlap in time, but the LP
    /// and the latency max treat their sum as the compute channel budget.
    pub fn comp_g(&self) -> LinTerm {
        self.gpu_comp_g.plus(&self.cpu_comp_g)
    }

    pub fn prefill_channels(&self) -> [(&'static str, LinTerm); 5] {
        [
            ("ctog", self.ctog_p),
            ("gtoc", self.gtoc_p),
            ("dtoc", self.dtoc_p),
            ("ctod", self.ctod_p),
            ("comp", self.comp_p),
        ]
    }

    pub fn decode_channels(&self) -> [(&'static str, LinTerm); 5] {
        [
            ("ctog", self.ctog_g),
            ("gtoc", self.gtoc_g),
            ("dtoc", self.dtoc_g),
            ("ctod", self.ctod_g),
            ("comp", self.comp_g()),
        ]
    }

    /// Every memory constraint as (name, device, phase, term, capacity).
    /// GPU rows appear once per working-set candidate because the candidate
    /// max turns into six linear rows.
    pub fn memory_rows(&self, hw: &HardwareProfile) -> Vec<MemoryRow> {
        let mut rows = Vec::with_capacity(15);
        for (i, cand) in self.gpu_wcand_p.iter().enumerate() {
            rows.push(MemoryRow {
                name: format!("gpu prefill ({})", GPU_WORKING_CANDIDATES[i]),
                device: Device::Gpu,
                phase: Phase::Prefill,
                term: self.gpu_home_p.plus(&self.gpu_wbase_p).plus(cand),
                capacity: hw.gmem,
            });
        }
        for (i, cand) in self.gpu_wcand_g.iter().enumerate() {
            rows.push(MemoryRow {
                name: format!("gpu decode ({})", GPU_WORKING_CANDIDATES[i]),
                device: Device::Gpu,
                phase: Phase::Decode,
                term: self.gpu_home_g.plus(&self.gpu_wbase_g).plus(cand),
                capacity: hw.gmem,
            });
        }
        rows.push(MemoryRow {
            name: "cpu prefill".into(),
            device: Device::Cpu,
            phase: Phase::Prefill,
            term: self.cpu_home_p.plus(&self.cpu_w_p),
            capacity: hw.cmem,
        });
        rows.push(MemoryRow {
            name: "cpu decode".into(),
            device: Device::Cpu,
            phase: Phase::Decode,
            term: self.cpu_home_g.plus(&self.cpu_w_g),
            capacity: hw.cmem,
        });
        rows.push(MemoryRow {
            name: "nvme".into(),
            device: Device::Disk,
            phase: Phase::Prefill,
            term: self.nvme_peak,
            capacity: hw.nmem,
        });
        rows
    }
}

/// One linear capacity constraint: term(fractions) must fit in `capacity`.
#[derive(Debug, Clone)]
pub struct MemoryRow {
    pub name: String,
    pub device: Device,
    pub phase: Phase,
    pub term: LinTerm,
    pub capacity: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Prefill => write!(f, "prefill"),
            Phase::Decode => write!(f, "decode"),
        }
    }
}

/// Per-layer channel costs for one phase. `layer_latency` is the max over
/// the five channels; for decode, `comp` = `gpu_comp` + `cpu_comp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub phase: Phase,
    pub ctog: f64,
    pub gtoc: f64,
    pub dtoc: f64,
    pub ctod: f64,
    pub comp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_comp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpu_comp: Option<f64>,
    pub layer_latency: f64,
}

/// Peak bytes per device and phase, split into resident (home) and working
/// shares. GPU and CPU peaks equal home + working exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakMemoryReport {
    pub gpu_home_prefill: f64,
    pub gpu_working_prefill: f64,
    pub gpu_peak_prefill: f64,
    pub gpu_home_decode: f64,
    pub gpu_working_decode: f64,
    pub gpu_peak_decode: f64,
    pub cpu_home_prefill: f64,
    pub cpu_working_prefill: f64,
    pub cpu_peak_prefill: f64,
    pub cpu_home_decode: f64,
    pub cpu_working_decode: f64,
    pub cpu_peak_decode: f64,
    pub nvme_peak: f64,
}

/// A capacity constraint exceeded by a policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityViolation {
    pub constraint: String,
    pub device: Device,
    pub phase: Phase,
    pub needed_bytes: f64,
    pub capacity_bytes: u64,
}

impl fmt::Display for CapacityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: needs {:.0} bytes, {} {} capacity is {}",
            self.constraint,
            self.needed_bytes,
            self.device.name(),
            self.phase,
            self.capacity_bytes
        )
    }
}

fn max_of(terms: &[f64]) -> f64 {
    terms.iter().fold(0.0f64, |a, &b| a.max(b))
}

/// Builds all coefficients for one candidate. `compression` carries the
/// effective byte ratio applied to weight and KV-cache I/O and home terms;
/// `cpu_delegation` must already account for compression forcing it off
/// (use `coeffs_for_policy` when starting from a `Policy`).
pub fn cost_coeffs(
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
    gbs: u64,
    num_gpu_batches: u64,
    cpu_delegation: bool,
    compression_ratio: f64,
) -> CostCoeffs {
    let h1 = model.hidden as f64;
    let h2 = model.mlp_hidden as f64;
    let nh = model.heads as f64;
    let l = model.layers as f64;
    let s = workload.prompt_len as f64;
    let n = workload.gen_len as f64;
    let bls = (gbs * num_gpu_batches) as f64;
    let gbs_f = gbs as f64;
    let bpe = model.bytes_per_element / 2.0;
    let k = compression_ratio;

    let wb_dense = (8.0 * h1 * h1 + 4.0 * h1 * h2) * bpe;
    let wb = wb_dense * k;
    let act_p = 2.0 * s * h1 * bls * bpe;
    let act_g = 2.0 * h1 * bls * bpe;
    let kv_avg = s + n / 2.0;

    // Prefill channel traffic in bytes.
    let mut ctog_pb = LinTerm::ZERO;
    ctog_pb.add(WC, wb).add(WD, wb).add(HC, act_p).add(HD, act_p);
    let mut gtoc_pb = LinTerm::ZERO;
    let kv_store_p = 4.0 * (s + 1.0) * h1 * bls * bpe * k;
    gtoc_pb
        .add(CC, kv_store_p)
        .add(CD, kv_store_p)
        .add(HC, act_p)
        .add(HD, act_p);
    let mut dtoc_pb = LinTerm::ZERO;
    dtoc_pb.add(WD, wb).add(HD, act_p);
    let mut ctod_pb = LinTerm::ZERO;
    ctod_pb.add(CD, kv_store_p).add(HD, act_p);

    let mut comp_p = LinTerm::ZERO;
    comp_p.add_const(bls * (8.0 * s * h1 * h1 + 4.0 * s * h1 * h2) / hw.mm_flops);
    comp_p.add_const(4.0 * bls * s * s * h1 / hw.bmm_flops);

    // Decode channel traffic in bytes.
    let mut ctog_gb = LinTerm::ZERO;
    ctog_gb.add(WC, wb).add(WD, wb).add(HC, act_g).add(HD, act_g);
    let kv_read = 4.0 * bls * kv_avg * h1 * bpe * k;
    if !cpu_delegation {
        ctog_gb.add(CC, kv_read).add(CD, kv_read);
    }
    let mut gtoc_gb = LinTerm::ZERO;
    gtoc_gb.add(HC, act_g).add(HD, act_g);
    let mut dtoc_gb = LinTerm::ZERO;
    dtoc_gb.add(CD, kv_read).add(WD, wb).add(HD, act_g);
    let mut ctod_gb = LinTerm::ZERO;
    ctod_gb.add(CD, 4.0 * bls * h1 * bpe * k).add(HD, act_g);

    let mut gpu_comp_g = LinTerm::ZERO;
    gpu_comp_g.add_const(bls * (8.0 * h1 * h1 + 4.0 * h1 * h2) / hw.mm_flops);
    let att_flops_g = 4.0 * bls * kv_avg * h1;
    let mut cpu_comp_g = LinTerm::ZERO;
    if cpu_delegation {
        gpu_comp_g.add(CG, att_flops_g / hw.bmm_flops);
        cpu_comp_g
            .add(CC, att_flops_g / hw.cpu_flops)
            .add(CD, att_flops_g / hw.cpu_flops);
    } else {
        gpu_comp_g.add_const(att_flops_g / hw.bmm_flops);
    }

    let over = |bytes: LinTerm, bdw: &crate::model::BandwidthModel| -> (LinTerm, f64) {
        let nominal = bytes.at_ones();
        let bw = bdw.at(nominal);
        (bytes.scaled(1.0 / bw), bw)
    };

    // Peak memory, bytes.
    let kv_home = 4.0 * (s + n) * h1 * bls * l * bpe * k;
    let mut gpu_home_p = LinTerm::ZERO;
    gpu_home_p.add(WG, wb * l).add(HG, act_p).add(CG, kv_home);
    let mut gpu_home_g = LinTerm::ZERO;
    gpu_home_g.add(WG, wb * l).add(HG, act_g).add(CG, kv_home);

    // Double-buffered weight staging plus the offloaded activation slice;
    // the decode form keeps the prefill-sized slice.
    let stage_act = 2.0 * s * h1 * gbs_f * bpe;
    let mut wbase = LinTerm::ZERO;
    wbase
        .add_const(2.0 * wb_dense + stage_act)
        .add(WG, -2.0 * wb_dense)
        .add(HG, -stage_act);
    let gpu_wbase_p = wbase;
    let gpu_wbase_g = wbase;

    let cand = |constant: f64, cg_part: f64| -> LinTerm {
        let mut t = LinTerm::ZERO;
        t.add_const(constant * gbs_f * bpe);
        t.add(CG, cg_part * gbs_f * bpe);
        t
    };
    let gpu_wcand_p = [
        cand(8.0 * s * h1, 0.0),
        cand(0.0, 4.0 * s * h1 + 2.0 * nh * s * s),
        cand(0.0, 2.0 * nh * s * s + 4.0 * s * h1),
        cand(4.0 * s * h1, 0.0),
        cand(2.0 * s * (h1 + h2), 0.0),
        cand(2.0 * s * (h1 + h2), 0.0),
    ];
    let sn = s + n;
    let gpu_wcand_g = [
        cand(8.0 * h1, 0.0),
        cand(0.0, 2.0 * h1 + 2.0 * sn * h1 + 2.0 * nh * sn),
        cand(0.0, 2.0 * nh * sn + 2.0 * sn * h1 + 2.0 * h1),
        cand(4.0 * h1, 0.0),
        cand(2.0 * (h1 + h2), 0.0),
        cand(2.0 * (h1 + h2), 0.0),
    ];

    let mut cpu_home_p = LinTerm::ZERO;
    cpu_home_p.add(WC, wb * l).add(HC, act_p).add(CC, kv_home);
    let mut cpu_home_g = LinTerm::ZERO;
    cpu_home_g.add(WC, wb * l).add(HC, act_g).add(CC, kv_home);

    let mut cpu_w_p = LinTerm::ZERO;
    cpu_w_p
        .add_const(wb_dense + stage_act)
        .add(WG, -wb_dense)
        .add(HG, -stage_act);
    let mut cpu_w_g = LinTerm::ZERO;
    cpu_w_g
        .add(WD, wb_dense)
        .add(HD, 4.0 * h1 * gbs_f * bpe)
        .add(CD, 8.0 * sn * h1 * gbs_f * bpe)
        .add_const(2.0 * nh * sn * gbs_f * bpe + 2.0 * h1 * gbs_f * bpe);

    let mut nvme = LinTerm::ZERO;
    nvme.add(WD, wb * l).add(HD, act_p).add(CD, kv_home);

    let (ctog_p, ctog_bw_p) = over(ctog_pb, &hw.ctog_bdw);
    let (gtoc_p, gtoc_bw_p) = over(gtoc_pb, &hw.gtoc_bdw);
    let (dtoc_p, dtoc_bw_p) = over(dtoc_pb, &hw.dtoc_bdw);
    let (ctod_p, ctod_bw_p) = over(ctod_pb, &hw.ctod_bdw);
    let (ctog_g, ctog_bw_g) = over(ctog_gb, &hw.ctog_bdw);
    let (gtoc_g, gtoc_bw_g) = over(gtoc_gb, &hw.gtoc_bdw);
    let (dtoc_g, dtoc_bw_g) = over(dtoc_gb, &hw.dtoc_bdw);
    let (ctod_g, ctod_bw_g) = over(ctod_gb, &hw.ctod_bdw);

    CostCoeffs {
        ctog_p,
        gtoc_p,
        dtoc_p,
        ctod_p,
        comp_p,
        ctog_g,
        gtoc_g,
        dtoc_g,
        ctod_g,
        gpu_comp_g,
        cpu_comp_g,
        gpu_home_p,
        gpu_wbase_p,
        gpu_wcand_p,
        gpu_home_g,
        gpu_wbase_g,
        gpu_wcand_g,
        cpu_home_p,
        cpu_w_p,
        cpu_home_g,
        cpu_w_g,
        nvme_peak: nvme,
        bw_p: [ctog_bw_p, gtoc_bw_p, dtoc_bw_p, ctod_bw_p],
        bw_g: [ctog_bw_g, gtoc_bw_g, dtoc_bw_g, ctod_bw_g],
        bls,
        gbs,
        num_gpu_batches,
        layers: model.layers,
        gen_len: workload.gen_len,
        cpu_delegation,
    }
}

/// Delegation is forced off when compression is attached.
pub fn effective_delegation(policy: &Policy) -> bool {
    policy.cpu_delegation && policy.compression.is_none()
}

pub fn coeffs_for_policy(
    policy: &Policy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
) -> CostCoeffs {
    let ratio = policy
        .compression
        .as_ref()
        .map_or(1.0, |c| c.effective_ratio());
    cost_coeffs(
        model,
        hw,
        workload,
        policy.gbs,
        policy.num_gpu_batches,
        effective_delegation(policy),
        ratio,
    )
}

pub fn prefill_layer_cost(
    policy: &Policy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
) -> CostBreakdown {
    let c = coeffs_for_policy(policy, model, hw, workload);
    let f = policy.fractions();
    let (ctog, gtoc, dtoc, ctod, comp) = (
        c.ctog_p.eval(&f),
        c.gtoc_p.eval(&f),
        c.dtoc_p.eval(&f),
        c.ctod_p.eval(&f),
        c.comp_p.eval(&f),
    );
    CostBreakdown {
        phase: Phase::Prefill,
        ctog,
        gtoc,
        dtoc,
        ctod,
        comp,
        gpu_comp: None,
        cpu_comp: None,
        layer_latency: max_of(&[ctog, gtoc, dtoc, ctod, comp]),
    }
}

pub fn decode_layer_cost(
    policy: &Policy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
) -> CostBreakdown {
    let c = coeffs_for_policy(policy, model, hw, workload);
    let f = policy.fractions();
    let (ctog, gtoc, dtoc, ctod) = (
        c.ctog_g.eval(&f),
        c.gtoc_g.eval(&f),
        c.dtoc_g.eval(&f),
        c.ctod_g.eval(&f),
    );
    let gpu_comp = c.gpu_comp_g.eval(&f);
    let cpu_comp = c.cpu_comp_g.eval(&f);
    let comp = gpu_comp + cpu_comp;
    CostBreakdown {
        phase: Phase::Decode,
        ctog,
        gtoc,
        dtoc,
        ctod,
        comp,
        gpu_comp: Some(gpu_comp),
        cpu_comp: Some(cpu_comp),
        layer_latency: max_of(&[ctog, gtoc, dtoc, ctod, comp]),
    }
}

/// T = Tpre * l + Tgen * (n - 1) * l, in seconds per block.
pub fn total_latency(
    policy: &Policy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
) -> f64 {
    let tpre = prefill_layer_cost(policy, model, hw, workload).layer_latency;
    let tgen = decode_layer_cost(policy, model, hw, workload).layer_latency;
    let l = model.layers as f64;
    tpre * l + tgen * (workload.gen_len - 1) as f64 * l
}

/// Tokens generated per second over one block: bls * n / T.
pub fn block_throughput(
    policy: &Policy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
) -> f64 {
    let t = total_latency(policy, model, hw, workload);
    policy.block_size() as f64 * workload.gen_len as f64 / t
}

pub fn peak_memory(
    policy: &Policy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
) -> PeakMemoryReport {
    let c = coeffs_for_policy(policy, model, hw, workload);
    let f = policy.fractions();
    let max_cand = |cands: &[LinTerm; 6]| max_of(&cands.map(|t| t.eval(&f)));
    let gpu_home_prefill = c.gpu_home_p.eval(&f);
    let gpu_working_prefill = c.gpu_wbase_p.eval(&f) + max_cand(&c.gpu_wcand_p);
    let gpu_home_decode = c.gpu_home_g.eval(&f);
    let gpu_working_decode = c.gpu_wbase_g.eval(&f) + max_cand(&c.gpu_wcand_g);
    let cpu_home_prefill = c.cpu_home_p.eval(&f);
    let cpu_working_prefill = c.cpu_w_p.eval(&f);
    let cpu_home_decode = c.cpu_home_g.eval(&f);
    let cpu_working_decode = c.cpu_w_g.eval(&f);
    PeakMemoryReport {
        gpu_home_prefill,
        gpu_working_prefill,
        gpu_peak_prefill: gpu_home_prefill + gpu_working_prefill,
        gpu_home_decode,
        gpu_working_decode,
        gpu_peak_decode: gpu_home_decode + gpu_working_decode,
        cpu_home_prefill,
        cpu_working_prefill,
        cpu_peak_prefill: cpu_home_prefill + cpu_working_prefill,
        cpu_home_decode,
        cpu_working_decode,
        cpu_peak_decode: cpu_home_decode + cpu_working_decode,
        nvme_peak: c.nvme_peak.eval(&f),
    }
}

/// Checks every capacity constraint; empty result means the policy fits.
pub fn feasible(
    policy: &Policy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    workload: &Workload,
) -> Vec<CapacityViolation> {
    let c = coeffs_for_policy(policy, model, hw, workload);
    let f = policy.fractions();
    let mut out = Vec::new();
    for row in c.memory_rows(hw) {
        let needed = row.term.eval(&f);
        if needed > row.capacity as f64 {
            out.push(CapacityViolation {
                constraint: row.name,
                device: row.device,
                phase: row.phase,
                needed_bytes: needed,
                capacity_bytes: row.capacity,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::QuantConfig;
    use crate::model::BandwidthModel;
    use crate::presets;

    fn unit_hw() -> HardwareProfile {
        HardwareProfile {
            ctog_bdw: BandwidthModel::Constant(1.0),
            gtoc_bdw: BandwidthModel::Constant(1.0),
            dtoc_bdw: BandwidthModel::Constant(1.0),
            ctod_bdw: BandwidthModel::Constant(1.0),
            mm_flops: 1.0,
            bmm_flops: 1.0,
            cpu_flops: 1.0,
            gmem: u64::MAX,
            cmem: u64::MAX,
            nmem: u64::MAX,
            notes: None,
        }
    }

    fn unit_model() -> ModelSpec {
        ModelSpec {
            layers: 1,
            hidden: 1,
            mlp_hidden: 1,
            heads: 1,
            bytes_per_element: 2.0,
        }
    }

    fn policy(fractions: [f64; 9]) -> Policy {
        Policy {
            gbs: 1,
            num_gpu_batches: 1,
            wg: fractions[0],
            wc: fractions[1],
            wd: fractions[2],
            cg: fractions[3],
            cc: fractions[4],
            cd: fractions[5],
            hg: fractions[6],
            hc: fractions[7],
            hd: fractions[8],
            cpu_delegation: true,
            compression: None,
        }
    }

    const ALL_GPU: [f64; 9] = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];

    #[test]
    fn unit_config_disk_prefill_channel_is_fourteen_seconds() {
        let m = unit_model();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 1,
            gen_len: 1,
        };
        // Weights fully on disk and activations fully on disk: the disk
        // read moves 8+4 = 12 bytes of weights plus 2 bytes of activations.
        let p = policy([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = prefill_layer_cost(&p, &m, &hw, &wl);
        assert_eq!(b.dtoc, 14.0);
    }

    #[test]
    fn unit_config_decode_cache_read_is_twelve_seconds() {
        let m = unit_model();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 2,
            gen_len: 2,
        };
        // Cache fully on disk, everything else on GPU: the disk channel
        // carries only the averaged KV read 4 * (s + n/2) = 12 bytes.
        let p = policy([1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let b = decode_layer_cost(&p, &m, &hw, &wl);
        let kv_read_only = 4.0 * 1.0 * (2.0 + 1.0) * 1.0;
        assert_eq!(b.dtoc, kv_read_only);
        assert_eq!(b.dtoc, 12.0);
    }

    #[test]
    fn all_gpu_policy_has_zero_transfer_channels() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 32,
            gen_len: 8,
        };
        let p = policy(ALL_GPU);
        for b in [
            prefill_layer_cost(&p, &m, &hw, &wl),
            decode_layer_cost(&p, &m, &hw, &wl),
        ] {
            assert_eq!(b.ctog, 0.0);
            assert_eq!(b.gtoc, 0.0);
            assert_eq!(b.dtoc, 0.0);
            assert_eq!(b.ctod, 0.0);
            assert_eq!(b.layer_latency, b.comp);
        }
    }

    #[test]
    fn doubling_matmul_flops_halves_the_linear_layer_share() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let wl = Workload {
            prompt_len: 64,
            gen_len: 4,
        };
        let p = policy(ALL_GPU);
        let hw1 = unit_hw();
        let mut hw2 = unit_hw();
        hw2.mm_flops = 2.0;
        let att = 4.0 * 1.0 * 64.0 * 64.0 * m.hidden as f64 / hw1.bmm_flops;
        let lin1 = prefill_layer_cost(&p, &m, &hw1, &wl).comp - att;
        let lin2 = prefill_layer_cost(&p, &m, &hw2, &wl).comp - att;
        assert!((lin2 - lin1 / 2.0).abs() < 1e-9 * lin1);
    }

    #[test]
    fn single_token_generation_is_prefill_only() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 16,
            gen_len: 1,
        };
        let p = policy([0.5, 0.5, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let t = total_latency(&p, &m, &hw, &wl);
        let tpre = prefill_layer_cost(&p, &m, &hw, &wl).layer_latency;
        assert_eq!(t, tpre * m.layers as f64);
    }

    #[test]
    fn latency_is_additive_in_layer_count() {
        let mut m = presets::model_preset("opt-6.7b").unwrap();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 16,
            gen_len: 4,
        };
        let p = policy([0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        m.layers = 8;
        let t8 = total_latency(&p, &m, &hw, &wl);
        m.layers = 16;
        let t16 = total_latency(&p, &m, &hw, &wl);
        assert!((t16 - 2.0 * t8).abs() < 1e-9 * t8);
    }

    #[test]
    fn unit_config_total_latency_matches_hand_trace() {
        // l=1, h1=h2=nh=1, s=1, n=2, bls=gbs=1, unit constants, weights and
        // activations and cache all on disk, delegation on. By hand:
        // prefill ctog 14, gtoc 10, dtoc 14, ctod 10, comp 16 -> Tpre 16;
        // decode ctog 14, gtoc 2, dtoc 22, ctod 6, comp 12+8 -> Tgen 22;
        // T = 16 + 22 * (2-1) = 38.
        let m = unit_model();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 1,
            gen_len: 2,
        };
        let p = policy([0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let pre = prefill_layer_cost(&p, &m, &hw, &wl);
        let gen = decode_layer_cost(&p, &m, &hw, &wl);
        assert_eq!(
            (pre.ctog, pre.gtoc, pre.dtoc, pre.ctod, pre.comp),
            (14.0, 10.0, 14.0, 10.0, 16.0)
        );
        assert_eq!(
            (gen.ctog, gen.gtoc, gen.dtoc, gen.ctod, gen.comp),
            (14.0, 2.0, 22.0, 6.0, 20.0)
        );
        let t = total_latency(&p, &m, &hw, &wl);
        assert!((t - 38.0).abs() < 1e-12 * 38.0);
        assert!((block_throughput(&p, &m, &hw, &wl) - 2.0 / 38.0).abs() < 1e-15);
    }

    #[test]
    fn unit_config_all_gpu_peak_memory_by_hand() {
        // Home: weights 12, activations 2, cache 4*(s+n) = 8 -> 22.
        // Working: staging terms vanish at wg=hg=1; candidate max is qkv=8.
        let m = unit_model();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 1,
            gen_len: 1,
        };
        let p = policy(ALL_GPU);
        let r = peak_memory(&p, &m, &hw, &wl);
        assert_eq!(r.gpu_home_prefill, 22.0);
        assert_eq!(r.gpu_working_prefill, 8.0);
        assert_eq!(r.gpu_peak_prefill, 30.0);
        assert_eq!(r.cpu_home_prefill, 0.0);
        assert_eq!(r.cpu_home_decode, 0.0);
        assert_eq!(r.nvme_peak, 0.0);
    }

    #[test]
    fn peak_equals_home_plus_working_for_random_policies() {
        let m = presets::model_preset("opt-30b").unwrap();
        let hw = presets::hardware_preset("t4-gcp").unwrap();
        let wl = Workload {
            prompt_len: 512,
            gen_len: 32,
        };
        for f in [
            [0.2, 0.8, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.5, 0.5, 0.0, 0.2, 0.8, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.3, 0.3, 0.4, 0.1, 0.4, 0.5],
        ] {
            let r = peak_memory(&policy(f), &m, &hw, &wl);
            assert_eq!(r.gpu_peak_prefill, r.gpu_home_prefill + r.gpu_working_prefill);
            assert_eq!(r.gpu_peak_decode, r.gpu_home_decode + r.gpu_working_decode);
            assert_eq!(r.cpu_peak_prefill, r.cpu_home_prefill + r.cpu_working_prefill);
            assert_eq!(r.cpu_peak_decode, r.cpu_home_decode + r.cpu_working_decode);
        }
    }

    #[test]
    fn published_opt30b_policy_fits_the_t4_profile() {
        let m = presets::model_preset("opt-30b").unwrap();
        let hw = presets::hardware_preset("t4-gcp").unwrap();
        let wl = Workload {
            prompt_len: 512,
            gen_len: 32,
        };
        let mut p = policy([0.2, 0.8, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        p.gbs = 48;
        p.num_gpu_batches = 3;
        let r = peak_memory(&p, &m, &hw, &wl);
        assert!(r.gpu_peak_prefill <= hw.gmem as f64, "{r:?}");
        assert!(r.gpu_peak_decode <= hw.gmem as f64);
        assert!(r.cpu_peak_prefill <= hw.cmem as f64);
        assert!(r.cpu_peak_decode <= hw.cmem as f64);
        assert!(feasible(&p, &m, &hw, &wl).is_empty());
    }

    #[test]
    fn scaling_all_rates_scales_latency_inversely() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let wl = Workload {
            prompt_len: 128,
            gen_len: 16,
        };
        let p = policy([0.1, 0.6, 0.3, 0.0, 0.7, 0.3, 0.2, 0.5, 0.3]);
        let hw1 = presets::hardware_preset("t4-gcp").unwrap();
        let k = 3.7;
        let scale = |b: &BandwidthModel| match b {
            BandwidthModel::Constant(v) => BandwidthModel::Constant(v * k),
            BandwidthModel::Table { .. } => unreachable!(),
        };
        let hw2 = HardwareProfile {
            ctog_bdw: scale(&hw1.ctog_bdw),
            gtoc_bdw: scale(&hw1.gtoc_bdw),
            dtoc_bdw: scale(&hw1.dtoc_bdw),
            ctod_bdw: scale(&hw1.ctod_bdw),
            mm_flops: hw1.mm_flops * k,
            bmm_flops: hw1.bmm_flops * k,
            cpu_flops: hw1.cpu_flops * k,
            ..hw1.clone()
        };
        let t1 = total_latency(&p, &m, &hw1, &wl);
        let t2 = total_latency(&p, &m, &hw2, &wl);
        assert!((t2 - t1 / k).abs() < 1e-12 * t1);
    }

    #[test]
    fn raising_any_rate_never_raises_any_channel_term() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let wl = Workload {
            prompt_len: 64,
            gen_len: 8,
        };
        let p = policy([0.1, 0.6, 0.3, 0.0, 0.7, 0.3, 0.2, 0.5, 0.3]);
        let base = presets::hardware_preset("t4-gcp").unwrap();
        let terms = |hw: &HardwareProfile| {
            let a = prefill_layer_cost(&p, &m, hw, &wl);
            let b = decode_layer_cost(&p, &m, hw, &wl);
            [a.ctog, a.gtoc, a.dtoc, a.ctod, a.comp, b.ctog, b.gtoc, b.dtoc, b.ctod, b.comp]
        };
        let before = terms(&base);
        for field in 0..7 {
            let mut hw = base.clone();
            let bump = |b: &mut BandwidthModel| {
                if let BandwidthModel::Constant(v) = b {
                    *v *= 2.0;
                }
            };
            match field {
                0 => bump(&mut hw.ctog_bdw),
                1 => bump(&mut hw.gtoc_bdw),
                2 => bump(&mut hw.dtoc_bdw),
                3 => bump(&mut hw.ctod_bdw),
                4 => hw.mm_flops *= 2.0,
                5 => hw.bmm_flops *= 2.0,
                _ => hw.cpu_flops *= 2.0,
            }
            let after = terms(&hw);
            for (x, y) in after.iter().zip(&before) {
                assert!(x <= y, "field {field}: {x} > {y}");
            }
        }
    }

    #[test]
    fn no_disk_placement_means_no_disk_traffic() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let hw = presets::hardware_preset("t4-gcp").unwrap();
        let wl = Workload {
            prompt_len: 64,
            gen_len: 8,
        };
        let p = policy([0.3, 0.7, 0.0, 0.4, 0.6, 0.0, 0.9, 0.1, 0.0]);
        let a = prefill_layer_cost(&p, &m, &hw, &wl);
        let b = decode_layer_cost(&p, &m, &hw, &wl);
        assert_eq!((a.dtoc, a.ctod, b.dtoc, b.ctod), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn delegation_saves_prompt_length_times_the_activation_traffic() {
        // Moving the step-one KV cache (4 * bls * s * h1 bytes) instead of
        // the activations (4 * bls * h1 bytes) costs s times as much.
        for (s, bls, h1) in [(128u64, 4u64, 64u64), (512, 32, 7168)] {
            let kv_first_step = 4 * bls * s * h1;
            let act_round_trip = 4 * bls * h1;
            assert_eq!(kv_first_step / act_round_trip, s);
        }
    }

    #[test]
    fn delegation_off_moves_cache_reads_to_the_gpu_channel() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let hw = presets::hardware_preset("t4-gcp").unwrap();
        let wl = Workload {
            prompt_len: 64,
            gen_len: 8,
        };
        let mut p = policy([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let on = decode_layer_cost(&p, &m, &hw, &wl);
        p.cpu_delegation = false;
        let off = decode_layer_cost(&p, &m, &hw, &wl);
        assert!(on.cpu_comp.unwrap() > 0.0);
        assert_eq!(off.cpu_comp.unwrap(), 0.0);
        assert!(off.ctog > on.ctog);
        assert!(off.gpu_comp.unwrap() > on.gpu_comp.unwrap());
    }

    #[test]
    fn compression_scales_weight_and_cache_terms_only() {
        let m = presets::model_preset("opt-6.7b").unwrap();
        let hw = presets::hardware_preset("t4-gcp").unwrap();
        let wl = Workload {
            prompt_len: 64,
            gen_len: 8,
        };
        let dense = policy([0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let mut packed = dense.clone();
        packed.compression = Some(QuantConfig::default());
        let ratio = QuantConfig::default().effective_ratio();

        let cd = coeffs_for_policy(&dense, &m, &hw, &wl);
        let cp = coeffs_for_policy(&packed, &m, &hw, &wl);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
        assert!(close(cp.ctog_p.coefs[WC], cd.ctog_p.coefs[WC] * ratio));
        assert!(close(cp.gtoc_p.coefs[CC], cd.gtoc_p.coefs[CC] * ratio));
        assert!(close(cp.gpu_home_p.coefs[WG], cd.gpu_home_p.coefs[WG] * ratio));
        assert!(close(cp.gpu_home_p.coefs[CG], cd.gpu_home_p.coefs[CG] * ratio));
        assert_eq!(cp.gpu_home_p.coefs[HG], cd.gpu_home_p.coefs[HG]);
        assert_eq!(cp.gpu_wbase_p, cd.gpu_wbase_p);
        assert_eq!(cp.cpu_w_g, cd.cpu_w_g);

        // Compression forces delegation off even when the flag asks for it.
        assert!(packed.cpu_delegation);
        let b = decode_layer_cost(&packed, &m, &hw, &wl);
        assert_eq!(b.cpu_comp.unwrap(), 0.0);
    }

    #[test]
    fn over_capacity_policies_report_the_binding_device() {
        let m = presets::model_preset("opt-175b").unwrap();
        let mut hw = presets::hardware_preset("t4-gcp").unwrap();
        hw.gmem = 1 << 30;
        let wl = Workload {
            prompt_len: 512,
            gen_len: 32,
        };
        let mut p = policy(ALL_GPU);
        p.gbs = 4;
        let violations = feasible(&p, &m, &hw, &wl);
        assert!(!violations.is_empty());
        assert!(violations.iter().all(|v| v.device == Device::Gpu));
        let msg = violations[0].to_string();
        assert!(msg.contains("gpu"), "{msg}");
    }

    #[test]
    fn bandwidth_tables_price_at_the_full_traffic_size() {
        let m = unit_model();
        let wl = Workload {
            prompt_len: 1,
            gen_len: 1,
        };
        // Full prefill disk traffic at wd=hd=1 is 14 bytes; the table puts
        // bandwidth 7 there, so the channel term must be 14/7 = 2 seconds.
        let mut hw = unit_hw();
        hw.dtoc_bdw = BandwidthModel::Table {
            table: vec![
                BandwidthPoint {
                    bytes: 0.0,
                    bytes_per_sec: 1.0,
                },
                BandwidthPoint {
                    bytes: 28.0,
                    bytes_per_sec: 13.0,
                },
            ],
        };
        let p = policy([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = prefill_layer_cost(&p, &m, &hw, &wl);
        assert!((b.dtoc - 2.0).abs() < 1e-12);
    }

    use crate::model::BandwidthPoint;

    #[test]
    fn bytes_per_element_scales_traffic_but_not_compute() {
        let mut m = unit_model();
        let hw = unit_hw();
        let wl = Workload {
            prompt_len: 1,
            gen_len: 2,
        };
        let p = policy([0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let base = prefill_layer_cost(&p, &m, &hw, &wl);
        m.bytes_per_element = 4.0;
        let wide = prefill_layer_cost(&p, &m, &hw, &wl);
        assert_eq!(wide.dtoc, 2.0 * base.dtoc);
        assert_eq!(wide.comp, base.comp);
    }
}
