//! Core domain types and closed-form memory/throughput analysis.
//!
//! Sizes are exact integer bytes (`u128` so no realistic configuration can
//! overflow). The FP16 baseline is two bytes per element; `bytes_per_element`
//! generalizes that so the compression codec can reuse the same formulas
//! with fractional effective widths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::QuantConfig;

/// Shape of a decoder-only transformer.
///
/// Per layer it has four h1 x h1 attention projections and a two-matrix MLP
/// of h1 x h2, so one layer holds `4*h1^2 + 2*h1*h2` elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Number of transformer layers.
    #[serde(rename = "l")]
    pub layers: u64,
    /// Hidden size of the attention blocks.
    #[serde(rename = "h1")]
    pub hidden: u64,
    /// Hidden size of the MLP blocks.
    #[serde(rename = "h2")]
    pub mlp_hidden: u64,
    /// Number of attention heads; must divide `h1`.
    #[serde(rename = "nh")]
    pub heads: u64,
    /// Storage width of one element in bytes. 2.0 is FP16.
    #[serde(default = "default_bytes_per_element")]
    pub bytes_per_element: f64,
}

fn default_bytes_per_element() -> f64 {
    2.0
}

/// One inference request shape: prompt length and tokens to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    /// Prompt length in tokens.
    #[serde(rename = "s")]
    pub prompt_len: u64,
    /// Number of tokens to generate, including the one produced while the
    /// prompt is processed.
    #[serde(rename = "n")]
    pub gen_len: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model dimension {0} must be positive")]
    ZeroDimension(&'static str),
    #[error("model dimension {name} = {value} exceeds the supported maximum {max}")]
    DimensionTooLarge {
        name: &'static str,
        value: u64,
        max: u64,
    },
    #[error("hidden size {hidden} is not divisible by {heads} heads")]
    HeadsDoNotDivideHidden { hidden: u64, heads: u64 },
    #[error("bytes_per_element {0} must be positive and finite")]
    BadElementWidth(f64),
    #[error("workload field {0} must be positive")]
    ZeroWorkload(&'static str),
    #[error("elapsed time {0} must be positive to compute throughput")]
    NonPositiveTime(f64),
}

/// Largest accepted value for l, h1, and h2. Keeps every byte formula well
/// inside u128 even at bytes_per_element = 8.
pub const MAX_DIMENSION: u64 = 1_000_000;

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("l", self.layers),
            ("h1", self.hidden),
            ("h2", self.mlp_hidden),
            ("nh", self.heads),
        ] {
            if v == 0 {
                return Err(ModelError::ZeroDimension(name));
            }
            if v > MAX_DIMENSION {
                return Err(ModelError::DimensionTooLarge {
                    name,
                    value: v,
                    max: MAX_DIMENSION,
                });
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(ModelError::HeadsDoNotDivideHidden {
                hidden: self.hidden,
                heads: self.heads,
            });
        }
        if !(self.bytes_per_element.is_finite() && self.bytes_per_element > 0.0) {
            return Err(ModelError::BadElementWidth(self.bytes_per_element));
        }
        Ok(())
    }

    /// Elements across all layers: l * (4*h1^2 + 2*h1*h2).
    pub fn weight_elements(&self) -> u128 {
        let h1 = self.hidden as u128;
        let h2 = self.mlp_hidden as u128;
        (self.layers as u128) * (4 * h1 * h1 + 2 * h1 * h2)
    }

    /// Elements of one layer's weights.
    pub fn layer_weight_elements(&self) -> u128 {
        self.weight_elements() / self.layers as u128
    }

    pub fn head_dim(&self) -> u64 {
        self.hidden / self.heads
    }
}

impl Workload {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.prompt_len == 0 {
            return Err(ModelError::ZeroWorkload("s"));
        }
        if self.gen_len == 0 {
            return Err(ModelError::ZeroWorkload("n"));
        }
        Ok(())
    }

    /// Longest KV sequence reached during generation.
    pub fn peak_seq_len(&self) -> u64 {
        self.prompt_len + self.gen_len
    }
}

/// Scales an element count to bytes. Integral widths stay exact integer
/// arithmetic; fractional widths round to the nearest byte.
pub(crate) fn elements_to_bytes(elements: u128, bytes_per_element: f64) -> u128 {
    if bytes_per_element.fract() == 0.0 && bytes_per_element >= 1.0 {
        elements * bytes_per_element as u128
    } else {
        (elements as f64 * bytes_per_element).round() as u128
    }
}

/// Total weight bytes: l * (8*h1^2 + 4*h1*h2) at FP16.
pub fn weight_bytes(model: &ModelSpec) -> u128 {
    elements_to_bytes(model.weight_elements(), model.bytes_per_element)
}

/// Peak KV-cache bytes for `batch` concurrent sequences:
/// 4 * b * l * h1 * (s + n) at FP16 (K and V, one entry per token per layer).
pub fn kv_cache_peak_bytes(model: &ModelSpec, batch: u64, workload: &Workload) -> u128 {
    let elements = 2u128
        * batch as u128
        * model.layers as u128
        * model.hidden as u128
        * workload.peak_seq_len() as u128;
    elements_to_bytes(elements, model.bytes_per_element)
}

/// Peak activation bytes: one layer's activations per sequence, at their
/// prefill (widest) size of b * s * h1 elements.
pub fn activation_peak_bytes(model: &ModelSpec, batch: u64, workload: &Workload) -> u128 {
    let elements = batch as u128 * workload.prompt_len as u128 * model.hidden as u128;
    elements_to_bytes(elements, model.bytes_per_element)
}

/// Generation throughput in token/s: b * n / t.
pub fn generation_throughput(batch: f64, gen_len: f64, seconds: f64) -> Result<f64, ModelError> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(ModelError::NonPositiveTime(seconds));
    }
    Ok(batch * gen_len / seconds)
}

/// Bandwidth of one transfer channel: either a flat rate or a piecewise-linear
/// table over transfer size (both in bytes/second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthModel {
    Constant(f64),
    Table { table: Vec<BandwidthPoint> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthPoint {
    /// Transfer size this sample was measured at.
    pub bytes: f64,
    /// Achieved bandwidth in bytes/second.
    pub bytes_per_sec: f64,
}

impl BandwidthModel {
    /// Effective bandwidth for a transfer of `nominal_bytes`. Tables
    /// interpolate linearly and clamp outside the sampled range.
    pub fn at(&self, nominal_bytes: f64) -> f64 {
        match self {
            BandwidthModel::Constant(bw) => *bw,
            BandwidthModel::Table { table } => {
                if table.is_empty() {
                    return 0.0;
                }
                if nominal_bytes <= table[0].bytes {
                    return table[0].bytes_per_sec;
                }
                for pair in table.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    if nominal_bytes <= b.bytes {
                        let t = (nominal_bytes - a.bytes) / (b.bytes - a.bytes);
                        return a.bytes_per_sec + t * (b.bytes_per_sec - a.bytes_per_sec);
                    }
                }
                table[table.len() - 1].bytes_per_sec
            }
        }
    }

    fn validate(&self, name: &'static str) -> Result<(), HardwareError> {
        match self {
            BandwidthModel::Constant(bw) => {
                if !(bw.is_finite() && *bw > 0.0) {
                    return Err(HardwareError::NonPositive(name));
                }
            }
            BandwidthModel::Table { table } => {
                if table.is_empty() {
                    return Err(HardwareError::EmptyTable(name));
                }
                for p in table {
                    if !(p.bytes_per_sec.is_finite() && p.bytes_per_sec > 0.0)
                        || !(p.bytes.is_finite() && p.bytes >= 0.0)
                    {
                        return Err(HardwareError::NonPositive(name));
                    }
                }
                if table.windows(2).any(|w| w[0].bytes >= w[1].bytes) {
                    return Err(HardwareError::UnsortedTable(name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HardwareError {
    #[error("hardware constant {0} must be positive")]
    NonPositive(&'static str),
    #[error("bandwidth table for {0} is empty")]
    EmptyTable(&'static str),
    #[error("bandwidth table for {0} must be sorted by transfer size")]
    UnsortedTable(&'static str),
}

/// Measured or estimated machine profile: four transfer channels, three
/// compute rates, three memory capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    /// CPU-to-GPU bandwidth, bytes/s.
    pub ctog_bdw: BandwidthModel,
    /// GPU-to-CPU bandwidth, bytes/s.
    pub gtoc_bdw: BandwidthModel,
    /// Disk-to-CPU read bandwidth, bytes/s.
    pub dtoc_bdw: BandwidthModel,
    /// CPU-to-disk write bandwidth, bytes/s.
    pub ctod_bdw: BandwidthModel,
    /// GPU dense-matmul throughput, flop/s.
    pub mm_flops: f64,
    /// GPU batched attention matmul throughput, flop/s.
    pub bmm_flops: f64,
    /// CPU compute throughput, flop/s.
    pub cpu_flops: f64,
    /// GPU memory capacity in bytes.
    pub gmem: u64,
    /// CPU memory capacity in bytes.
    pub cmem: u64,
    /// Disk capacity in bytes.
    pub nmem: u64,
    /// Free-form note, e.g. which constants are estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<(), HardwareError> {
        self.ctog_bdw.validate("ctog_bdw")?;
        self.gtoc_bdw.validate("gtoc_bdw")?;
        self.dtoc_bdw.validate("dtoc_bdw")?;
        self.ctod_bdw.validate("ctod_bdw")?;
        for (name, v) in [
            ("mm_flops", self.mm_flops),
            ("bmm_flops", self.bmm_flops),
            ("cpu_flops", self.cpu_flops),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(HardwareError::NonPositive(name));
            }
        }
        for (name, v) in [("gmem", self.gmem), ("cmem", self.cmem), ("nmem", self.nmem)] {
            if v == 0 {
                return Err(HardwareError::NonPositive(name));
            }
        }
        Ok(())
    }
}

/// Where a tensor class lives, as fractions over GPU/CPU/disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Gpu,
    Cpu,
    Disk,
}

impl Device {
    pub fn name(&self) -> &'static str {
        match self {
            Device::Gpu => "gpu",
            Device::Cpu => "cpu",
            Device::Disk => "disk",
        }
    }
}

/// An offloading policy: block shape plus placement fractions for weights,
/// KV cache, and activations over GPU/CPU/disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    /// Samples per GPU batch.
    pub gbs: u64,
    /// GPU batches per block; the block size is gbs * num_gpu_batches.
    pub num_gpu_batches: u64,
    /// Weight fraction on GPU.
    pub wg: f64,
    /// Weight fraction on CPU.
    pub wc: f64,
    /// Weight fraction on disk.
    pub wd: f64,
    /// KV-cache fraction on GPU.
    pub cg: f64,
    /// KV-cache fraction on CPU.
    pub cc: f64,
    /// KV-cache fraction on disk.
    pub cd: f64,
    /// Activation fraction on GPU.
    pub hg: f64,
    /// Activation fraction on CPU.
    pub hc: f64,
    /// Activation fraction on disk.
    pub hd: f64,
    /// Run decode attention on the CPU for the CPU/disk-resident cache
    /// portions instead of moving that cache to the GPU.
    #[serde(default = "default_true")]
    pub cpu_delegation: bool,
    /// Optional group-wise quantization applied to weights and KV cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<QuantConfig>,
}

fn default_true() -> bool {
    true
}

/// Tolerance for placement-fraction sums and ranges.
pub const FRACTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyViolation(pub String);

impl std::fmt::Display for PolicyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl Policy {
    /// Block size: the number of sequences decoded together.
    pub fn block_size(&self) -> u64 {
        self.gbs * self.num_gpu_batches
    }

    pub fn weight_fractions(&self) -> [f64; 3] {
        [self.wg, self.wc, self.wd]
    }

    pub fn cache_fractions(&self) -> [f64; 3] {
        [self.cg, self.cc, self.cd]
    }

    pub fn act_fractions(&self) -> [f64; 3] {
        [self.hg, self.hc, self.hd]
    }

    /// The nine placement fractions in canonical order
    /// wg, wc, wd, cg, cc, cd, hg, hc, hd.
    pub fn fractions(&self) -> [f64; 9] {
        [
            self.wg, self.wc, self.wd, self.cg, self.cc, self.cd, self.hg, self.hc, self.hd,
        ]
    }
}

/// Checks batch shape, fraction ranges, per-class sums, and the compression
/// config. Returns every violation found, empty when the policy is valid.
pub fn validate_policy(policy: &Policy) -> Vec<PolicyViolation> {
    let mut violations = Vec::new();
    if policy.gbs == 0 {
        violations.push(PolicyViolation("gbs must be positive".into()));
    }
    if policy.num_gpu_batches == 0 {
        violations.push(PolicyViolation("num_gpu_batches must be positive".into()));
    }
    let named = [
        ("wg", policy.wg),
        ("wc", policy.wc),
        ("wd", policy.wd),
        ("cg", policy.cg),
        ("cc", policy.cc),
        ("cd", policy.cd),
        ("hg", policy.hg),
        ("hc", policy.hc),
        ("hd", policy.hd),
    ];
    for (name, v) in named {
        if !v.is_finite() || v < -FRACTION_TOL || v > 1.0 + FRACTION_TOL {
            violations.push(PolicyViolation(format!("{name} = {v} outside [0, 1]")));
        }
    }
    for (class, sum) in [
        ("weight", policy.wg + policy.wc + policy.wd),
        ("cache", policy.cg + policy.cc + policy.cd),
        ("activation", policy.hg + policy.hc + policy.hd),
    ] {
        if (sum - 1.0).abs() > FRACTION_TOL {
            violations.push(PolicyViolation(format!("{class} fractions sum {sum} != 1")));
        }
    }
    if let Some(cfg) = &policy.compression {
        if let Err(e) = cfg.validate() {
            violations.push(PolicyViolation(format!("compression: {e}")));
        }
    }
    violations
}

/// Byte totals split across the three devices. `gpu + cpu + disk` equals the
/// total exactly; the disk share absorbs rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSplit {
    pub gpu: u128,
    pub cpu: u128,
    pub disk: u128,
}

impl DeviceSplit {
    fn of(total: u128, fractions: [f64; 3]) -> DeviceSplit {
        let gpu = (total as f64 * fractions[0]).round() as u128;
        let cpu = (total as f64 * fractions[1]).round() as u128;
        let gpu = gpu.min(total);
        let cpu = cpu.min(total - gpu);
        DeviceSplit {
            gpu,
            cpu,
            disk: total - gpu - cpu,
        }
    }

    pub fn total(&self) -> u128 {
        self.gpu + self.cpu + self.disk
    }
}

/// Footprint report for one workload: totals, and per-device splits when a
/// policy is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByteReport {
    pub weights_bytes: u128,
    pub kv_peak_bytes: u128,
    pub activations_bytes: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_split: Option<DeviceSplit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kv_split: Option<DeviceSplit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activations_split: Option<DeviceSplit>,
}

/// Computes the three headline byte totals for `batch` sequences, splitting
/// them per device when a policy is supplied.
pub fn footprint(
    model: &ModelSpec,
    batch: u64,
    workload: &Workload,
    policy: Option<&Policy>,
) -> ByteReport {
    let weights = weight_bytes(model);
    let kv = kv_cache_peak_bytes(model, batch, workload);
    let act = activation_peak_bytes(model, batch, workload);
    let (ws, cs, hs) = match policy {
        Some(p) => (
            Some(DeviceSplit::of(weights, p.weight_fractions())),
            Some(DeviceSplit::of(kv, p.cache_fractions())),
            Some(DeviceSplit::of(act, p.act_fractions())),
        ),
        None => (None, None, None),
    };
    ByteReport {
        weights_bytes: weights,
        kv_peak_bytes: kv,
        activations_bytes: act,
        weights_split: ws,
        kv_split: cs,
        activations_split: hs,
    }
}

const KIB: f64 = 1024.0;

/// Formats a byte count with binary units (KiB/MiB/GiB/TiB).
pub fn format_bytes(bytes: u128) -> String {
    let b = bytes as f64;
    let units = ["B", "KiB", "MiB", "GiB", "TiB", "PiB"];
    let mut v = b;
    let mut unit = 0;
    while v >= KIB && unit + 1 < units.len() {
        v /= KIB;
        unit += 1;
    }
    if unit == 0 {
        format!("{bytes} B")
    } else {
        format!("{:.3} {}", v, units[unit])
    }
}
