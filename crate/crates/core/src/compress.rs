//! Group-wise asymmetric quantization, compressed-size accounting, and a
//! dense numeric reference for decode attention with an optional top-k
//! sparse variant.
//!
//! Everything here runs at toy scale on plain slices. The codec's
//! effective-bits ratio is what the cost model uses to shrink weight and
//! KV-cache traffic when a policy enables compression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CompressError {
    #[error("quantization bits out of range: {0} (allowed 1..=8, or 16 for passthrough)")]
    BitsOutOfRange(u8),
    #[error("group size must be at least 1")]
    ZeroGroupSize,
    #[error("keep fraction must be in (0, 1], got {0}")]
    BadKeepFraction(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed quantized payload: {0}")]
    BadPayload(String),
}

/// Axis a tensor is grouped along. Resolution to a concrete dimension index
/// depends on the tensor's rank: output channels are the leading dimension
/// of a weight matrix, the hidden dimension is the trailing one of a cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAxis {
    OutputChannel,
    Hidden,
}

impl GroupAxis {
    pub fn resolve(self, ndim: usize) -> usize {
        match self {
            GroupAxis::OutputChannel => 0,
            GroupAxis::Hidden => ndim.saturating_sub(1),
        }
    }
}

/// Codec parameters. `bits` in 1..=8 selects min/max affine coding; 16 is a
/// lossless half-precision passthrough with no per-group metadata, so the
/// effective ratio is exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub bits: u8,
    pub group_size: u64,
    pub weights_axis: GroupAxis,
    pub cache_axis: GroupAxis,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            bits: 4,
            group_size: 64,
            weights_axis: GroupAxis::OutputChannel,
            cache_axis: GroupAxis::Hidden,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<(), CompressError> {
        if !(1..=8).contains(&self.bits) && self.bits != 16 {
            return Err(CompressError::BitsOutOfRange(self.bits));
        }
        if self.group_size == 0 {
            return Err(CompressError::ZeroGroupSize);
        }
        Ok(())
    }

    /// Stored bits per element including per-group min/max metadata.
    pub fn effective_bits(&self) -> f64 {
        if self.bits == 16 {
            16.0
        } else {
            self.bits as f64 + 32.0 / self.group_size as f64
        }
    }

    /// Compressed size over dense FP16 size. 4 bits at group 64 gives
    /// (4 + 32/64) / 16 = 0.28125.
    pub fn effective_ratio(&self) -> f64 {
        self.effective_bits() / 16.0
    }
}

/// Fraction of attention positions whose V rows are actually loaded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseConfig {
    pub keep: f64,
}

impl SparseConfig {
    pub fn validate(&self) -> Result<(), CompressError> {
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return Err(CompressError::BadKeepFraction(self.keep));
        }
        Ok(())
    }
}

/// Dense tensor at codec scale: row-major values plus a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f32>, shape: Vec<usize>) -> Result<Tensor, CompressError> {
        let elems: usize = shape.iter().product();
        if shape.is_empty() || data.len() != elems {
            return Err(CompressError::ShapeMismatch(format!(
                "{} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { data, shape })
    }
}

/// Quantized form: one code per element plus per-group min/max kept at full
/// precision in memory (the serialized layout narrows them to half
/// precision). For 16-bit passthrough the codes are raw half-precision bit
/// patterns and the min/max arrays are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub codes: Vec<u16>,
    pub group_min: Vec<f64>,
    pub group_max: Vec<f64>,
    pub shape: Vec<usize>,
    pub axis: usize,
    pub config: QuantConfig,
}

/// Geometry of grouping along one axis: elements split into lines along
/// `axis`, each line into ceil(len/g) consecutive groups.
struct Grouping {
    len: usize,
    inner: usize,
    groups_per_line: usize,
}

impl Grouping {
    fn of(shape: &[usize], axis: usize, g: usize) -> Grouping {
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        Grouping {
            len,
            inner,
            groups_per_line: len.div_ceil(g),
        }
    }

    fn group_of(&self, flat: usize, g: usize) -> usize {
        let per_outer = self.len * self.inner;
        let o = flat / per_outer;
        let rem = flat % per_outer;
        let t = rem / self.inner;
        let i = rem % self.inner;
        (o * self.inner + i) * self.groups_per_line + t / g
    }

    fn group_count(&self, outer: usize) -> usize {
        outer * self.inner * self.groups_per_line
    }
}

/// Payload bytes for a tensor of the given shape under `cfg`: packed codes
/// plus two half-precision scalars per group. The serialization header is
/// not included; this is the number the cost model scales traffic by.
pub fn compressed_bytes(shape: &[usize], cfg: &QuantConfig) -> u64 {
    let elems: u64 = shape.iter().map(|&d| d as u64).product();
    if cfg.bits == 16 {
        return elems * 2;
    }
    let axis = cfg.weights_axis.resolve(shape.len());
    let grouping = Grouping::of(shape, axis, cfg.group_size as usize);
    let outer: usize = shape[..axis].iter().product();
    let groups = grouping.group_count(outer) as u64;
    (elems * cfg.bits as u64).div_ceil(8) + groups * 4
}

/// Quantizes along the concrete `axis`. Group min/max are taken from the
/// data, so the extreme codes 0 and 2^b - 1 are always attained, which is
/// what makes requantizing a dequantized tensor reproduce identical codes.
pub fn quantize(tensor: &Tensor, cfg: &QuantConfig, axis: usize) -> Result<QuantizedTensor, CompressError> {
    cfg.validate()?;
    if axis >= tensor.shape.len() {
        return Err(CompressError::ShapeMismatch(format!(
            "axis {axis} out of range for shape {:?}",
            tensor.shape
        )));
    }
    if cfg.bits == 16 {
        return Ok(QuantizedTensor {
            codes: tensor.data.iter().map(|&v| f32_to_f16_bits(v)).collect(),
            group_min: vec![],
            group_max: vec![],
            shape: tensor.shape.clone(),
            axis,
            config: *cfg,
        });
    }

    let g = cfg.group_size as usize;
    let grouping = Grouping::of(&tensor.shape, axis, g);
    let outer: usize = tensor.shape[..axis].iter().product();
    let n_groups = grouping.group_count(outer);
    let mut group_min = vec![f64::INFINITY; n_groups];
    let mut group_max = vec![f64::NEG_INFINITY; n_groups];
    for (idx, &v) in tensor.data.iter().enumerate() {
        let gi = grouping.group_of(idx, g);
        let v = v as f64;
        group_min[gi] = group_min[gi].min(v);
        group_max[gi] = group_max[gi].max(v);
    }

    let qmax = ((1u32 << cfg.bits) - 1) as f64;
    let mut codes = vec![0u16; tensor.data.len()];
    for (idx, &v) in tensor.data.iter().enumerate() {
        let gi = grouping.group_of(idx, g);
        let (lo, hi) = (group_min[gi], group_max[gi]);
        codes[idx] = if hi > lo {
            let c = ((v as f64 - lo) / (hi - lo) * qmax).round();
            c.clamp(0.0, qmax) as u16
        } else {
            0
        };
    }
    Ok(QuantizedTensor {
        codes,
        group_min,
        group_max,
        shape: tensor.shape.clone(),
        axis,
        config: *cfg,
    })
}

pub fn dequantize(qt: &QuantizedTensor) -> Tensor {
    if qt.config.bits == 16 {
        return Tensor {
            data: qt.codes.iter().map(|&c| f16_bits_to_f32(c)).collect(),
            shape: qt.shape.clone(),
        };
    }
    let g = qt.config.group_size as usize;
    let grouping = Grouping::of(&qt.shape, qt.axis, g);
    let qmax = ((1u32 << qt.config.bits) - 1) as f64;
    let data = qt
        .codes
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let gi = grouping.group_of(idx, g);
            let (lo, hi) = (qt.group_min[gi], qt.group_max[gi]);
            if hi > lo {
                (lo + c as f64 * (hi - lo) / qmax) as f32
            } else {
                lo as f32
            }
        })
        .collect();
    Tensor {
        data,
        shape: qt.shape.clone(),
    }
}

/// Serialized layout, all little-endian:
/// u32 ndim; u64 per dim; u8 bits; u64 group size; u8 axis; codes packed
/// LSB-first at `bits` bits each; then per group an f16 min and f16 max.
/// 16-bit passthrough has no min/max section.
pub fn to_bytes(qt: &QuantizedTensor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend((qt.shape.len() as u32).to_le_bytes());
    for &d in &qt.shape {
        out.extend((d as u64).to_le_bytes());
    }
    out.push(qt.config.bits);
    out.extend(qt.config.group_size.to_le_bytes());
    out.push(qt.axis as u8);

    let bits = qt.config.bits as usize;
    let mut bytes = vec![0u8; (qt.codes.len() * bits).div_ceil(8)];
    for (i, &code) in qt.codes.iter().enumerate() {
        let mut pos = i * bits;
        for b in 0..bits {
            if code >> b & 1 == 1 {
                bytes[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out.extend(bytes);
    for (&lo, &hi) in qt.group_min.iter().zip(&qt.group_max) {
        out.extend(f32_to_f16_bits(lo as f32).to_le_bytes());
        out.extend(f32_to_f16_bits(hi as f32).to_le_bytes());
    }
    out
}

pub fn from_bytes(buf: &[u8]) -> Result<QuantizedTensor, CompressError> {
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8], CompressError> {
        if *at + n > buf.len() {
            return Err(CompressError::BadPayload("truncated".into()));
        }
        let s = &buf[*at..*at + n];
        *at += n;
        Ok(s)
    };
    let ndim = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    if ndim == 0 || ndim > 8 {
        return Err(CompressError::BadPayload(format!("bad rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        shape.push(d as usize);
    }
    let bits = take(&mut at, 1)?[0];
    let group_size = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
    let axis = take(&mut at, 1)?[0] as usize;
    let config = QuantConfig {
        bits,
        group_size,
        ..QuantConfig::default()
    };
    config.validate().map_err(|e| CompressError::BadPayload(e.to_string()))?;
    if axis >= ndim {
        return Err(CompressError::BadPayload(format!("axis {axis} out of range")));
    }

    let elems: usize = shape.iter().product();
    let code_bytes = (elems * bits as usize).div_ceil(8);
    let packed = take(&mut at, code_bytes)?;
    let mut codes = vec![0u16; elems];
    for (i, code) in codes.iter_mut().enumerate() {
        let mut pos = i * bits as usize;
        for b in 0..bits as usize {
            if packed[pos / 8] >> (pos % 8) & 1 == 1 {
                *code |= 1 << b;
            }
            pos += 1;
        }
    }

    let (mut group_min, mut group_max) = (vec![], vec![]);
    if bits != 16 {
        let grouping = Grouping::of(&shape, axis, group_size as usize);
        let outer: usize = shape[..axis].iter().product();
        let n_groups = grouping.group_count(outer);
        for _ in 0..n_groups {
            let lo = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap());
            let hi = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap());
            group_min.push(f16_bits_to_f32(lo) as f64);
            group_max.push(f16_bits_to_f32(hi) as f64);
        }
    }
    if at != buf.len() {
        return Err(CompressError::BadPayload(format!(
            "{} trailing bytes",
            buf.len() - at
        )));
    }
    Ok(QuantizedTensor {
        codes,
        group_min,
        group_max,
        shape,
        axis,
        config,
    })
}

/// Converts an IEEE half-precision bit pattern to f32 (exact).
pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let mant = (h & 0x03ff) as u32;
    let bits = match (exp, mant) {
        (0, 0) => sign,
        (0, m) => {
            let p = 31 - m.leading_zeros();
            let exp32 = p + 103;
            let m32 = (m << (23 - p)) & 0x007f_ffff;
            sign | (exp32 << 23) | m32
        }
        (0x1f, 0) => sign | 0x7f80_0000,
        (0x1f, m) => sign | 0x7fc0_0000 | (m << 13),
        (e, m) => sign | ((e + 112) << 23) | (m << 13),
    };
    f32::from_bits(bits)
}

/// Rounds an f32 to the nearest IEEE half-precision value (ties to even).
pub fn f32_to_f16_bits(v: f32) -> u16 {
    let bits = v.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let mant = bits & 0x007f_ffff;
    if exp == 0xff {
        return sign | 0x7c00 | if mant != 0 { 0x0200 } else { 0 };
    }
    let unbiased = exp - 127;
    if unbiased > 15 {
        return sign | 0x7c00;
    }
    if unbiased >= -14 {
        let m = mant | 0x0080_0000;
        let shifted = m >> 13;
        let rem = m & 0x1fff;
        let mut h = (((unbiased + 15) as u32) << 10) | (shifted & 0x03ff);
        if rem > 0x1000 || (rem == 0x1000 && shifted & 1 == 1) {
            h += 1;
        }
        return sign | h as u16;
    }
    if unbiased >= -25 {
        let m = mant | 0x0080_0000;
        let shift = (-1 - unbiased) as u32;
        let shifted = m >> shift;
        let rem = m & ((1u32 << shift) - 1);
        let half = 1u32 << (shift - 1);
        let mut h = shifted;
        if rem > half || (rem == half && shifted & 1 == 1) {
            h += 1;
        }
        return sign | h as u16;
    }
    sign
}

/// Projection matrices for one decode-attention layer, each `hidden` square,
/// row-major, applied as row-vector times matrix.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub hidden: usize,
    pub heads: usize,
}

impl AttentionWeights {
    fn validate(&self) -> Result<(), CompressError> {
        let n = self.hidden * self.hidden;
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if w.len() != n {
                return Err(CompressError::ShapeMismatch(format!(
                    "{name} has {} values, expected {n}",
                    w.len()
                )));
            }
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(CompressError::ShapeMismatch(format!(
                "{} heads do not divide hidden {}",
                self.heads, self.hidden
            )));
        }
        Ok(())
    }
}

/// Byte accounting for the sparse variant: which share of V rows was
/// actually gathered, counted per (sample, head) at 2 bytes per element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparseStats {
    pub v_rows_touched: u64,
    pub v_rows_dense: u64,
    pub v_bytes_touched: u64,
    pub v_bytes_dense: u64,
}

fn matmul(x: &[f64], w: &[f64], rows: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * dim];
    for r in 0..rows {
        for k in 0..dim {
            let xv = x[r * dim + k];
            if xv != 0.0 {
                for c in 0..dim {
                    out[r * dim + c] += xv * w[k * dim + c];
                }
            }
        }
    }
    out
}

fn check_attention_shapes(
    t: &[f64],
    batch: usize,
    k_cache: &[f64],
    v_cache: &[f64],
    seq: usize,
    w: &AttentionWeights,
) -> Result<(), CompressError> {
    w.validate()?;
    let h = w.hidden;
    if t.len() != batch * h {
        return Err(CompressError::ShapeMismatch(format!(
            "token activations have {} values, expected batch {batch} x hidden {h}",
            t.len()
        )));
    }
    for (name, cache) in [("K cache", k_cache), ("V cache", v_cache)] {
        if cache.len() != batch * seq * h {
            return Err(CompressError::ShapeMismatch(format!(
                "{name} has {} values, expected {batch} x {seq} x {h}",
                cache.len()
            )));
        }
    }
    Ok(())
}

/// One decode step of scaled-dot-product attention over a KV cache: the new
/// token is projected, appended to the cache, attended per head with a
/// 1/sqrt(head_dim) scale, projected through `wo`, and added residually.
/// `t` is batch x hidden; caches are batch x seq x hidden of already
/// projected keys/values. Returns batch x hidden outputs.
pub fn reference_decode_attention(
    t: &[f64],
    batch: usize,
    k_cache: &[f64],
    v_cache: &[f64],
    seq: usize,
    w: &AttentionWeights,
) -> Result<Vec<f64>, CompressError> {
    let (out, _) = attend(t, batch, k_cache, v_cache, seq, w, 1.0)?;
    Ok(out)
}

/// Top-k variant: per sample and head, only the ceil(keep * positions)
/// highest-scoring positions contribute; their softmax weights are
/// renormalized and only those V rows are gathered (and counted).
pub fn topk_sparse_attention(
    t: &[f64],
    batch: usize,
    k_cache: &[f64],
    v_cache: &[f64],
    seq: usize,
    w: &AttentionWeights,
    sparse: &SparseConfig,
) -> Result<(Vec<f64>, SparseStats), CompressError> {
    sparse.validate()?;
    attend(t, batch, k_cache, v_cache, seq, w, sparse.keep)
}

fn attend(
    t: &[f64],
    batch: usize,
    k_cache: &[f64],
    v_cache: &[f64],
    seq: usize,
    w: &AttentionWeights,
    keep: f64,
) -> Result<(Vec<f64>, SparseStats), CompressError> {
    check_attention_shapes(t, batch, k_cache, v_cache, seq, w)?;
    let h = w.hidden;
    let d = h / w.heads;
    let total = seq + 1;
    let kept = ((keep * total as f64).ceil() as usize).clamp(1, total);

    let q = matmul(t, &w.wq, batch, h);
    let k_new = matmul(t, &w.wk, batch, h);
    let v_new = matmul(t, &w.wv, batch, h);

    let mut context = vec![0.0; batch * h];
    for b in 0..batch {
        for head in 0..w.heads {
            let off = head * d;
            let key_at = |pos: usize, dim: usize| {
                if pos < seq {
                    k_cache[(b * seq + pos) * h + off + dim]
                } else {
                    k_new[b * h + off + dim]
                }
            };
            let val_at = |pos: usize, dim: usize| {
                if pos < seq {
                    v_cache[(b * seq + pos) * h + off + dim]
                } else {
                    v_new[b * h + off + dim]
                }
            };
            let mut scores = vec![0.0f64; total];
            for (pos, s) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for dim in 0..d {
                    dot += q[b * h + off + dim] * key_at(pos, dim);
                }
                *s = dot / (d as f64).sqrt();
            }
            let mut order: Vec<usize> = (0..total).collect();
            order.sort_by(|&a, &bb| scores[bb].total_cmp(&scores[a]).then(a.cmp(&bb)));
            order.truncate(kept);
            let m = order.iter().map(|&p| scores[p]).fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = order.iter().map(|&p| (scores[p] - m).exp()).collect();
            let z: f64 = weights.iter().sum();
            for wv in weights.iter_mut() {
                *wv /= z;
            }
            debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (wi, &pos) in weights.iter().zip(&order) {
                for dim in 0..d {
                    context[b * h + off + dim] += wi * val_at(pos, dim);
                }
            }
        }
    }

    let mut out = matmul(&context, &w.wo, batch, h);
    for (o, &ti) in out.iter_mut().zip(t) {
        *o += ti;
    }
    let rows_touched = (batch * w.heads * kept) as u64;
    let rows_dense = (batch * w.heads * total) as u64;
    let stats = SparseStats {
        v_rows_touched: rows_touched,
        v_rows_dense: rows_dense,
        v_bytes_touched: rows_touched * d as u64 * 2,
        v_bytes_dense: rows_dense * d as u64 * 2,
    };
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(bits: u8, group_size: u64) -> QuantConfig {
        QuantConfig {
            bits,
            group_size,
            ..QuantConfig::default()
        }
    }

    #[test]
    fn constant_group_round_trips_exactly() {
        let t = Tensor::new(vec![3.25; 100], vec![100]).unwrap();
        let qt = quantize(&t, &cfg(4, 64), 0).unwrap();
        assert!(qt.codes.iter().all(|&c| c == 0));
        assert_eq!(dequantize(&qt).data, t.data);
    }

    #[test]
    fn group_extremes_get_extreme_codes_and_exact_round_trip() {
        let t = Tensor::new(vec![0.0, 1.0], vec![2]).unwrap();
        let qt = quantize(&t, &cfg(4, 64), 0).unwrap();
        assert_eq!(qt.codes, vec![0, 15]);
        assert_eq!(dequantize(&qt).data, vec![0.0, 1.0]);
    }

    #[test]
    fn four_bit_error_bound_on_large_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-4.0f32..4.0)).collect();
        let t = Tensor::new(data, vec![n]).unwrap();
        let c = cfg(4, 64);
        let qt = quantize(&t, &c, 0).unwrap();
        let back = dequantize(&qt);
        for (i, (&orig, &deq)) in t.data.iter().zip(&back.data).enumerate() {
            let gi = i / 64;
            let range = qt.group_max[gi] - qt.group_min[gi];
            let bound = range / 30.0 + 1e-6;
            assert!(
                (orig as f64 - deq as f64).abs() <= bound,
                "element {i}: |{orig} - {deq}| > {bound}"
            );
        }
    }

    #[test]
    fn error_bound_tightens_with_more_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data: Vec<f32> = (0..4096).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let t = Tensor::new(data, vec![4096]).unwrap();
        let mut last = f64::INFINITY;
        for bits in [2u8, 4, 6, 8] {
            let qt = quantize(&t, &cfg(bits, 64), 0).unwrap();
            let back = dequantize(&qt);
            let worst = t
                .data
                .iter()
                .zip(&back.data)
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .fold(0.0f64, f64::max);
            assert!(worst <= last, "bits {bits}: {worst} > {last}");
            last = worst;
        }
    }

    #[test]
    fn requantizing_a_dequantized_tensor_reproduces_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..1000).map(|_| rng.random_range(-2.0f32..5.0)).collect();
        let t = Tensor::new(data, vec![10, 100]).unwrap();
        for bits in [1u8, 3, 4, 8] {
            let c = cfg(bits, 32);
            let qt = quantize(&t, &c, 1).unwrap();
            let again = quantize(&dequantize(&qt), &c, 1).unwrap();
            assert_eq!(qt.codes, again.codes, "bits {bits}");
        }
    }

    #[test]
    fn effective_ratio_values() {
        assert_eq!(cfg(4, 64).effective_ratio(), 0.28125);
        assert_eq!(cfg(16, 64).effective_ratio(), 1.0);
        assert_eq!(cfg(8, 32).effective_bits(), 9.0);
    }

    #[test]
    fn halving_group_size_doubles_metadata_bytes() {
        let shape = [128usize, 256];
        let cg = compressed_bytes(&shape, &cfg(4, 64));
        let ch = compressed_bytes(&shape, &cfg(4, 32));
        let payload = (128u64 * 256 * 4).div_ceil(8);
        assert_eq!(ch - payload, 2 * (cg - payload));
    }

    #[test]
    fn compressed_bytes_counts_codes_and_group_metadata() {
        // 128 lines of 64 along the trailing axis resolved for weights is
        // axis 0: lines run along dim 0 (length 128), 64 inner positions.
        let shape = [128usize, 64];
        let c = cfg(4, 64);
        let groups = (128u64).div_ceil(64) * 64;
        assert_eq!(
            compressed_bytes(&shape, &c),
            (128 * 64 * 4u64).div_ceil(8) + groups * 4
        );
        assert_eq!(compressed_bytes(&shape, &cfg(16, 64)), 128 * 64 * 2);
    }

    #[test]
    fn sixteen_bit_passthrough_is_lossless_for_half_precision_data() {
        let values: Vec<f32> = (0..2000u16).map(|i| f16_bits_to_f32(i * 7)).collect();
        let t = Tensor::new(values.clone(), vec![2000]).unwrap();
        let qt = quantize(&t, &cfg(16, 64), 0).unwrap();
        assert!(qt.group_min.is_empty());
        assert_eq!(dequantize(&qt).data, values);
    }

    #[test]
    fn serialization_round_trip_preserves_codes_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f32> = (0..300).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let t = Tensor::new(data, vec![3, 10, 10]).unwrap();
        for bits in [3u8, 4, 7, 16] {
            let qt = quantize(&t, &cfg(bits, 16), 2).unwrap();
            let buf = to_bytes(&qt);
            let back = from_bytes(&buf).unwrap();
            assert_eq!(back.codes, qt.codes, "bits {bits}");
            assert_eq!(back.shape, qt.shape);
            assert_eq!(back.axis, 2);
            assert_eq!(back.config.bits, bits);
            for (a, b) in back.group_min.iter().zip(&qt.group_min) {
                let f16_ulp = (b.abs() * 1e-3).max(1e-7);
                assert!((a - b).abs() <= f16_ulp);
            }
        }
    }

    #[test]
    fn truncated_and_oversized_payloads_are_rejected() {
        let t = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![4]).unwrap();
        let qt = quantize(&t, &cfg(4, 2), 0).unwrap();
        let buf = to_bytes(&qt);
        assert!(from_bytes(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_bits_and_group() {
        assert!(cfg(0, 64).validate().is_err());
        assert!(cfg(9, 64).validate().is_err());
        assert!(cfg(4, 0).validate().is_err());
        assert!(cfg(16, 64).validate().is_ok());
        assert!(
            cfg(9, 64)
                .validate()
                .unwrap_err()
                .to_string()
                .contains("bits out of range")
        );
    }

    #[test]
    fn half_precision_conversion_round_trips_all_finite_patterns() {
        for bits in 0..=u16::MAX {
            let f = f16_bits_to_f32(bits);
            if f.is_nan() {
                assert!(f16_bits_to_f32(f32_to_f16_bits(f)).is_nan());
            } else {
                assert_eq!(f32_to_f16_bits(f), bits, "pattern {bits:#06x} -> {f}");
            }
        }
    }

    #[test]
    fn half_precision_known_values_and_rounding() {
        assert_eq!(f32_to_f16_bits(1.0), 0x3c00);
        assert_eq!(f32_to_f16_bits(-2.0), 0xc000);
        assert_eq!(f32_to_f16_bits(65504.0), 0x7bff);
        assert_eq!(f32_to_f16_bits(65536.0), 0x7c00);
        assert_eq!(f16_bits_to_f32(0x0001), 2.0f32.powi(-24));
        // Halfway between 1.0 and the next half: ties to even stays at 1.0.
        assert_eq!(f32_to_f16_bits(1.0 + 2.0f32.powi(-11)), 0x3c00);
        assert_eq!(f32_to_f16_bits(1.0 + 3.0 * 2.0f32.powi(-11)), 0x3c02);
    }

    fn small_weights(rng: &mut ChaCha8Rng, hidden: usize, heads: usize) -> AttentionWeights {
        let mut m = || -> Vec<f64> {
            (0..hidden * hidden)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect()
        };
        AttentionWeights {
            wq: m(),
            wk: m(),
            wv: m(),
            wo: m(),
            hidden,
            heads,
        }
    }

    fn identity(hidden: usize) -> Vec<f64> {
        let mut w = vec![0.0; hidden * hidden];
        for i in 0..hidden {
            w[i * hidden + i] = 1.0;
        }
        w
    }

    #[test]
    fn single_matching_key_attends_fully_to_it() {
        // With identity projections and one cached key equal to the query,
        // the new token's own key is also q itself, so both positions tie at
        // weight 1/2 and the context is the average of v rows.
        let h = 4;
        let w = AttentionWeights {
            wq: identity(h),
            wk: identity(h),
            wv: vec![0.0; h * h],
            wo: identity(h),
            hidden: h,
            heads: 1,
        };
        let t = vec![5.0, 0.0, 0.0, 0.0];
        let k_cache = t.clone();
        let v_cache = vec![2.0, 4.0, 6.0, 8.0];
        let out = reference_decode_attention(&t, 1, &k_cache, &v_cache, 1, &w).unwrap();
        // wv = 0 makes the new token's value zero, so context = v/2.
        let expect = [5.0 + 1.0, 2.0, 3.0, 4.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let h = 4;
        let seq = 7;
        let w = AttentionWeights {
            wq: identity(h),
            wk: identity(h),
            wv: identity(h),
            wo: identity(h),
            hidden: h,
            heads: 2,
        };
        let t = vec![1.0, 2.0, -1.0, 0.5];
        // Every cached key equals the new token's key, so all seq+1
        // positions get weight 1/(seq+1).
        let mut k_cache = Vec::new();
        let mut v_cache = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..seq {
            k_cache.extend(&t);
            v_cache.extend((0..h).map(|_| rng.random_range(-1.0..1.0)));
        }
        let out = reference_decode_attention(&t, 1, &k_cache, &v_cache, seq, &w).unwrap();
        let total = (seq + 1) as f64;
        for dim in 0..h {
            let mut avg = t[dim] / total;
            for p in 0..seq {
                avg += v_cache[p * h + dim] / total;
            }
            assert!((out[dim] - (avg + t[dim])).abs() < 1e-12);
        }
    }

    /// Scalar-loop re-implementation with no shared helpers.
    fn naive_attention(
        t: &[f64],
        batch: usize,
        k_cache: &[f64],
        v_cache: &[f64],
        seq: usize,
        w: &AttentionWeights,
    ) -> Vec<f64> {
        let h = w.hidden;
        let d = h / w.heads;
        let mut out = vec![0.0; batch * h];
        for b in 0..batch {
            let mut q = vec![0.0; h];
            let mut kn = vec![0.0; h];
            let mut vn = vec![0.0; h];
            for c in 0..h {
                for r in 0..h {
                    q[c] += t[b * h + r] * w.wq[r * h + c];
                    kn[c] += t[b * h + r] * w.wk[r * h + c];
                    vn[c] += t[b * h + r] * w.wv[r * h + c];
                }
            }
            let mut ctx = vec![0.0; h];
            for head in 0..w.heads {
                let mut scores = Vec::new();
                for pos in 0..=seq {
                    let mut s = 0.0;
                    for dim in 0..d {
                        let kv = if pos < seq {
                            k_cache[(b * seq + pos) * h + head * d + dim]
                        } else {
                            kn[head * d + dim]
                        };
                        s += q[head * d + dim] * kv;
                    }
                    scores.push(s / (d as f64).sqrt());
                }
                let mx = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for pos in 0..=seq {
                    for dim in 0..d {
                        let vv = if pos < seq {
                            v_cache[(b * seq + pos) * h + head * d + dim]
                        } else {
                            vn[head * d + dim]
                        };
                        ctx[head * d + dim] += exps[pos] / z * vv;
                    }
                }
            }
            for c in 0..h {
                let mut acc = t[b * h + c];
                for r in 0..h {
                    acc += ctx[r] * w.wo[r * h + c];
                }
                out[b * h + c] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_independent_scalar_loop_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..5 {
            let h = 8;
            let heads = 4;
            let batch = 3;
            let seq = 11;
            let w = small_weights(&mut rng, h, heads);
            let t: Vec<f64> = (0..batch * h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let kc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = reference_decode_attention(&t, batch, &kc, &vc, seq, &w).unwrap();
            let want = naive_attention(&t, batch, &kc, &vc, seq, &w);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn keep_everything_matches_dense_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (h, heads, batch, seq) = (16, 4, 2, 19);
        let w = small_weights(&mut rng, h, heads);
        let t: Vec<f64> = (0..batch * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = reference_decode_attention(&t, batch, &kc, &vc, seq, &w).unwrap();
        let (sparse, stats) =
            topk_sparse_attention(&t, batch, &kc, &vc, seq, &w, &SparseConfig { keep: 1.0 }).unwrap();
        for (a, b) in dense.iter().zip(&sparse) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(stats.v_rows_touched, stats.v_rows_dense);
    }

    #[test]
    fn dominant_key_with_minimal_keep_attends_to_it_alone() {
        let h = 4;
        let w = AttentionWeights {
            wq: identity(h),
            wk: identity(h),
            wv: identity(h),
            wo: identity(h),
            hidden: h,
            heads: 1,
        };
        let t = vec![10.0, 0.0, 0.0, 0.0];
        let seq = 9;
        let mut k_cache = vec![0.0; seq * h];
        let mut v_cache = vec![0.0; seq * h];
        // Position 3 aligns with the query; everything else is orthogonal.
        k_cache[3 * h] = 10.0;
        for (p, row) in v_cache.chunks_mut(h).enumerate() {
            row[1] = p as f64;
        }
        for (p, row) in k_cache.chunks_mut(h).enumerate() {
            if p != 3 {
                row[2] = -5.0;
            }
        }
        let keep = 1.0 / (seq + 1) as f64;
        let (out, stats) =
            topk_sparse_attention(&t, 1, &k_cache, &v_cache, seq, &w, &SparseConfig { keep }).unwrap();
        assert_eq!(stats.v_rows_touched, 1);
        // The new token's own key (10, 0, 0, 0) scores as high as position
        // 3; index order breaks the tie toward the cached key, whose value
        // row is (0, 3, 0, 0). Residual adds t.
        let expect = [10.0, 3.0, 0.0, 0.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn ten_percent_keep_touches_exactly_ten_percent_of_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (h, heads, batch) = (8, 2, 2);
        let seq = 39;
        let w = small_weights(&mut rng, h, heads);
        let t: Vec<f64> = (0..batch * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, stats) =
            topk_sparse_attention(&t, batch, &kc, &vc, seq, &w, &SparseConfig { keep: 0.1 }).unwrap();
        assert_eq!(stats.v_rows_dense, (batch * heads * 40) as u64);
        assert_eq!(stats.v_rows_touched * 10, stats.v_rows_dense);
        assert_eq!(stats.v_bytes_touched * 10, stats.v_bytes_dense);
    }

    #[test]
    fn sparse_output_converges_to_dense_as_keep_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, heads, batch, seq) = (8, 2, 2, 31);
        let w = small_weights(&mut rng, h, heads);
        let t: Vec<f64> = (0..batch * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vc: Vec<f64> = (0..batch * seq * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = reference_decode_attention(&t, batch, &kc, &vc, seq, &w).unwrap();
        let mut last = f64::INFINITY;
        for keep in [0.1, 0.25, 0.5, 1.0] {
            let (out, _) =
                topk_sparse_attention(&t, batch, &kc, &vc, seq, &w, &SparseConfig { keep }).unwrap();
            let dev = out
                .iter()
                .zip(&dense)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(dev <= last + 1e-12, "keep {keep}: {dev} > {last}");
            last = dev;
        }
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let w = AttentionWeights {
            wq: vec![0.0; 16],
            wk: vec![0.0; 16],
            wv: vec![0.0; 16],
            wo: vec![0.0; 15],
            hidden: 4,
            heads: 2,
        };
        let t = vec![0.0; 4];
        let err = reference_decode_attention(&t, 1, &[], &[], 0, &w).unwrap_err();
        assert!(matches!(err, CompressError::ShapeMismatch(_)));
        let w2 = AttentionWeights {
            wo: vec![0.0; 16],
            heads: 3,
            ..w
        };
        assert!(reference_decode_attention(&t, 1, &[], &[], 0, &w2).is_err());
    }
}
