//! Roofline cost model for every kernel in the accelerator.
//!
//! Each kernel's latency is the maximum of a compute roof (MAC-array
//! cycles at the core clock) and a memory roof (bytes streamed from HBM
//! at channel bandwidth), plus a pipeline-fill constant. Costs are pure
//! functions of shape and hardware so the scheduler can price work
//! without running it.
//!
//! The module also contains the two-resource overlap schedule used to
//! hide ring-synchronization time under the next tile's compute.

use crate::config::HardwareConfig;

#[inline]
fn ceil_div(a: usize, b: usize) -> u64 {
    debug_assert!(b > 0);
    a.div_ceil(b) as u64
}

/// Cost of one matrix-processing (MP) kernel launch that multiplies a
/// `rows x cols` int8 weight block against a resident activation
/// vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpCost {
    /// MAC-array busy cycles, excluding fill.
    pub compute_cycles: u64,
    /// Pipeline fill plus the single-cycle output-requantization drain.
    pub fill_cycles: u64,
    /// Compute roof in seconds (busy cycles only).
    pub compute_time: f64,
    /// Weight-streaming roof in seconds.
    pub memory_time: f64,
    /// End-to-end latency: slower roof plus fill.
    pub total_time: f64,
}

/// Price a `rows x cols` int8 matvec on the MP kernel.
///
/// The array retires `n_channel * n_group` MACs per cycle, and the
/// weight matrix streams once from HBM at one byte per element over
/// `n_channel` channels.
pub fn mp_cost(rows: usize, cols: usize, hw: &HardwareConfig) -> MpCost {
    let macs = rows * cols;
    let compute_cycles = ceil_div(macs, hw.n_channel * hw.n_group);
    let fill_cycles = hw.mp_fill_cycles + 1;
    let compute_time = hw.cycles_to_secs(compute_cycles);
    let memory_time = macs as f64 / (hw.n_channel as f64 * hw.hbm_bw_per_channel);
    MpCost {
        compute_cycles,
        fill_cycles,
        compute_time,
        memory_time,
        total_time: compute_time.max(memory_time) + hw.cycles_to_secs(fill_cycles),
    }
}

/// Cost of one fused attention kernel launch over a `context_len`-entry
/// KV cache for the heads local to this node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhaCost {
    /// Per-head cycles of the four internal stages: score MACs, causal
    /// mask, softmax, value MACs.
    pub stage_cycles: [u64; 4],
    /// Total cycles across all local heads, including stage fill.
    pub compute_cycles: u64,
    pub compute_time: f64,
    /// KV-cache streaming roof (K and V halves read in parallel).
    pub memory_time: f64,
    pub total_time: f64,
}

/// Price attention of one query token against `context_len` cached
/// positions, for `local_heads` heads of width `head_dim`.
///
/// With `head_pipelined` the four stages overlap across heads
/// (classic pipeline: fill + one pass + (heads-1) beats of the
/// bottleneck stage); without it each head runs its stages to
/// completion before the next head starts.
pub fn mha_cost(
    context_len: usize,
    local_heads: usize,
    head_dim: usize,
    hw: &HardwareConfig,
    head_pipelined: bool,
) -> MhaCost {
    debug_assert!(context_len > 0 && local_heads > 0);
    let score = ceil_div(context_len * head_dim, hw.mha_parallelism);
    let mask = ceil_div(context_len, hw.softmax_parallelism);
    // Softmax makes three passes: max scan, exponential + sum,
    // normalize.
    let smax = 3 * mask;
    let value = score;
    let stage_cycles = [score, mask, smax, value];
    let sum: u64 = stage_cycles.iter().sum();
    let bottleneck = *stage_cycles.iter().max().expect("four stages");
    let h = local_heads as u64;
    let compute_cycles = if head_pipelined {
        hw.mha_fill_cycles + sum + (h - 1) * bottleneck
    } else {
        hw.mha_fill_cycles + h * sum
    };
    let compute_time = hw.cycles_to_secs(compute_cycles);
    // K and V stream concurrently from dedicated channel halves, one
    // byte per int8 element.
    let kv_half_bytes = (local_heads * context_len * head_dim) as f64;
    let memory_time = kv_half_bytes / ((hw.mha_kv_channels / 2) as f64 * hw.hbm_bw_per_channel);
    MhaCost {
        stage_cycles,
        compute_cycles,
        compute_time,
        memory_time,
        total_time: compute_time.max(memory_time),
    }
}

/// Cycles for the fused residual-add + layernorm unit over `dim`
/// elements. The optimized datapath folds the residual add into the
/// three normalization passes and runs wider; the baseline adds a
/// separate residual pass at its narrower width.
pub fn ln_res_cycles(dim: usize, hw: &HardwareConfig, fused: bool) -> u64 {
    if fused {
        3 * ceil_div(dim, hw.ln_parallelism)
    } else {
        4 * ceil_div(dim, hw.baseline_ln_parallelism)
    }
}

/// Cycles for the activation-function (GELU) unit over `dim` elements.
pub fn gelu_cycles(dim: usize, hw: &HardwareConfig) -> u64 {
    ceil_div(dim, hw.gelu_parallelism)
}

/// Cycles to requantize a `dim`-element activation vector to int8.
pub fn quant_cycles(dim: usize, hw: &HardwareConfig, optimized: bool) -> u64 {
    let par = if optimized {
        hw.quant_parallelism
    } else {
        hw.baseline_quant_parallelism
    };
    ceil_div(dim, par)
}

/// Result of scheduling a compute chain against its trailing
/// synchronization transfers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleCost {
    /// Wall-clock span of the whole chain.
    pub total: f64,
    /// Time not hidden under compute: `total - sum(compute)`.
    pub exposed: f64,
}

/// Overlap schedule: compute units run back to back; each unit's
/// synchronization starts once that unit's compute has finished and the
/// previous synchronization has drained, and the chain ends when the
/// last synchronization lands.
///
/// Recurrence: `sync_end = max(sync_end, compute_end_i) + sync_i`.
pub fn overlapped_schedule(compute: &[f64], sync: &[f64]) -> ScheduleCost {
    assert_eq!(compute.len(), sync.len());
    let mut compute_end = 0.0f64;
    let mut sync_end = 0.0f64;
    for (&c, &s) in compute.iter().zip(sync) {
        compute_end += c;
        sync_end = sync_end.max(compute_end) + s;
    }
    let total = compute_end.max(sync_end);
    ScheduleCost {
        total,
        exposed: total - compute_end,
    }
}

/// No-overlap schedule: every transfer fully serializes with compute.
pub fn serial_schedule(compute: &[f64], sync: &[f64]) -> ScheduleCost {
    assert_eq!(compute.len(), sync.len());
    let c: f64 = compute.iter().sum();
    let s: f64 = sync.iter().sum();
    ScheduleCost {
        total: c + s,
        exposed: s,
    }
}
