//! Per-token stage planning: which kernel runs when, what it costs,
//! and how its ring synchronization lands.
//!
//! A token pass through one transformer block is eight stages on the
//! time-multiplexed kernels, in dataflow order:
//!
//! | # | stage        | kernel | ring gather after            |
//! |---|--------------|--------|------------------------------|
//! | 1 | ln_res_1     | AUX    | –                            |
//! | 2 | qkv          | MP     | – (Q/K/V stay head-local)    |
//! | 3 | mha          | MHA    | int8 context chunks          |
//! | 4 | out_proj     | MP     | f32 partial outputs          |
//! | 5 | ln_res_2     | AUX    | –                            |
//! | 6 | ffn1         | MP     | f32 hidden partials          |
//! | 7 | gelu         | AUX    | – (replicated, full width)   |
//! | 8 | ffn2         | MP     | f32 partial outputs          |
//!
//! plus one final layernorm per token. MP-stage gathers are tiled: the
//! router ships each tile's output slice while the next tile computes,
//! so only the final tile's transfer is exposed when transfers are
//! shorter than tile compute. The context gather (stage 3) cannot be
//! tiled — the output projection needs the whole context vector — so
//! it always pays its full wire time.

use crate::config::{HardwareConfig, ModelConfig, OptFlags};
use crate::ring::gather_time;
use crate::shard::ShardPlan;
use crate::timing::{
    gelu_cycles, ln_res_cycles, mha_cost, mp_cost, overlapped_schedule, quant_cycles,
    serial_schedule, ScheduleCost,
};

/// Which hardware unit a stage occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Matrix-processing kernel (int8 matvec against streamed weights).
    Mp,
    /// Fused attention kernel.
    Mha,
    /// Auxiliary vector units (layernorm/residual, GELU, requantize).
    Aux,
}

/// Stage identity within a block (or the per-token epilogue).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOp {
    LnRes1,
    Qkv,
    Mha,
    OutProj,
    LnRes2,
    Ffn1,
    Gelu,
    Ffn2,
    FinalLn,
}

impl StageOp {
    pub fn name(self) -> &'static str {
        match self {
            StageOp::LnRes1 => "ln_res_1",
            StageOp::Qkv => "qkv",
            StageOp::Mha => "mha",
            StageOp::OutProj => "out_proj",
            StageOp::LnRes2 => "ln_res_2",
            StageOp::Ffn1 => "ffn1",
            StageOp::Gelu => "gelu",
            StageOp::Ffn2 => "ffn2",
            StageOp::FinalLn => "final_ln",
        }
    }

    pub fn kernel(self) -> KernelKind {
        match self {
            StageOp::Qkv | StageOp::OutProj | StageOp::Ffn1 | StageOp::Ffn2 => KernelKind::Mp,
            StageOp::Mha => KernelKind::Mha,
            _ => KernelKind::Aux,
        }
    }
}

/// One priced stage of a token plan. Nodes are symmetric, so a single
/// spec describes every node's copy of the stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub op: StageOp,
    /// Block index, or `None` for the per-token epilogue.
    pub block: Option<usize>,
    /// Per-node busy time on the owning kernel, seconds (includes
    /// pipeline fill).
    pub compute: f64,
    /// Total ring transfer time for this stage's gather (0 = none).
    pub sync_total: f64,
    /// Output tiles the gather was split into for overlap.
    pub tiles: usize,
    /// Wall-clock span from stage start until its data (gathered where
    /// applicable) is available to the next stage.
    pub span: f64,
    /// Transfer time not hidden under this stage's compute.
    pub exposed: f64,
}

impl StageSpec {
    fn compute_only(op: StageOp, block: Option<usize>, compute: f64) -> Self {
        StageSpec {
            op,
            block,
            compute,
            sync_total: 0.0,
            tiles: 1,
            span: compute,
            exposed: 0.0,
        }
    }
}

/// Fully priced single-token pass at a given context length.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPlan {
    pub context_len: usize,
    pub stages: Vec<StageSpec>,
    /// Sum of stage spans: the token's latency.
    pub span: f64,
}

/// Build an MP stage: roofline-price the local matvec, then lay its
/// output gather over tile boundaries.
fn mp_stage(
    op: StageOp,
    block: usize,
    rows: usize,
    cols: usize,
    out_elem_bytes: usize,
    hw: &HardwareConfig,
    flags: &OptFlags,
) -> StageSpec {
    let cost = mp_cost(rows, cols, hw);
    let busy = cost.compute_time.max(cost.memory_time);
    let fill = hw.cycles_to_secs(cost.fill_cycles);
    let compute = busy + fill;
    if hw.n_nodes == 1 || out_elem_bytes == 0 {
        return StageSpec::compute_only(op, Some(block), compute);
    }
    let tile_rows = hw.n_channel * hw.n_group;
    let sched: ScheduleCost;
    let sync_total: f64;
    let tiles;
    if flags.sync_overlap {
        // Slice the output rows into tiles; tile compute is the busy
        // time pro-rated by rows (fill charged to the first tile), tile
        // sync is the gather of just that tile's output slice.
        let mut row_splits = Vec::new();
        let mut left = rows;
        while left > 0 {
            let take = left.min(tile_rows);
            row_splits.push(take);
            left -= take;
        }
        tiles = row_splits.len();
        let mut compute_v = Vec::with_capacity(tiles);
        let mut sync_v = Vec::with_capacity(tiles);
        for (i, &r) in row_splits.iter().enumerate() {
            let mut c = busy * r as f64 / rows as f64;
            if i == 0 {
                c += fill;
            }
            compute_v.push(c);
            sync_v.push(gather_time(r * out_elem_bytes, hw.n_nodes, hw));
        }
        sync_total = sync_v.iter().sum();
        sched = overlapped_schedule(&compute_v, &sync_v);
    } else {
        tiles = 1;
        sync_total = gather_time(rows * out_elem_bytes, hw.n_nodes, hw);
        sched = serial_schedule(&[compute], &[sync_total]);
    }
    StageSpec {
        op,
        block: Some(block),
        compute,
        sync_total,
        tiles,
        span: sched.total,
        exposed: sched.exposed,
    }
}

/// Plan one token at `context_len` cached positions (including the
/// token itself). All nodes execute this same plan in lockstep.
pub fn plan_token(
    model: &ModelConfig,
    hw: &HardwareConfig,
    flags: &OptFlags,
    context_len: usize,
) -> TokenPlan {
    assert!(context_len >= 1);
    let plan = ShardPlan::new(model, hw.n_nodes, 0);
    let d = model.l_embed;
    let local_d = plan.local_embed();
    let local_ffn = plan.local_ffn();
    let fused = flags.fused_ln_res;
    let mut stages = Vec::with_capacity(model.n_layers * 8 + 1);
    for b in 0..model.n_layers {
        // 1: residual+layernorm, then requantize the full vector.
        let c1 = ln_res_cycles(d, hw, fused) + quant_cycles(d, hw, fused);
        stages.push(StageSpec::compute_only(
            StageOp::LnRes1,
            Some(b),
            hw.cycles_to_secs(c1),
        ));
        // 2: Q/K/V projections; outputs stay local to this node's
        // heads, so no gather.
        stages.push(mp_stage(StageOp::Qkv, b, 3 * local_d, d, 0, hw, flags));
        // 3: attention, then gather the quantized context chunks. The
        // chunk requantization rides on this stage.
        let mha = mha_cost(
            context_len,
            plan.local_heads(),
            model.head_dim,
            hw,
            flags.headwise_pipeline,
        );
        let ctx_quant = hw.cycles_to_secs(quant_cycles(local_d, hw, fused));
        let mha_compute = mha.total_time + ctx_quant;
        let mha_sync = if hw.n_nodes > 1 {
            gather_time(local_d, hw.n_nodes, hw)
        } else {
            0.0
        };
        let sched = serial_schedule(&[mha_compute], &[mha_sync]);
        stages.push(StageSpec {
            op: StageOp::Mha,
            block: Some(b),
            compute: mha_compute,
            sync_total: mha_sync,
            tiles: 1,
            span: sched.total,
            exposed: sched.exposed,
        });
        // 4: output projection; partial f32 outputs gathered.
        stages.push(mp_stage(StageOp::OutProj, b, local_d, d, 4, hw, flags));
        // 5: second residual+layernorm and requantize.
        let c5 = ln_res_cycles(d, hw, fused) + quant_cycles(d, hw, fused);
        stages.push(StageSpec::compute_only(
            StageOp::LnRes2,
            Some(b),
            hw.cycles_to_secs(c5),
        ));
        // 6: first feed-forward matrix; f32 hidden partials gathered
        // ahead of the activation.
        stages.push(mp_stage(StageOp::Ffn1, b, local_ffn, d, 4, hw, flags));
        // 7: GELU and requantization over the full hidden vector on
        // every node — the activation is critical path and does not
        // shrink with node count.
        let c7 = gelu_cycles(model.ffn_dim, hw) + quant_cycles(model.ffn_dim, hw, fused);
        stages.push(StageSpec::compute_only(
            StageOp::Gelu,
            Some(b),
            hw.cycles_to_secs(c7),
        ));
        // 8: second feed-forward matrix; partial outputs gathered.
        stages.push(mp_stage(
            StageOp::Ffn2,
            b,
            local_d,
            model.ffn_dim,
            4,
            hw,
            flags,
        ));
    }
    let cf = ln_res_cycles(d, hw, fused);
    stages.push(StageSpec::compute_only(
        StageOp::FinalLn,
        None,
        hw.cycles_to_secs(cf),
    ));
    let span = stages.iter().map(|s| s.span).sum();
    TokenPlan {
        context_len,
        stages,
        span,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;

    fn medium(n_nodes: usize, flags: OptFlags) -> (ModelConfig, HardwareConfig, OptFlags) {
        let cfg = SimConfig::default();
        let mut hw = cfg.hardware;
        hw.n_nodes = n_nodes;
        (cfg.model, hw, flags)
    }

    #[test]
    fn plan_has_eight_stages_per_block_plus_epilogue() {
        let (m, hw, f) = medium(1, OptFlags::default());
        let plan = plan_token(&m, &hw, &f, 64);
        assert_eq!(plan.stages.len(), m.n_layers * 8 + 1);
        let ops: Vec<StageOp> = plan.stages[..8].iter().map(|s| s.op).collect();
        assert_eq!(
            ops,
            [
                StageOp::LnRes1,
                StageOp::Qkv,
                StageOp::Mha,
                StageOp::OutProj,
                StageOp::LnRes2,
                StageOp::Ffn1,
                StageOp::Gelu,
                StageOp::Ffn2
            ]
        );
        assert_eq!(plan.stages.last().unwrap().op, StageOp::FinalLn);
    }

    #[test]
    fn single_node_has_no_synchronization() {
        let (m, hw, f) = medium(1, OptFlags::default());
        let plan = plan_token(&m, &hw, &f, 128);
        for s in &plan.stages {
            assert_eq!(s.sync_total, 0.0, "{}", s.op.name());
            assert_eq!(s.exposed, 0.0, "{}", s.op.name());
            assert!((s.span - s.compute).abs() < 1e-18);
        }
    }

    #[test]
    fn sharded_plan_syncs_after_the_right_stages() {
        let (m, hw, f) = medium(2, OptFlags::default());
        let plan = plan_token(&m, &hw, &f, 128);
        for s in &plan.stages[..8] {
            let has_sync = s.sync_total > 0.0;
            let wants_sync = matches!(
                s.op,
                StageOp::Mha | StageOp::OutProj | StageOp::Ffn1 | StageOp::Ffn2
            );
            assert_eq!(has_sync, wants_sync, "{}", s.op.name());
        }
    }

    /// Overlap hides all but the transfer tail; disabling it exposes
    /// every transfer in full.
    #[test]
    fn sync_overlap_reduces_exposure() {
        let mut flags = OptFlags::default();
        let (m, hw, _) = medium(2, flags);
        let on = plan_token(&m, &hw, &flags, 256);
        flags.sync_overlap = false;
        let off = plan_token(&m, &hw, &flags, 256);
        let on_exposed: f64 = on.stages.iter().map(|s| s.exposed).sum();
        let off_exposed: f64 = off.stages.iter().map(|s| s.exposed).sum();
        assert!(on_exposed < off_exposed);
        for s in &off.stages {
            assert!((s.exposed - s.sync_total).abs() < 1e-15, "{}", s.op.name());
        }
        assert!(on.span < off.span);
    }

    /// With transfers shorter than tile compute, an overlapped MP
    /// stage exposes exactly one tile's gather.
    #[test]
    fn overlapped_mp_stage_exposes_one_tile() {
        let (m, hw, f) = medium(2, OptFlags::default());
        let plan = plan_token(&m, &hw, &f, 256);
        for s in &plan.stages[..8] {
            if matches!(s.op, StageOp::OutProj | StageOp::Ffn1 | StageOp::Ffn2) {
                let per_tile = s.sync_total / s.tiles as f64;
                assert!(
                    (s.exposed - per_tile).abs() < 1e-12,
                    "{}: exposed {} vs per-tile {}",
                    s.op.name(),
                    s.exposed,
                    per_tile
                );
            }
        }
    }

    #[test]
    fn longer_context_costs_more() {
        let (m, hw, f) = medium(1, OptFlags::default());
        let a = plan_token(&m, &hw, &f, 8);
        let b = plan_token(&m, &hw, &f, 512);
        assert!(b.span > a.span);
        // Only attention depends on context length.
        for (sa, sb) in a.stages.iter().zip(&b.stages) {
            if sa.op != StageOp::Mha {
                assert_eq!(sa.compute, sb.compute, "{}", sa.op.name());
            }
        }
    }

    #[test]
    fn optimizations_never_slow_a_token_down() {
        let (m, hw, _) = medium(2, OptFlags::default());
        let off = plan_token(&m, &hw, &OptFlags::all_off(), 300);
        let on = plan_token(&m, &hw, &OptFlags::default(), 300);
        assert!(on.span <= off.span);
    }
}
