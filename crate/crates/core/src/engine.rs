//! Discrete-event execution of token plans across the node ring.
//!
//! The engine owns the virtual clock. For every token it asks the
//! scheduler for a priced stage list, turns each stage into per-node
//! completion events (compute done, gather done), and drains them from
//! a single min-heap ordered by time with deterministic tie-breaking
//! (time, node id, stage index, event kind, insertion order). A stage
//! is a barrier: its successor starts once every node's events for it
//! have drained. Virtual time never runs backwards; the engine asserts
//! this on every pop.
//!
//! When the run is functional, the same token sequence is pushed
//! through the sharded int8 model and the generated ids land in the
//! report; timing is data-independent, so the two passes share nothing
//! but the token count.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::path::Path;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::model::{build_bundle, greedy_next, synthetic_prompt, QuantModel};
use crate::report::{
    lane, Breakdown, Phase, RunReport, TokenTiming, Totals, TraceEvent, RING_LANE, SCHEMA_VERSION,
};
use crate::scheduler::{plan_token, KernelKind};
use crate::weights::WeightBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EvKind {
    ComputeDone,
    SyncDone,
}

/// A completion event. Ordering is total and deterministic even for
/// equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    t: f64,
    node: usize,
    stage: usize,
    kind: EvKind,
    seq: u64,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, o: &Self) -> Ordering {
        self.t
            .total_cmp(&o.t)
            .then(self.node.cmp(&o.node))
            .then(self.stage.cmp(&o.stage))
            .then(self.kind.cmp(&o.kind))
            .then(self.seq.cmp(&o.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// A finished simulation: the report plus, when requested, the trace.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: RunReport,
    pub trace: Option<Vec<TraceEvent>>,
}

/// Simulate the configured run (no trace collection).
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    simulate_opts(cfg, false)
}

/// Simulate, optionally collecting per-stage trace events.
pub fn simulate_opts(cfg: &SimConfig, collect_trace: bool) -> Result<SimOutput> {
    let cfg = cfg.clone().validated()?;
    let n_nodes = cfg.hardware.n_nodes;
    let prompt_len = cfg.run.prompt_len;
    let total_tokens = prompt_len + cfg.run.gen_len;

    let generated = if cfg.run.functional {
        Some(run_functional(&cfg)?)
    } else {
        None
    };

    let mut heap: BinaryHeap<Reverse<Event>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut clock = 0.0f64;
    let mut last_pop = 0.0f64;
    let mut trace = collect_trace.then(Vec::new);
    let mut per_token = Vec::with_capacity(total_tokens);
    let (mut mp_sum, mut mha_sum, mut aux_sum, mut exp_sum) = (0.0, 0.0, 0.0, 0.0);

    for idx in 0..total_tokens {
        let context_len = idx + 1;
        let plan = plan_token(&cfg.model, &cfg.hardware, &cfg.flags, context_len);
        let token_start = clock;
        let (mut mp, mut mha, mut aux, mut exp) = (0.0, 0.0, 0.0, 0.0);
        for (si, st) in plan.stages.iter().enumerate() {
            let stage_start = clock;
            let mut expected = 0usize;
            for node in 0..n_nodes {
                heap.push(Reverse(Event {
                    t: stage_start + st.compute,
                    node,
                    stage: si,
                    kind: EvKind::ComputeDone,
                    seq,
                }));
                seq += 1;
                expected += 1;
                if st.sync_total > 0.0 {
                    heap.push(Reverse(Event {
                        t: stage_start + st.span,
                        node,
                        stage: si,
                        kind: EvKind::SyncDone,
                        seq,
                    }));
                    seq += 1;
                    expected += 1;
                }
            }
            let mut stage_end = stage_start;
            for _ in 0..expected {
                let Reverse(ev) = heap.pop().expect("scheduled event");
                assert!(
                    ev.t >= last_pop - 1e-12,
                    "causality violated: event at {} after clock {}",
                    ev.t,
                    last_pop
                );
                last_pop = ev.t;
                stage_end = stage_end.max(ev.t);
                if let Some(tr) = trace.as_mut() {
                    let name = match st.block {
                        Some(b) => format!("blk{:02}.{}", b, st.op.name()),
                        None => st.op.name().to_string(),
                    };
                    match ev.kind {
                        EvKind::ComputeDone => tr.push(TraceEvent::complete(
                            name,
                            kernel_cat(st.op.kernel()),
                            stage_start,
                            st.compute,
                            ev.node,
                            lane(st.op.kernel()),
                        )),
                        EvKind::SyncDone => tr.push(TraceEvent::complete(
                            format!("{name}.gather"),
                            "ring",
                            ev.t - st.sync_total,
                            st.sync_total,
                            ev.node,
                            RING_LANE,
                        )),
                    }
                }
            }
            debug_assert!(heap.is_empty(), "stage barrier leaked events");
            match st.op.kernel() {
                KernelKind::Mp => mp += st.compute,
                KernelKind::Mha => mha += st.compute,
                KernelKind::Aux => aux += st.compute,
            }
            exp += st.exposed;
            clock = stage_end;
        }
        per_token.push(TokenTiming {
            index: idx,
            phase: if idx < prompt_len {
                Phase::Prefill
            } else {
                Phase::Decode
            },
            context_len,
            latency_s: clock - token_start,
            mp_s: mp,
            mha_s: mha,
            aux_s: aux,
            sync_exposed_s: exp,
        });
        mp_sum += mp;
        mha_sum += mha;
        aux_sum += aux;
        exp_sum += exp;
    }

    let prefill_time: f64 = per_token[..prompt_len].iter().map(|t| t.latency_s).sum();
    let decode_time: f64 = per_token[prompt_len..].iter().map(|t| t.latency_s).sum();
    let decode_tokens = total_tokens - prompt_len;
    let totals = Totals {
        tokens: total_tokens,
        prefill_tokens: prompt_len,
        decode_tokens,
        total_time_s: clock,
        prefill_time_s: prefill_time,
        decode_time_s: decode_time,
        tokens_per_sec: total_tokens as f64 / clock,
        mean_token_latency_s: clock / total_tokens as f64,
        mean_decode_latency_s: if decode_tokens > 0 {
            decode_time / decode_tokens as f64
        } else {
            0.0
        },
    };
    let breakdown = Breakdown {
        mp_s: mp_sum,
        mha_s: mha_sum,
        aux_s: aux_sum,
        sync_exposed_s: exp_sum,
        matmul_attention_share: (mp_sum + mha_sum) / clock,
    };
    Ok(SimOutput {
        report: RunReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            totals,
            breakdown,
            per_token,
            generated,
        },
        trace,
    })
}

fn kernel_cat(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Mp => "mp",
        KernelKind::Mha => "mha",
        KernelKind::Aux => "aux",
    }
}

/// Run the int8 model over the prompt and greedy decode; returns the
/// generated ids.
fn run_functional(cfg: &SimConfig) -> Result<Vec<usize>> {
    let bundle = match &cfg.run.weights {
        Some(p) => {
            let b = WeightBundle::load(Path::new(p))?;
            if b.model() != &cfg.model {
                return Err(Error::config(
                    "weight file model shape does not match the [model] section",
                ));
            }
            b
        }
        None => build_bundle(&cfg.model, cfg.run.seed)?,
    };
    let mut qm = QuantModel::new(bundle, cfg.hardware.n_nodes)?;
    let prompt_len = cfg.run.prompt_len;
    let gen_len = cfg.run.gen_len;
    let mut feed = synthetic_prompt(cfg.model.vocab_size, prompt_len, cfg.run.seed);
    let mut generated = Vec::with_capacity(gen_len);
    for i in 0..prompt_len + gen_len {
        let logits = qm.forward_token(feed[i])?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        if i + 1 >= prompt_len && generated.len() < gen_len {
            let next = greedy_next(&logits);
            generated.push(next);
            feed.push(next);
        }
    }
    Ok(generated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, RunConfig, SimConfig};

    /// Desk-scale config: tiny model, 4 prompt + 4 generated tokens.
    fn desk_cfg(n_nodes: usize, functional: bool) -> SimConfig {
        let mut cfg = SimConfig {
            model: ModelConfig::desk(),
            ..SimConfig::default()
        };
        cfg.hardware.n_nodes = n_nodes;
        cfg.run = RunConfig {
            prompt_len: 4,
            gen_len: 4,
            seed: 99,
            functional,
            weights: None,
        };
        cfg
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = desk_cfg(2, false);
        let a = simulate(&cfg).unwrap().report.to_json();
        let b = simulate(&cfg).unwrap().report.to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn totals_are_consistent_with_per_token_rows() {
        let out = simulate(&desk_cfg(2, false)).unwrap().report;
        assert_eq!(out.per_token.len(), 8);
        let sum: f64 = out.per_token.iter().map(|t| t.latency_s).sum();
        assert!((sum - out.totals.total_time_s).abs() < 1e-12);
        assert!(out.per_token.iter().all(|t| t.latency_s > 0.0));
        let ctx: Vec<usize> = out.per_token.iter().map(|t| t.context_len).collect();
        assert_eq!(ctx, (1..=8).collect::<Vec<_>>());
        assert_eq!(out.totals.prefill_tokens, 4);
        assert_eq!(out.totals.decode_tokens, 4);
        assert!(out.totals.tokens_per_sec > 0.0);
        let b = &out.breakdown;
        let parts = b.mp_s + b.mha_s + b.aux_s + b.sync_exposed_s;
        assert!((parts - out.totals.total_time_s).abs() < 1e-9 * out.totals.total_time_s.max(1.0));
    }

    #[test]
    fn trace_events_are_well_formed() {
        let out = simulate_opts(&desk_cfg(2, false), true).unwrap();
        let trace = out.trace.unwrap();
        assert!(!trace.is_empty());
        let total_us = out.report.totals.total_time_s * 1e6;
        let mut saw_ring = false;
        for e in &trace {
            assert_eq!(e.ph, "X");
            assert!(e.dur >= 0.0);
            assert!(e.ts >= -1e-9 && e.ts + e.dur <= total_us + 1e-6);
            assert!(e.pid < 2);
            saw_ring |= e.tid == crate::report::RING_LANE;
        }
        assert!(saw_ring, "sharded run must show ring traffic");
        // Single-node runs have no ring traffic at all.
        let solo = simulate_opts(&desk_cfg(1, false), true).unwrap();
        assert!(solo
            .trace
            .unwrap()
            .iter()
            .all(|e| e.tid != crate::report::RING_LANE));
    }

    #[test]
    fn functional_run_generates_tokens_deterministically() {
        let cfg = desk_cfg(1, true);
        let a = simulate(&cfg).unwrap().report.generated.unwrap();
        let b = simulate(&cfg).unwrap().report.generated.unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t < cfg.model.vocab_size));
    }

    #[test]
    fn optimizations_do_not_slow_the_run() {
        let mut on = desk_cfg(2, false);
        let mut off = on.clone();
        off.flags = crate::config::OptFlags::all_off();
        on.flags = crate::config::OptFlags::default();
        let t_on = simulate(&on).unwrap().report.totals.total_time_s;
        let t_off = simulate(&off).unwrap().report.totals.total_time_s;
        assert!(t_on <= t_off);
    }

    #[test]
    fn weight_file_shape_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let bundle = crate::model::build_bundle(&ModelConfig::desk(), 1).unwrap();
        bundle.save(&path).unwrap();
        let mut cfg = desk_cfg(1, true);
        cfg.model.n_layers = 1; // differs from the saved bundle
        cfg.run.weights = Some(path.to_string_lossy().into_owned());
        let err = simulate(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn saved_weights_reproduce_in_memory_generation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let cfg = desk_cfg(1, true);
        crate::model::build_bundle(&cfg.model, cfg.run.seed)
            .unwrap()
            .save(&path)
            .unwrap();
        let from_mem = simulate(&cfg).unwrap().report.generated;
        let mut cfg_file = cfg.clone();
        cfg_file.run.weights = Some(path.to_string_lossy().into_owned());
        let from_file = simulate(&cfg_file).unwrap().report.generated;
        assert_eq!(from_mem, from_file);
    }
}
