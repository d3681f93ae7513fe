//! Run artifacts: the JSON report, Chrome trace-event output, and the
//! per-token latency CSV.
//!
//! The trace uses the trace-event format's complete events (`ph: "X"`)
//! with microsecond timestamps in *virtual* time; open it in any
//! `about:tracing`-compatible viewer. `pid` is the node id and `tid`
//! the hardware lane (MP / MHA / AUX / ring).

use std::path::Path;

use serde::Serialize;

use crate::config::SimConfig;
use crate::error::Result;
use crate::scheduler::KernelKind;

pub const SCHEMA_VERSION: u32 = 1;

/// Which phase a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decode,
}

/// Timing of one simulated token.
#[derive(Debug, Clone, Serialize)]
pub struct TokenTiming {
    pub index: usize,
    pub phase: Phase,
    /// Cached positions visible to this token's attention.
    pub context_len: usize,
    pub latency_s: f64,
    pub mp_s: f64,
    pub mha_s: f64,
    pub aux_s: f64,
    pub sync_exposed_s: f64,
}

/// Whole-run aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct Totals {
    pub tokens: usize,
    pub prefill_tokens: usize,
    pub decode_tokens: usize,
    pub total_time_s: f64,
    pub prefill_time_s: f64,
    pub decode_time_s: f64,
    pub tokens_per_sec: f64,
    pub mean_token_latency_s: f64,
    pub mean_decode_latency_s: f64,
}

/// Where the virtual time went, summed over all tokens (node-0 view;
/// nodes are symmetric).
#[derive(Debug, Clone, Serialize)]
pub struct Breakdown {
    pub mp_s: f64,
    pub mha_s: f64,
    pub aux_s: f64,
    pub sync_exposed_s: f64,
    /// Fraction of total time spent in the matmul and attention
    /// kernels.
    pub matmul_attention_share: f64,
}

/// Everything a run produces except the raw trace.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: SimConfig,
    pub totals: Totals,
    pub breakdown: Breakdown,
    pub per_token: Vec<TokenTiming>,
    /// Greedy-decoded token ids, present when the functional core ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<Vec<usize>>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// One complete-duration trace event.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub name: String,
    pub cat: &'static str,
    pub ph: &'static str,
    /// Start, microseconds of virtual time.
    pub ts: f64,
    /// Duration, microseconds.
    pub dur: f64,
    pub pid: u32,
    pub tid: u32,
}

/// Lane ids per node in the trace viewer.
pub fn lane(kind: KernelKind) -> u32 {
    match kind {
        KernelKind::Mp => 0,
        KernelKind::Mha => 1,
        KernelKind::Aux => 2,
    }
}

pub const RING_LANE: u32 = 3;

impl TraceEvent {
    pub fn complete(
        name: String,
        cat: &'static str,
        start_s: f64,
        dur_s: f64,
        node: usize,
        tid: u32,
    ) -> Self {
        TraceEvent {
            name,
            cat,
            ph: "X",
            ts: start_s * 1e6,
            dur: dur_s * 1e6,
            pid: node as u32,
            tid,
        }
    }
}

#[derive(Serialize)]
struct TraceFile<'a> {
    #[serde(rename = "traceEvents")]
    trace_events: &'a [TraceEvent],
    #[serde(rename = "displayTimeUnit")]
    display_time_unit: &'static str,
}

pub fn trace_json(events: &[TraceEvent]) -> String {
    serde_json::to_string(&TraceFile {
        trace_events: events,
        display_time_unit: "ms",
    })
    .expect("trace serializes")
}

pub fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<()> {
    std::fs::write(path, trace_json(events))?;
    Ok(())
}

/// Per-token latency table, one row per simulated token.
pub fn latency_csv(per_token: &[TokenTiming]) -> String {
    let mut out =
        String::from("token,phase,context_len,latency_s,mp_s,mha_s,aux_s,sync_exposed_s\n");
    for t in per_token {
        let phase = match t.phase {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        };
        out.push_str(&format!(
            "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            t.index, phase, t.context_len, t.latency_s, t.mp_s, t.mha_s, t.aux_s, t.sync_exposed_s
        ));
    }
    out
}

pub fn write_latency_csv(path: &Path, per_token: &[TokenTiming]) -> Result<()> {
    std::fs::write(path, latency_csv(per_token))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tokens() -> Vec<TokenTiming> {
        vec![
            TokenTiming {
                index: 0,
                phase: Phase::Prefill,
                context_len: 1,
                latency_s: 1e-4,
                mp_s: 6e-5,
                mha_s: 2e-5,
                aux_s: 2e-5,
                sync_exposed_s: 0.0,
            },
            TokenTiming {
                index: 1,
                phase: Phase::Decode,
                context_len: 2,
                latency_s: 1.2e-4,
                mp_s: 7e-5,
                mha_s: 2.5e-5,
                aux_s: 2.5e-5,
                sync_exposed_s: 0.0,
            },
        ]
    }

    #[test]
    fn trace_json_has_the_expected_shape() {
        let ev = TraceEvent::complete("blk00.qkv".into(), "mp", 1.5e-6, 2.5e-6, 1, 0);
        let text = trace_json(&[ev]);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let e = &v["traceEvents"][0];
        assert_eq!(e["ph"], "X");
        assert_eq!(e["pid"], 1);
        assert_eq!(e["tid"], 0);
        assert!((e["ts"].as_f64().unwrap() - 1.5).abs() < 1e-12);
        assert!((e["dur"].as_f64().unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_plus_one_row_per_token() {
        let text = latency_csv(&sample_tokens());
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("token,phase"));
        assert!(lines[1].starts_with("0,prefill,1,"));
        assert!(lines[2].starts_with("1,decode,2,"));
    }
}
