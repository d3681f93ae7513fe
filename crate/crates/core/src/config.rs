//! Model shape, hardware parameters, and run settings.
//!
//! Everything that calibrates the simulator lives here and is loadable
//! from a single TOML file with `model`, `hardware`, `run`, and `flags`
//! sections. Unknown keys are a hard error so a typo'd knob cannot
//! silently fall back to a default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// GPT-2-style decoder shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of transformer blocks.
    pub n_layers: usize,
    /// Embedding width.
    pub l_embed: usize,
    /// Attention heads; `l_embed = n_heads * head_dim` must hold.
    pub n_heads: usize,
    pub head_dim: usize,
    /// Feed-forward inner width.
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    /// The published GPT-2-medium (345M) shape.
    fn default() -> Self {
        ModelConfig {
            n_layers: 24,
            l_embed: 1024,
            n_heads: 16,
            head_dim: 64,
            ffn_dim: 4096,
            vocab_size: 50257,
            max_seq_len: 1024,
        }
    }
}

impl ModelConfig {
    /// A small shape used by the verification suite and desk-scale tests.
    pub fn desk() -> Self {
        ModelConfig {
            n_layers: 2,
            l_embed: 64,
            n_heads: 4,
            head_dim: 16,
            ffn_dim: 256,
            vocab_size: 97,
            max_seq_len: 64,
        }
    }
}

/// Per-node hardware parameters plus the timing-model knobs.
///
/// Defaults are the shipped calibration: 285 MHz clock, 8.49 GB/s per
/// HBM channel and per ring link, 16 MP slices of 32 MAC units each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareConfig {
    /// Accelerator nodes on the ring. Must divide `n_heads`, `l_embed`
    /// and `ffn_dim`.
    pub n_nodes: usize,
    /// MP slices per node; each slice owns one HBM channel.
    pub n_channel: usize,
    /// MAC units per MP slice. Also the datapack burst size in bytes.
    pub n_group: usize,
    pub freq_hz: f64,
    /// Peak bandwidth of one HBM channel, bytes/s.
    pub hbm_bw_per_channel: f64,
    /// Peak bandwidth of one ring link, bytes/s.
    pub net_bw: f64,
    /// Fixed overhead added to every ring round, seconds.
    pub net_hop_latency: f64,
    /// Payload bytes of one router datapack (n_group int8 lanes).
    pub datapack_bytes: usize,

    // Timing-model knobs. The `baseline_*` values model the hardware
    // before the critical-path optimization; the others the optimized
    // kernels.
    /// MP kernel pipeline fill, cycles.
    pub mp_fill_cycles: u64,
    /// MHA kernel stage fill, cycles.
    pub mha_fill_cycles: u64,
    /// MAC lanes in each of the two MHA MAC units.
    pub mha_parallelism: usize,
    /// Elements per cycle through the mask and softmax units.
    pub softmax_parallelism: usize,
    /// HBM channels reserved for the KV cache; K and V use half each.
    pub mha_kv_channels: usize,
    /// Lanes in the layernorm/residual datapath (optimized).
    pub ln_parallelism: usize,
    /// Lanes in the layernorm/residual datapath before optimization.
    pub baseline_ln_parallelism: usize,
    /// Activation-function (GELU) lanes.
    pub gelu_parallelism: usize,
    /// Activation-quantization lanes (optimized).
    pub quant_parallelism: usize,
    /// Activation-quantization lanes before optimization.
    pub baseline_quant_parallelism: usize,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            n_nodes: 1,
            n_channel: 16,
            n_group: 32,
            freq_hz: 285e6,
            hbm_bw_per_channel: 8.49e9,
            net_bw: 8.49e9,
            net_hop_latency: 0.0,
            datapack_bytes: 32,
            mp_fill_cycles: 16,
            mha_fill_cycles: 8,
            mha_parallelism: 160,
            softmax_parallelism: 32,
            mha_kv_channels: 16,
            ln_parallelism: 32,
            baseline_ln_parallelism: 3,
            gelu_parallelism: 1,
            quant_parallelism: 8,
            baseline_quant_parallelism: 4,
        }
    }
}

impl HardwareConfig {
    pub fn cycle_time(&self) -> f64 {
        1.0 / self.freq_hz
    }

    pub fn cycles_to_secs(&self, cycles: u64) -> f64 {
        cycles as f64 / self.freq_hz
    }
}

/// Simulation-level optimization switches. All on by default; switching
/// them off reproduces the unoptimized baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptFlags {
    /// Fuse residual+layernorm and run critical-path ops at full
    /// parallelism.
    pub fused_ln_res: bool,
    /// Overlap softmax of head i-1 with the MACs of head i.
    pub headwise_pipeline: bool,
    /// Hide per-tile ring synchronization under the next tile's compute.
    pub sync_overlap: bool,
}

impl Default for OptFlags {
    fn default() -> Self {
        OptFlags {
            fused_ln_res: true,
            headwise_pipeline: true,
            sync_overlap: true,
        }
    }
}

impl OptFlags {
    pub fn all_off() -> Self {
        OptFlags {
            fused_ln_res: false,
            headwise_pipeline: false,
            sync_overlap: false,
        }
    }
}

/// Sequence lengths, seed, and output knobs for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Prompt tokens processed in the prefill phase.
    pub prompt_len: usize,
    /// Tokens generated in the decode phase.
    pub gen_len: usize,
    /// Seed for weight generation and the synthetic prompt.
    pub seed: u64,
    /// Run the functional int8 inference core alongside the timing
    /// model. Timing is data-independent, so latency studies on large
    /// shapes can switch this off and skip weight materialization.
    pub functional: bool,
    /// Optional path to a pre-generated weight file. When absent,
    /// weights are generated in memory from `seed`.
    pub weights: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            prompt_len: 64,
            gen_len: 512,
            seed: 0xC0FFEE,
            functional: true,
            weights: None,
        }
    }
}

/// The full configuration tree, one TOML document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub model: ModelConfig,
    pub hardware: HardwareConfig,
    pub run: RunConfig,
    pub flags: OptFlags,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validate and return `self`, for call chaining.
    pub fn validated(self) -> Result<Self> {
        let mut errs = validate_config(&self.model, &self.hardware);
        errs.extend(validate_run(&self.model, &self.run));
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Check the run section against the model's capacity limits.
pub fn validate_run(model: &ModelConfig, run: &RunConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if run.prompt_len == 0 {
        errs.push("run.prompt_len must be >= 1".into());
    }
    if run.prompt_len + run.gen_len > model.max_seq_len {
        errs.push(format!(
            "run: prompt_len + gen_len = {} exceeds model.max_seq_len = {}",
            run.prompt_len + run.gen_len,
            model.max_seq_len
        ));
    }
    errs
}

/// Check every invariant of the model/hardware pair and return all
/// violations found.
pub fn validate_config(model: &ModelConfig, hw: &HardwareConfig) -> Vec<String> {
    let mut errs = Vec::new();
    for (name, v) in [
        ("n_layers", model.n_layers),
        ("l_embed", model.l_embed),
        ("n_heads", model.n_heads),
        ("head_dim", model.head_dim),
        ("ffn_dim", model.ffn_dim),
        ("vocab_size", model.vocab_size),
        ("max_seq_len", model.max_seq_len),
    ] {
        if v == 0 {
            errs.push(format!("model.{name} must be >= 1"));
        }
    }
    if model.n_heads * model.head_dim != model.l_embed {
        errs.push(format!(
            "model: n_heads * head_dim = {} does not equal l_embed = {}",
            model.n_heads * model.head_dim,
            model.l_embed
        ));
    }

    for (name, v) in [
        ("n_nodes", hw.n_nodes),
        ("n_channel", hw.n_channel),
        ("n_group", hw.n_group),
        ("datapack_bytes", hw.datapack_bytes),
        ("mha_parallelism", hw.mha_parallelism),
        ("softmax_parallelism", hw.softmax_parallelism),
        ("mha_kv_channels", hw.mha_kv_channels),
        ("ln_parallelism", hw.ln_parallelism),
        ("baseline_ln_parallelism", hw.baseline_ln_parallelism),
        ("gelu_parallelism", hw.gelu_parallelism),
        ("quant_parallelism", hw.quant_parallelism),
        ("baseline_quant_parallelism", hw.baseline_quant_parallelism),
    ] {
        if v == 0 {
            errs.push(format!("hardware.{name} must be >= 1"));
        }
    }
    if !hw.n_nodes.is_power_of_two() {
        errs.push(format!(
            "hardware.n_nodes = {} must be a power of two",
            hw.n_nodes
        ));
    }
    if hw.n_nodes > 0 {
        for (name, dim) in [
            ("n_heads", model.n_heads),
            ("l_embed", model.l_embed),
            ("ffn_dim", model.ffn_dim),
        ] {
            if dim % hw.n_nodes != 0 {
                errs.push(format!(
                    "hardware.n_nodes = {} does not divide model.{name} = {dim}",
                    hw.n_nodes
                ));
            }
        }
    }
    if hw.n_group != 0 && hw.datapack_bytes != hw.n_group {
        errs.push(format!(
            "hardware.datapack_bytes = {} must equal n_group = {} (int8 burst)",
            hw.datapack_bytes, hw.n_group
        ));
    }
    for (name, v) in [
        ("freq_hz", hw.freq_hz),
        ("hbm_bw_per_channel", hw.hbm_bw_per_channel),
        ("net_bw", hw.net_bw),
    ] {
        if !v.is_finite() || v <= 0.0 {
            errs.push(format!("hardware.{name} must be finite and > 0"));
        }
    }
    if hw.net_hop_latency < 0.0 || !hw.net_hop_latency.is_finite() {
        errs.push("hardware.net_hop_latency must be finite and >= 0".into());
    }
    if !hw.mha_kv_channels.is_multiple_of(2) {
        errs.push(format!(
            "hardware.mha_kv_channels = {} must be even (K and V use half each)",
            hw.mha_kv_channels
        ));
    }
    errs
}
