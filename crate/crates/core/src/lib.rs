//! Cycle-approximate simulator for a multi-node hybrid spatial-temporal
//! LLM accelerator, paired with a functional W8A8 quantized transformer
//! core so that timing behaviour (latency breakdown, scaling, latency
//! hiding) and numeric behaviour (sharded int8 inference) can be
//! reproduced and property-tested on a workstation.
//!
//! The accelerator model: each node holds a fused matrix-processing (MP)
//! kernel fed by HBM channels, a fused multi-head attention (MHA) kernel
//! with a head-wise pipeline, a fused layernorm-and-residual kernel, and
//! auxiliary units, all driven by a stage scheduler that reuses the
//! macro kernels across the transformer block. Nodes are connected in a
//! simplex ring; linear layers are sharded along the output dimension and
//! the KV cache head-wise, with ring all-gathers reconstructing full
//! vectors and overlapping transmission with tile compute.

pub mod attention;
pub mod config;
pub mod engine;
pub mod error;
pub mod model;
pub mod quant;
pub mod report;
pub mod ring;
pub mod scheduler;
pub mod shard;
pub mod tensor;
pub mod timing;
pub mod verify;
pub mod weights;

pub use config::{HardwareConfig, ModelConfig, OptFlags, RunConfig, SimConfig};
pub use error::{Error, Result};
pub use shard::ShardPlan;
pub use tensor::{FTensor, QTensor};
