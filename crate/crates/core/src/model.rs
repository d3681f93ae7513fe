//! Functional GPT-2-style decoder: float reference and sharded int8
//! deployment.
//!
//! [`FloatModel`] is the ground truth. It also drives offline
//! calibration: a short seeded token stream is pushed through it while
//! recording the max magnitude at every quantization site, and those
//! maxima become the static activation scales shipped in the
//! [`WeightBundle`].
//!
//! [`QuantModel`] is the deployed form. Linear layers run in int8
//! against the node-local weight shards; vector ops (layernorm,
//! residual adds, GELU, softmax) run replicated in f32 on every node;
//! partial results travel over the ring all-gather. Because every op is
//! either replicated bit-identically or an exact concatenation of
//! shards, logits are bitwise equal for any node count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::KvCache;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::quant::{dequantize, matvec_f32, matvec_i8, quantize};
use crate::ring::{all_gather_f32, all_gather_i8};
use crate::shard::ShardPlan;
use crate::tensor::QTensor;
use crate::weights::{FloatWeights, LayerScales, WeightBundle};

const LN_EPS: f32 = 1e-5;

/// Layernorm with affine parameters; biased variance, fixed
/// left-to-right reductions.
pub fn layernorm(x: &[f32], g: &[f32], b: &[f32]) -> Vec<f32> {
    debug_assert!(x.len() == g.len() && x.len() == b.len());
    let n = x.len() as f32;
    let mut mean = 0.0f32;
    for &v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0f32;
    for &v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(g.iter().zip(b))
        .map(|(&v, (&gi, &bi))| (v - mean) * inv * gi + bi)
        .collect()
}

/// GPT-2's tanh-approximated GELU.
#[inline]
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_vec(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| gelu(v)).collect()
}

/// Greedy sampling: highest logit wins, ties go to the lowest id.
pub fn greedy_next(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Seeded synthetic prompt (token ids), independent of the weight
/// stream.
pub fn synthetic_prompt(vocab_size: usize, len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    (0..len).map(|_| rng.gen_range(0..vocab_size)).collect()
}

/// Running per-layer maxima at each quantization site.
#[derive(Debug, Clone)]
pub struct ScaleRecorder {
    maxabs: Vec<[f32; 6]>,
}

impl ScaleRecorder {
    fn new(n_layers: usize) -> Self {
        ScaleRecorder {
            maxabs: vec![[0.0; 6]; n_layers],
        }
    }

    fn note(&mut self, layer: usize, site: usize, xs: &[f32]) {
        let m = xs.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        let slot = &mut self.maxabs[layer][site];
        *slot = slot.max(m);
    }

    fn into_scales(self) -> Vec<LayerScales> {
        self.maxabs
            .into_iter()
            .map(|m| {
                let s = |v: f32| {
                    if v == 0.0 {
                        1.0
                    } else {
                        v / crate::quant::QMAX
                    }
                };
                LayerScales::from_array([s(m[0]), s(m[1]), s(m[2]), s(m[3]), s(m[4]), s(m[5])])
            })
            .collect()
    }
}

// Site indices in the recorder, matching LayerScales::as_array order.
const SITE_QKV_IN: usize = 0;
const SITE_ATTN_IN: usize = 1;
const SITE_FC1_IN: usize = 2;
const SITE_ACT: usize = 3;
const SITE_K: usize = 4;
const SITE_V: usize = 5;

/// Full-precision reference decoder with incremental KV caches.
pub struct FloatModel<'a> {
    w: &'a FloatWeights,
    caches: Vec<KvCache>,
    pos: usize,
}

impl<'a> FloatModel<'a> {
    pub fn new(w: &'a FloatWeights) -> Self {
        let m = &w.model;
        FloatModel {
            w,
            caches: (0..m.n_layers)
                .map(|_| KvCache::new(m.n_heads, m.head_dim, m.max_seq_len))
                .collect(),
            pos: 0,
        }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    /// Advance one token and return the logits, optionally recording
    /// quantization-site maxima.
    pub fn forward_token(
        &mut self,
        token: usize,
        mut rec: Option<&mut ScaleRecorder>,
    ) -> Result<Vec<f32>> {
        let m = &self.w.model;
        if token >= m.vocab_size {
            return Err(Error::Shape(format!(
                "token id {token} out of vocab {}",
                m.vocab_size
            )));
        }
        if self.pos >= m.max_seq_len {
            return Err(Error::CacheFull {
                have: self.pos,
                cap: m.max_seq_len,
            });
        }
        let d = m.l_embed;
        let mut x: Vec<f32> = self
            .w
            .wte
            .row(token)
            .iter()
            .zip(self.w.wpe.row(self.pos))
            .map(|(&t, &p)| t + p)
            .collect();
        for (li, layer) in self.w.layers.iter().enumerate() {
            let x1 = layernorm(&x, &layer.ln1_g, &layer.ln1_b);
            if let Some(r) = rec.as_deref_mut() {
                r.note(li, SITE_QKV_IN, &x1);
            }
            let q = matvec_f32(d, d, &layer.wq.data, &x1);
            let k = matvec_f32(d, d, &layer.wk.data, &x1);
            let v = matvec_f32(d, d, &layer.wv.data, &x1);
            if let Some(r) = rec.as_deref_mut() {
                r.note(li, SITE_K, &k);
                r.note(li, SITE_V, &v);
            }
            self.caches[li].append(&k, &v)?;
            let ctx = self.caches[li].attend(&q)?;
            if let Some(r) = rec.as_deref_mut() {
                r.note(li, SITE_ATTN_IN, &ctx);
            }
            let attn_out = matvec_f32(d, d, &layer.wo.data, &ctx);
            for (xi, &a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }
            let x2 = layernorm(&x, &layer.ln2_g, &layer.ln2_b);
            if let Some(r) = rec.as_deref_mut() {
                r.note(li, SITE_FC1_IN, &x2);
            }
            let h = matvec_f32(m.ffn_dim, d, &layer.fc1.data, &x2);
            let act = gelu_vec(&h);
            if let Some(r) = rec.as_deref_mut() {
                r.note(li, SITE_ACT, &act);
            }
            let mlp_out = matvec_f32(d, m.ffn_dim, &layer.fc2.data, &act);
            for (xi, &a) in x.iter_mut().zip(&mlp_out) {
                *xi += a;
            }
        }
        self.pos += 1;
        let xf = layernorm(&x, &self.w.lnf_g, &self.w.lnf_b);
        Ok(matvec_f32(m.vocab_size, d, &self.w.wte.data, &xf))
    }
}

/// Derive static activation scales by streaming `n_tokens` seeded
/// random tokens through the float model.
pub fn calibrate_scales(w: &FloatWeights, seed: u64, n_tokens: usize) -> Result<Vec<LayerScales>> {
    let n = n_tokens.min(w.model.max_seq_len).max(1);
    let tokens = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        (0..n)
            .map(|_| rng.gen_range(0..w.model.vocab_size))
            .collect::<Vec<_>>()
    };
    let mut rec = ScaleRecorder::new(w.model.n_layers);
    let mut model = FloatModel::new(w);
    for t in tokens {
        model.forward_token(t, Some(&mut rec))?;
    }
    Ok(rec.into_scales())
}

/// Number of tokens used for offline scale calibration.
pub const CALIB_TOKENS: usize = 32;

/// Generate, calibrate, and quantize a full bundle from one seed.
pub fn build_bundle(model: &ModelConfig, seed: u64) -> Result<WeightBundle> {
    let floats = crate::weights::generate_floats(model, seed);
    let scales = calibrate_scales(&floats, seed, CALIB_TOKENS)?;
    Ok(WeightBundle::from_floats(floats, &scales))
}

/// One node's private slice of a block: row shards of every
/// projection.
struct LayerShard {
    wq: QTensor,
    wk: QTensor,
    wv: QTensor,
    wo: QTensor,
    fc1: QTensor,
    fc2: QTensor,
}

struct NodeState {
    layers: Vec<LayerShard>,
    caches: Vec<KvCache>,
}

/// The deployed int8 decoder, sharded over `n_nodes` ring nodes.
pub struct QuantModel {
    bundle: WeightBundle,
    nodes: Vec<NodeState>,
    pos: usize,
}

impl QuantModel {
    pub fn new(bundle: WeightBundle, n_nodes: usize) -> Result<Self> {
        let m = bundle.model().clone();
        let hw = crate::config::HardwareConfig {
            n_nodes,
            ..Default::default()
        };
        let errs = crate::config::validate_config(&m, &hw);
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let nodes = (0..n_nodes)
            .map(|id| {
                let plan = ShardPlan::new(&m, n_nodes, id);
                let layers = bundle
                    .qlayers
                    .iter()
                    .map(|q| LayerShard {
                        wq: q.wq.row_slice(plan.embed_rows.clone()),
                        wk: q.wk.row_slice(plan.embed_rows.clone()),
                        wv: q.wv.row_slice(plan.embed_rows.clone()),
                        wo: q.wo.row_slice(plan.embed_rows.clone()),
                        fc1: q.fc1.row_slice(plan.ffn_rows.clone()),
                        fc2: q.fc2.row_slice(plan.embed_rows.clone()),
                    })
                    .collect();
                let caches = (0..m.n_layers)
                    .map(|_| KvCache::new(plan.local_heads(), m.head_dim, m.max_seq_len))
                    .collect();
                NodeState { layers, caches }
            })
            .collect();
        Ok(QuantModel {
            bundle,
            nodes,
            pos: 0,
        })
    }

    pub fn model(&self) -> &ModelConfig {
        self.bundle.model()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    /// Advance one token through every node and return the logits.
    ///
    /// All nodes run the replicated vector ops on identical data;
    /// sharded matvecs produce per-node chunks that the ring gathers
    /// back into full vectors in origin order.
    pub fn forward_token(&mut self, token: usize) -> Result<Vec<f32>> {
        let m = self.bundle.model().clone();
        if token >= m.vocab_size {
            return Err(Error::Shape(format!(
                "token id {token} out of vocab {}",
                m.vocab_size
            )));
        }
        if self.pos >= m.max_seq_len {
            return Err(Error::CacheFull {
                have: self.pos,
                cap: m.max_seq_len,
            });
        }
        let floats = &self.bundle.floats;
        let mut x: Vec<f32> = floats
            .wte
            .row(token)
            .iter()
            .zip(floats.wpe.row(self.pos))
            .map(|(&t, &p)| t + p)
            .collect();
        for li in 0..m.n_layers {
            let fl = &floats.layers[li];
            let s = self.bundle.qlayers[li].scales;

            // Replicated: fused residual+layernorm, then requantize the
            // full vector on every node with the static scale.
            let x1 = layernorm(&x, &fl.ln1_g, &fl.ln1_b);
            let x1_q = quantize(&x1, s.qkv_in);

            // Sharded Q/K/V: outputs stay node-local (they feed only
            // this node's heads), so no gather here.
            let mut ctx_chunks = Vec::with_capacity(self.nodes.len());
            for node in &mut self.nodes {
                let shard = &node.layers[li];
                let q = matvec_i8(&shard.wq, &x1_q, s.qkv_in);
                let k = matvec_i8(&shard.wk, &x1_q, s.qkv_in);
                let v = matvec_i8(&shard.wv, &x1_q, s.qkv_in);
                // The cache holds int8 entries; store their dequantized
                // values so attention math stays f32.
                let k8 = dequantize(&quantize(&k, s.k_cache), s.k_cache);
                let v8 = dequantize(&quantize(&v, s.v_cache), s.v_cache);
                node.caches[li].append(&k8, &v8)?;
                let ctx = node.caches[li].attend(&q)?;
                ctx_chunks.push(quantize(&ctx, s.attn_in));
            }
            // Ring gather #1: int8 context chunks -> full vector.
            let ctx_q = all_gather_i8(&ctx_chunks)?;

            let o_chunks: Vec<Vec<f32>> = self
                .nodes
                .iter()
                .map(|n| matvec_i8(&n.layers[li].wo, &ctx_q, s.attn_in))
                .collect();
            // Ring gather #2: output-projection partials.
            let attn_out = all_gather_f32(&o_chunks)?;
            for (xi, &a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }

            let x2 = layernorm(&x, &fl.ln2_g, &fl.ln2_b);
            let x2_q = quantize(&x2, s.fc1_in);
            let h_chunks: Vec<Vec<f32>> = self
                .nodes
                .iter()
                .map(|n| matvec_i8(&n.layers[li].fc1, &x2_q, s.fc1_in))
                .collect();
            // Ring gather #3: feed-forward hidden partials, gathered
            // before the activation. GELU and requantization then run
            // replicated over the full hidden vector on every node —
            // this nonlinearity is part of the critical path that does
            // not shrink with more nodes.
            let h = all_gather_f32(&h_chunks)?;
            let act_q = quantize(&gelu_vec(&h), s.act);
            let y_chunks: Vec<Vec<f32>> = self
                .nodes
                .iter()
                .map(|n| matvec_i8(&n.layers[li].fc2, &act_q, s.act))
                .collect();
            // Ring gather #4: second feed-forward partials.
            let mlp_out = all_gather_f32(&y_chunks)?;
            for (xi, &a) in x.iter_mut().zip(&mlp_out) {
                *xi += a;
            }
        }
        self.pos += 1;
        let xf = layernorm(&x, &floats.lnf_g, &floats.lnf_b);
        // Logit projection is host-side float against the tied token
        // embedding.
        Ok(matvec_f32(m.vocab_size, m.l_embed, &floats.wte.data, &xf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layernorm_normalizes() {
        let x = [1.0f32, 2.0, 3.0, 4.0];
        let g = [1.0f32; 4];
        let b = [0.0f32; 4];
        let y = layernorm(&x, &g, &b);
        let mean: f32 = y.iter().sum::<f32>() / 4.0;
        let var: f32 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-4);
        assert!((gelu(-1.0) + 0.158_808).abs() < 1e-4);
        // Large inputs approach identity / zero.
        assert!((gelu(6.0) - 6.0).abs() < 1e-4);
        assert!(gelu(-6.0).abs() < 1e-4);
    }

    #[test]
    fn greedy_breaks_ties_toward_low_ids() {
        assert_eq!(greedy_next(&[0.1, 0.9, 0.9, 0.2]), 1);
        assert_eq!(greedy_next(&[3.0]), 0);
    }

    #[test]
    fn synthetic_prompt_is_deterministic_and_in_range() {
        let a = synthetic_prompt(97, 16, 5);
        let b = synthetic_prompt(97, 16, 5);
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t < 97));
        assert_ne!(a, synthetic_prompt(97, 16, 6));
    }

    #[test]
    fn calibration_scales_are_positive_and_deterministic() {
        let w = crate::weights::generate_floats(&ModelConfig::desk(), 3);
        let a = calibrate_scales(&w, 3, 8).unwrap();
        let b = calibrate_scales(&w, 3, 8).unwrap();
        assert_eq!(a, b);
        for s in &a {
            for v in s.as_array() {
                assert!(v > 0.0 && v.is_finite());
            }
        }
    }

    #[test]
    fn float_model_rejects_overflow_and_bad_tokens() {
        let mut m = ModelConfig::desk();
        m.max_seq_len = 2;
        let w = crate::weights::generate_floats(&m, 1);
        let mut fm = FloatModel::new(&w);
        assert!(fm.forward_token(1_000_000, None).is_err());
        fm.forward_token(1, None).unwrap();
        fm.forward_token(2, None).unwrap();
        let err = fm.forward_token(3, None).unwrap_err();
        assert!(matches!(err, Error::CacheFull { .. }));
    }

    /// The int8 model must track the float reference closely on a desk
    /// shape (coarse gate; the precise cosine bound lives in the
    /// verification suite).
    #[test]
    fn quant_model_tracks_float_model() {
        let cfg = ModelConfig::desk();
        let bundle = build_bundle(&cfg, 17).unwrap();
        let mut fm = FloatModel::new(&bundle.floats);
        let mut qm = QuantModel::new(bundle.clone(), 1).unwrap();
        let prompt = synthetic_prompt(cfg.vocab_size, 12, 17);
        let mut cos = 1.0f64;
        for &t in &prompt {
            let lf = fm.forward_token(t, None).unwrap();
            let lq = qm.forward_token(t).unwrap();
            let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for (a, b) in lf.iter().zip(&lq) {
                dot += *a as f64 * *b as f64;
                na += (*a as f64).powi(2);
                nb += (*b as f64).powi(2);
            }
            cos = dot / (na.sqrt() * nb.sqrt());
        }
        assert!(cos > 0.98, "final-token logits cosine {cos}");
    }

    /// Two-node logits must equal one-node logits bitwise (coarse
    /// desk-scale version of the scaling-equivalence gate).
    #[test]
    fn sharded_logits_are_bit_identical() {
        let cfg = ModelConfig::desk();
        let bundle = build_bundle(&cfg, 23).unwrap();
        let mut one = QuantModel::new(bundle.clone(), 1).unwrap();
        let mut two = QuantModel::new(bundle, 2).unwrap();
        for &t in &synthetic_prompt(cfg.vocab_size, 6, 23) {
            let a = one.forward_token(t).unwrap();
            let b = two.forward_token(t).unwrap();
            assert_eq!(a, b);
        }
    }
}
