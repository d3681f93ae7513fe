//! Weight generation, quantization bundles, and the on-disk format.
//!
//! Weights are synthetic: drawn from a seeded ChaCha stream so every
//! run (and every node) can reproduce them exactly without shipping
//! checkpoints. A [`WeightBundle`] pairs the float master weights with
//! their int8 form and the static activation scales calibrated for
//! them; the quantized model never computes a scale at run time.
//!
//! The file format is a flat little-endian dump with a magic, the
//! model shape, and a trailing SHA-256 over everything before it.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::quant::{maxabs_scale, quantize};
use crate::tensor::{FTensor, QTensor};

const MAGIC: &[u8; 6] = b"MDKW1\n";

/// Static activation scales for one transformer block, calibrated
/// offline on the float model. `float = int8 * scale` at each site.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerScales {
    /// Input to the fused Q/K/V projection (post first layernorm).
    pub qkv_in: f32,
    /// Attention context vector, input to the output projection.
    pub attn_in: f32,
    /// Input to the first feed-forward matrix (post second layernorm).
    pub fc1_in: f32,
    /// Post-GELU activation, input to the second feed-forward matrix.
    pub act: f32,
    /// Key rows entering the KV cache.
    pub k_cache: f32,
    /// Value rows entering the KV cache.
    pub v_cache: f32,
}

impl LayerScales {
    pub fn as_array(&self) -> [f32; 6] {
        [
            self.qkv_in,
            self.attn_in,
            self.fc1_in,
            self.act,
            self.k_cache,
            self.v_cache,
        ]
    }

    pub fn from_array(a: [f32; 6]) -> Self {
        LayerScales {
            qkv_in: a[0],
            attn_in: a[1],
            fc1_in: a[2],
            act: a[3],
            k_cache: a[4],
            v_cache: a[5],
        }
    }
}

/// Float master weights of one transformer block. Projections are
/// `[out_dim, in_dim]` row-major, so output-dim sharding is a row
/// slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    pub wq: FTensor,
    pub wk: FTensor,
    pub wv: FTensor,
    pub wo: FTensor,
    pub fc1: FTensor,
    pub fc2: FTensor,
    pub ln1_g: Vec<f32>,
    pub ln1_b: Vec<f32>,
    pub ln2_g: Vec<f32>,
    pub ln2_b: Vec<f32>,
}

/// Full float parameter set: token/position embeddings, blocks, final
/// layernorm. Logits reuse the token embedding (weight tying).
#[derive(Debug, Clone, PartialEq)]
pub struct FloatWeights {
    pub model: ModelConfig,
    pub wte: FTensor,
    pub wpe: FTensor,
    pub lnf_g: Vec<f32>,
    pub lnf_b: Vec<f32>,
    pub layers: Vec<FloatLayer>,
}

/// Int8 weights of one block plus the activation scales its inputs
/// were calibrated with.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub wq: QTensor,
    pub wk: QTensor,
    pub wv: QTensor,
    pub wo: QTensor,
    pub fc1: QTensor,
    pub fc2: QTensor,
    pub scales: LayerScales,
}

/// Float masters, their int8 quantization, and the calibrated scales —
/// everything a run needs, for any node count.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub floats: FloatWeights,
    pub qlayers: Vec<QuantLayer>,
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, amp: f32) -> FTensor {
    FTensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-amp..amp)).collect(),
    )
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, center: f32, amp: f32) -> Vec<f32> {
    (0..n).map(|_| center + rng.gen_range(-amp..amp)).collect()
}

/// Draw a full float parameter set from one seed. The draw order is
/// part of the format: changing it changes every model.
pub fn generate_floats(model: &ModelConfig, seed: u64) -> FloatWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.l_embed;
    let wte = rand_tensor(&mut rng, model.vocab_size, d, 0.08);
    let wpe = rand_tensor(&mut rng, model.max_seq_len, d, 0.04);
    let layers = (0..model.n_layers)
        .map(|_| FloatLayer {
            wq: rand_tensor(&mut rng, d, d, 0.06),
            wk: rand_tensor(&mut rng, d, d, 0.06),
            wv: rand_tensor(&mut rng, d, d, 0.06),
            wo: rand_tensor(&mut rng, d, d, 0.06),
            fc1: rand_tensor(&mut rng, model.ffn_dim, d, 0.06),
            fc2: rand_tensor(&mut rng, d, model.ffn_dim, 0.04),
            ln1_g: rand_vec(&mut rng, d, 1.0, 0.05),
            ln1_b: rand_vec(&mut rng, d, 0.0, 0.02),
            ln2_g: rand_vec(&mut rng, d, 1.0, 0.05),
            ln2_b: rand_vec(&mut rng, d, 0.0, 0.02),
        })
        .collect();
    let lnf_g = rand_vec(&mut rng, d, 1.0, 0.05);
    let lnf_b = rand_vec(&mut rng, d, 0.0, 0.02);
    FloatWeights {
        model: model.clone(),
        wte,
        wpe,
        lnf_g,
        lnf_b,
        layers,
    }
}

fn quantize_tensor(t: &FTensor) -> QTensor {
    let scale = maxabs_scale(&t.data);
    QTensor::from_vec(t.rows, t.cols, scale, quantize(&t.data, scale))
}

impl WeightBundle {
    /// Quantize float masters under the given per-layer activation
    /// scales. Weight scales come from each tensor's own max-abs.
    pub fn from_floats(floats: FloatWeights, scales: &[LayerScales]) -> Self {
        assert_eq!(floats.layers.len(), scales.len());
        let qlayers = floats
            .layers
            .iter()
            .zip(scales)
            .map(|(l, &s)| QuantLayer {
                wq: quantize_tensor(&l.wq),
                wk: quantize_tensor(&l.wk),
                wv: quantize_tensor(&l.wv),
                wo: quantize_tensor(&l.wo),
                fc1: quantize_tensor(&l.fc1),
                fc2: quantize_tensor(&l.fc2),
                scales: s,
            })
            .collect();
        WeightBundle { floats, qlayers }
    }

    pub fn model(&self) -> &ModelConfig {
        &self.floats.model
    }

    /// Serialize to the flat binary format with a trailing SHA-256.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        payload.extend_from_slice(MAGIC);
        let cfg = toml::to_string(&self.floats.model).expect("model config serializes");
        payload.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        payload.extend_from_slice(cfg.as_bytes());
        let mut push = |xs: &[f32]| {
            payload.extend_from_slice(&(xs.len() as u64).to_le_bytes());
            for v in xs {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        push(&self.floats.wte.data);
        push(&self.floats.wpe.data);
        push(&self.floats.lnf_g);
        push(&self.floats.lnf_b);
        for (l, q) in self.floats.layers.iter().zip(&self.qlayers) {
            for t in [&l.wq, &l.wk, &l.wv, &l.wo, &l.fc1, &l.fc2] {
                push(&t.data);
            }
            for v in [&l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b] {
                push(v);
            }
            push(&q.scales.as_array());
        }
        let digest = Sha256::digest(&payload);
        let mut file = std::fs::File::create(path)?;
        file.write_all(&payload)?;
        file.write_all(&digest)?;
        Ok(())
    }

    /// Load, verify the checksum, and requantize.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::WeightFormat("file too short".into()));
        }
        let (payload, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(Error::WeightFormat("checksum mismatch".into()));
        }
        let mut r = Reader {
            buf: payload,
            pos: 0,
        };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::WeightFormat("bad magic".into()));
        }
        let cfg_len = r.u64()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| Error::WeightFormat("config is not utf-8".into()))?;
        let model: ModelConfig = toml::from_str(cfg_text)
            .map_err(|e| Error::WeightFormat(format!("config parse: {e}")))?;
        let d = model.l_embed;
        let wte = FTensor::from_vec(model.vocab_size, d, r.f32s(model.vocab_size * d)?);
        let wpe = FTensor::from_vec(model.max_seq_len, d, r.f32s(model.max_seq_len * d)?);
        let lnf_g = r.f32s(d)?;
        let lnf_b = r.f32s(d)?;
        let mut layers = Vec::with_capacity(model.n_layers);
        let mut scales = Vec::with_capacity(model.n_layers);
        for _ in 0..model.n_layers {
            let square =
                |r: &mut Reader| -> Result<FTensor> { Ok(FTensor::from_vec(d, d, r.f32s(d * d)?)) };
            let wq = square(&mut r)?;
            let wk = square(&mut r)?;
            let wv = square(&mut r)?;
            let wo = square(&mut r)?;
            let fc1 = FTensor::from_vec(model.ffn_dim, d, r.f32s(model.ffn_dim * d)?);
            let fc2 = FTensor::from_vec(d, model.ffn_dim, r.f32s(model.ffn_dim * d)?);
            let ln1_g = r.f32s(d)?;
            let ln1_b = r.f32s(d)?;
            let ln2_g = r.f32s(d)?;
            let ln2_b = r.f32s(d)?;
            let s = r.f32s(6)?;
            scales.push(LayerScales::from_array([
                s[0], s[1], s[2], s[3], s[4], s[5],
            ]));
            layers.push(FloatLayer {
                wq,
                wk,
                wv,
                wo,
                fc1,
                fc2,
                ln1_g,
                ln1_b,
                ln2_g,
                ln2_b,
            });
        }
        if r.pos != payload.len() {
            return Err(Error::WeightFormat(format!(
                "{} trailing bytes",
                payload.len() - r.pos
            )));
        }
        let floats = FloatWeights {
            model,
            wte,
            wpe,
            lnf_g,
            lnf_b,
            layers,
        };
        Ok(WeightBundle::from_floats(floats, &scales))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::WeightFormat("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Read a length-prefixed f32 array, insisting on the expected
    /// element count.
    fn f32s(&mut self, want: usize) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        if n != want {
            return Err(Error::WeightFormat(format!(
                "array length {n}, expected {want}"
            )));
        }
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_bundle() -> WeightBundle {
        let floats = generate_floats(&ModelConfig::desk(), 42);
        let scales = vec![
            LayerScales {
                qkv_in: 0.02,
                attn_in: 0.01,
                fc1_in: 0.02,
                act: 0.015,
                k_cache: 0.03,
                v_cache: 0.025,
            };
            floats.layers.len()
        ];
        WeightBundle::from_floats(floats, &scales)
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let model = ModelConfig::desk();
        let a = generate_floats(&model, 7);
        let b = generate_floats(&model, 7);
        assert_eq!(a, b);
        let c = generate_floats(&model, 8);
        assert_ne!(a.wte.data, c.wte.data);
    }

    #[test]
    fn weight_quant_scales_cover_maxabs() {
        let bundle = desk_bundle();
        for (l, q) in bundle.floats.layers.iter().zip(&bundle.qlayers) {
            let maxabs = l.wq.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
            assert!((q.wq.scale - maxabs / 127.0).abs() < 1e-9);
            // The extreme weight quantizes onto a rail.
            assert!(q.wq.data.iter().any(|&v| v == 127 || v == -127));
        }
    }

    #[test]
    fn save_load_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let bundle = desk_bundle();
        bundle.save(&path).unwrap();
        let loaded = WeightBundle::load(&path).unwrap();
        assert_eq!(bundle, loaded);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        desk_bundle().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = WeightBundle::load(&path).unwrap_err();
        assert!(matches!(err, Error::WeightFormat(_)), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        desk_bundle().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 3]).unwrap();
        assert!(WeightBundle::load(&path).is_err());
    }
}
