//! Runtime self-checks: brute-force cross-validation of the int8
//! datapath, ring exactness, cross-node equivalence, and quantization
//! accuracy. The CLI's `verify` subcommand runs all of them; failures
//! surface as [`Error::Verify`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{build_bundle, greedy_next, synthetic_prompt, FloatModel, QuantModel};
use crate::quant::matvec_i8;
use crate::ring::ring_all_gather;
use crate::tensor::QTensor;

/// Cosine similarity with f64 accumulation.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += (x as f64) * (x as f64);
        nb += (y as f64) * (y as f64);
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Cross-check the production int8 matvec against an independent
/// i64-accumulated evaluation on random shapes. Exact (bitwise) match
/// required.
pub fn verify_matvec(trials: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let rows = rng.gen_range(1..=96);
        let cols = rng.gen_range(1..=96);
        let w_scale = rng.gen_range(1e-4..1e-1);
        let x_scale = rng.gen_range(1e-4..1e-1);
        let w_data: Vec<i8> = (0..rows * cols)
            .map(|_| rng.gen_range(-127..=127))
            .collect();
        let x: Vec<i8> = (0..cols).map(|_| rng.gen_range(-127..=127)).collect();
        let w = QTensor::from_vec(rows, cols, w_scale, w_data);
        let got = matvec_i8(&w, &x, x_scale);
        for (r, g) in got.iter().enumerate() {
            let acc: i64 = w
                .row(r)
                .iter()
                .zip(&x)
                .map(|(&wv, &xv)| wv as i64 * xv as i64)
                .sum();
            let want = acc as f32 * (w_scale * x_scale);
            if g.to_bits() != want.to_bits() {
                return Err(Error::Verify(format!(
                    "matvec trial {trial}: row {r} got {g} want {want}"
                )));
            }
        }
    }
    Ok(format!(
        "int8 matvec matches brute force bitwise on {trials} random shapes"
    ))
}

/// Ring all-gather must reproduce the origin-order concatenation
/// exactly for every node, across node counts and chunk sizes.
pub fn verify_ring(trials: usize, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [32usize, 1024, 65536];
    let node_counts = [1usize, 2, 4, 8];
    for trial in 0..trials {
        for &n in &node_counts {
            for &sz in &sizes {
                let chunks: Vec<Vec<u8>> = (0..n)
                    .map(|_| (0..sz).map(|_| rng.gen()).collect())
                    .collect();
                let want: Vec<u8> = chunks.concat();
                let got = ring_all_gather(&chunks)?;
                for (node, buf) in got.iter().enumerate() {
                    if *buf != want {
                        return Err(Error::Verify(format!(
                            "ring trial {trial}: node {node}/{n} chunk {sz}B assembled wrong bytes"
                        )));
                    }
                }
            }
        }
    }
    Ok(format!(
        "ring all-gather exact for {} node counts x {} chunk sizes x {trials} trials",
        node_counts.len(),
        sizes.len()
    ))
}

/// Sharded deployments must be bit-identical to the single node: same
/// logits, same greedy tokens, at 2 and 4 nodes.
pub fn verify_sharding(seed: u64) -> Result<String> {
    let cfg = ModelConfig::desk();
    let bundle = build_bundle(&cfg, seed)?;
    let mut solo = QuantModel::new(bundle.clone(), 1)?;
    let mut multi: Vec<QuantModel> = [2usize, 4]
        .iter()
        .map(|&n| QuantModel::new(bundle.clone(), n))
        .collect::<Result<_>>()?;
    let prompt = synthetic_prompt(cfg.vocab_size, 6, seed);
    let mut token = prompt[0];
    for step in 0..12 {
        let reference = solo.forward_token(token)?;
        for qm in multi.iter_mut() {
            let got = qm.forward_token(token)?;
            if got != reference {
                let first = got
                    .iter()
                    .zip(&reference)
                    .position(|(a, b)| a.to_bits() != b.to_bits())
                    .unwrap_or(0);
                return Err(Error::Verify(format!(
                    "{}-node logits diverge from 1-node at step {step}, logit {first}",
                    qm.n_nodes()
                )));
            }
        }
        token = if step + 1 < prompt.len() {
            prompt[step + 1]
        } else {
            greedy_next(&reference)
        };
    }
    Ok("2- and 4-node logits bit-identical to 1-node over 12 steps".into())
}

/// End-to-end quantization quality: int8 logits must stay within a
/// 0.99 cosine of the float reference across many independently
/// generated models.
pub fn verify_accuracy(n_seeds: usize) -> Result<String> {
    let cfg = ModelConfig::desk();
    let mut worst = 1.0f64;
    for seed in 0..n_seeds as u64 {
        let bundle = build_bundle(&cfg, seed)?;
        let mut fm = FloatModel::new(&bundle.floats);
        let mut qm = QuantModel::new(bundle.clone(), 1)?;
        let prompt = synthetic_prompt(cfg.vocab_size, 8, seed);
        let mut cos = 1.0f64;
        for &t in &prompt {
            let lf = fm.forward_token(t, None)?;
            let lq = qm.forward_token(t)?;
            cos = cosine(&lf, &lq);
        }
        worst = worst.min(cos);
        if cos < 0.99 {
            return Err(Error::Verify(format!(
                "seed {seed}: quantized logits cosine {cos:.5} < 0.99"
            )));
        }
    }
    Ok(format!(
        "quantized vs float logits cosine >= 0.99 over {n_seeds} seeds (worst {worst:.5})"
    ))
}

/// Run every check; returns one summary line per check.
pub fn verify_all(
    matvec_trials: usize,
    ring_trials: usize,
    accuracy_seeds: usize,
) -> Result<Vec<String>> {
    Ok(vec![
        verify_matvec(matvec_trials, 0xA11CE)?,
        verify_ring(ring_trials, 0xB0B)?,
        verify_sharding(0x5EED)?,
        verify_accuracy(accuracy_seeds)?,
    ])
}
