//! Unidirectional ring interconnect: functional all-gather and link
//! timing.
//!
//! Each node forwards to its clockwise neighbor only (simplex links).
//! An all-gather of per-node chunks takes exactly `n_nodes` rounds:
//! every round a node sends the chunk it most recently received (its
//! own chunk in round 0) and writes the incoming chunk into its output
//! buffer at the offset given by the chunk's *origin* node id. On the
//! final round a node's own chunk arrives back and is checked against
//! what it sent — a cheap end-to-end link integrity test instead of a
//! wasted round.
//!
//! Payloads travel as fixed-size datapacks of `n_group` bytes, so wire
//! time is quantized to datapack multiples.

use crate::config::HardwareConfig;
use crate::error::{Error, Result};

/// One hop's payload with its provenance; `origin` decides the write
/// offset at every receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datapack {
    pub origin: usize,
    pub payload: Vec<u8>,
}

/// All-gather equal-length byte chunks over the ring, returning every
/// node's assembled buffer (all `n_nodes * chunk_len` bytes, origin
/// order).
pub fn ring_all_gather(chunks: &[Vec<u8>]) -> Result<Vec<Vec<u8>>> {
    let n = chunks.len();
    if n == 0 {
        return Err(Error::Ring("all-gather over zero nodes".into()));
    }
    let len = chunks[0].len();
    if chunks.iter().any(|c| c.len() != len) {
        return Err(Error::Ring(format!(
            "chunk lengths differ: {:?}",
            chunks.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    let mut out = vec![vec![0u8; n * len]; n];
    for (i, c) in chunks.iter().enumerate() {
        out[i][i * len..(i + 1) * len].copy_from_slice(c);
    }
    // holding[i]: what node i sends in the next round.
    let mut holding: Vec<Datapack> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| Datapack {
            origin: i,
            payload: c.clone(),
        })
        .collect();
    for round in 0..n {
        // All sends happen simultaneously; node i's inbox is whatever
        // its counterclockwise neighbor held.
        let incoming: Vec<Datapack> = (0..n).map(|i| holding[(i + n - 1) % n].clone()).collect();
        for (i, pack) in incoming.iter().enumerate() {
            if pack.origin == i {
                // Final round: the ring handed back our own chunk.
                if pack.payload != chunks[i] {
                    return Err(Error::Ring(format!(
                        "node {i}: own chunk corrupted after {} rounds",
                        round + 1
                    )));
                }
            } else {
                out[i][pack.origin * len..(pack.origin + 1) * len].copy_from_slice(&pack.payload);
            }
        }
        holding = incoming;
    }
    Ok(out)
}

/// All-gather f32 chunks and return the assembled vector, after
/// checking that every node assembled identical bytes.
pub fn all_gather_f32(chunks: &[Vec<f32>]) -> Result<Vec<f32>> {
    let bytes: Vec<Vec<u8>> = chunks
        .iter()
        .map(|c| c.iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect();
    let views = verify_uniform(ring_all_gather(&bytes)?)?;
    Ok(views
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// All-gather int8 chunks and return the assembled vector, after
/// checking that every node assembled identical bytes.
pub fn all_gather_i8(chunks: &[Vec<i8>]) -> Result<Vec<i8>> {
    let bytes: Vec<Vec<u8>> = chunks
        .iter()
        .map(|c| c.iter().map(|&v| v as u8).collect())
        .collect();
    let view = verify_uniform(ring_all_gather(&bytes)?)?;
    Ok(view.into_iter().map(|b| b as i8).collect())
}

/// Every node must have assembled the same buffer; return one copy.
fn verify_uniform(mut buffers: Vec<Vec<u8>>) -> Result<Vec<u8>> {
    let first = buffers.swap_remove(0);
    for (i, b) in buffers.iter().enumerate() {
        if *b != first {
            return Err(Error::Ring(format!(
                "node {} assembled a different buffer than node 0",
                i + 1
            )));
        }
    }
    Ok(first)
}

/// Wire time for one node to push one chunk to its neighbor: payload
/// rounded up to whole datapacks, at link bandwidth, plus the per-hop
/// constant.
pub fn round_time(chunk_bytes: usize, hw: &HardwareConfig) -> f64 {
    let packs = chunk_bytes.div_ceil(hw.datapack_bytes);
    (packs * hw.datapack_bytes) as f64 / hw.net_bw + hw.net_hop_latency
}

/// Wall-clock time of a full all-gather: `n_nodes` rounds, all links
/// busy in parallel each round.
pub fn gather_time(chunk_bytes: usize, n_nodes: usize, hw: &HardwareConfig) -> f64 {
    n_nodes as f64 * round_time(chunk_bytes, hw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gather_equals_concatenation_in_origin_order() {
        let chunks: Vec<Vec<u8>> = vec![vec![1, 2], vec![3, 4], vec![5, 6], vec![7, 8]];
        let got = ring_all_gather(&chunks).unwrap();
        for buf in got {
            assert_eq!(buf, vec![1, 2, 3, 4, 5, 6, 7, 8]);
        }
    }

    #[test]
    fn single_node_round_trips_its_own_chunk() {
        let chunks = vec![vec![9u8, 8, 7]];
        let got = ring_all_gather(&chunks).unwrap();
        assert_eq!(got, vec![vec![9, 8, 7]]);
    }

    #[test]
    fn random_chunks_gather_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [1usize, 2, 4, 8] {
            for len in [1usize, 32, 257] {
                let chunks: Vec<Vec<u8>> = (0..n)
                    .map(|_| (0..len).map(|_| rng.gen()).collect())
                    .collect();
                let want: Vec<u8> = chunks.concat();
                for buf in ring_all_gather(&chunks).unwrap() {
                    assert_eq!(buf, want);
                }
            }
        }
    }

    #[test]
    fn unequal_chunks_are_rejected() {
        let err = ring_all_gather(&[vec![1], vec![2, 3]]).unwrap_err();
        assert!(matches!(err, Error::Ring(_)));
    }

    #[test]
    fn typed_gathers_round_trip() {
        let f = all_gather_f32(&[vec![1.5f32, -2.25], vec![0.0, 3.75]]).unwrap();
        assert_eq!(f, vec![1.5, -2.25, 0.0, 3.75]);
        let q = all_gather_i8(&[vec![-128i8, 127], vec![0, -1]]).unwrap();
        assert_eq!(q, vec![-128, 127, 0, -1]);
    }

    /// 33 bytes needs two 32-byte datapacks: wire time covers 64 bytes.
    #[test]
    fn round_time_quantizes_to_datapacks() {
        let hw = HardwareConfig::default();
        let t32 = round_time(32, &hw);
        let t33 = round_time(33, &hw);
        assert!((t32 - 32.0 / 8.49e9).abs() < 1e-18);
        assert!((t33 - 64.0 / 8.49e9).abs() < 1e-18);
    }

    /// Total gather time is rounds x per-round wire time, and for a
    /// fixed full-vector size it does not grow with node count.
    #[test]
    fn gather_time_scales_with_rounds() {
        let hw = HardwareConfig::default();
        assert!((gather_time(512, 4, &hw) - 4.0 * round_time(512, &hw)).abs() < 1e-18);
        let full = 4096usize;
        let t2 = gather_time(full / 2, 2, &hw);
        let t4 = gather_time(full / 4, 4, &hw);
        assert!((t2 - t4).abs() < 1e-15);
    }
}
