//! Tensor-parallel partitioning across accelerator nodes.
//!
//! Linear layers are sharded along their *output* dimension: every node
//! holds full input vectors and a contiguous row block of each weight
//! matrix, so a matvec needs no communication and the concatenation of
//! all nodes' partial outputs (in node-id order) is the full result.
//! The attention KV cache is partitioned head-wise; head blocks are
//! contiguous, so the head shard of node `i` owns exactly the embedding
//! rows `i * l_embed/N .. (i+1) * l_embed/N` of the Q/K/V projections.

use std::ops::Range;

use crate::config::ModelConfig;

/// What one node owns: its head block plus the row blocks of every
/// linear layer in a transformer block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    pub n_nodes: usize,
    pub node_id: usize,
    /// Attention heads resident on this node.
    pub heads: Range<usize>,
    /// Rows of each of the Q, K and V projections (also: rows of the
    /// output projection and of the second feed-forward matrix, whose
    /// output dimension is `l_embed` too).
    pub embed_rows: Range<usize>,
    /// Rows of the first feed-forward matrix (output dim `ffn_dim`).
    pub ffn_rows: Range<usize>,
}

/// Evenly split `0..dim` into `n_nodes` contiguous chunks and return
/// chunk `node_id`. Requires `n_nodes` to divide `dim`.
pub fn chunk_of(dim: usize, n_nodes: usize, node_id: usize) -> Range<usize> {
    debug_assert!(node_id < n_nodes);
    debug_assert_eq!(dim % n_nodes, 0);
    let step = dim / n_nodes;
    node_id * step..(node_id + 1) * step
}

impl ShardPlan {
    /// The shard owned by `node_id` in an `n_nodes` ring.
    ///
    /// Callers must have validated that `n_nodes` divides `n_heads`,
    /// `l_embed` and `ffn_dim` (see [`crate::config::validate_config`]).
    pub fn new(model: &ModelConfig, n_nodes: usize, node_id: usize) -> Self {
        let heads = chunk_of(model.n_heads, n_nodes, node_id);
        let embed_rows = chunk_of(model.l_embed, n_nodes, node_id);
        debug_assert_eq!(heads.start * model.head_dim, embed_rows.start);
        ShardPlan {
            n_nodes,
            node_id,
            heads,
            embed_rows,
            ffn_rows: chunk_of(model.ffn_dim, n_nodes, node_id),
        }
    }

    pub fn local_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn local_embed(&self) -> usize {
        self.embed_rows.len()
    }

    pub fn local_ffn(&self) -> usize {
        self.ffn_rows.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Each node's ranges are equal-sized and, concatenated in node-id
    /// order, tile the full dimension exactly once.
    #[test]
    fn shards_tile_every_dimension() {
        let model = ModelConfig::default();
        for n_nodes in [1usize, 2, 4, 8] {
            let plans: Vec<_> = (0..n_nodes)
                .map(|id| ShardPlan::new(&model, n_nodes, id))
                .collect();
            let mut next_head = 0;
            let mut next_row = 0;
            let mut next_ffn = 0;
            for (id, p) in plans.iter().enumerate() {
                assert_eq!(p.node_id, id);
                assert_eq!(p.heads.start, next_head);
                assert_eq!(p.embed_rows.start, next_row);
                assert_eq!(p.ffn_rows.start, next_ffn);
                assert_eq!(p.local_heads(), model.n_heads / n_nodes);
                assert_eq!(p.local_embed(), model.l_embed / n_nodes);
                assert_eq!(p.local_ffn(), model.ffn_dim / n_nodes);
                next_head = p.heads.end;
                next_row = p.embed_rows.end;
                next_ffn = p.ffn_rows.end;
            }
            assert_eq!(next_head, model.n_heads);
            assert_eq!(next_row, model.l_embed);
            assert_eq!(next_ffn, model.ffn_dim);
        }
    }

    /// Head blocks and embedding-row blocks describe the same physical
    /// rows of the Q/K/V projections.
    #[test]
    fn head_rows_match_embed_rows() {
        let model = ModelConfig::default();
        for id in 0..4 {
            let p = ShardPlan::new(&model, 4, id);
            assert_eq!(p.heads.start * model.head_dim, p.embed_rows.start);
            assert_eq!(p.heads.end * model.head_dim, p.embed_rows.end);
        }
    }

    #[test]
    fn single_node_owns_everything() {
        let model = ModelConfig::desk();
        let p = ShardPlan::new(&model, 1, 0);
        assert_eq!(p.heads, 0..model.n_heads);
        assert_eq!(p.embed_rows, 0..model.l_embed);
        assert_eq!(p.ffn_rows, 0..model.ffn_dim);
    }
}
