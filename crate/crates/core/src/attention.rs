//! Functional multi-head attention with an incremental KV cache.
//!
//! Tokens are processed one at a time, so causality holds by
//! construction: when the query for position `t` arrives, the cache
//! holds exactly positions `0..=t` and nothing later exists to leak.
//! All arithmetic is f32 with a fixed left-to-right reduction order and
//! never crosses head boundaries, which is what lets a head-sharded
//! multi-node run reproduce the single-node result bit for bit.

use crate::error::{Error, Result};

/// Numerically stable in-place softmax (shift by the max, then
/// normalize). Reduction order is fixed left to right.
pub fn softmax_inplace(xs: &mut [f32]) {
    debug_assert!(!xs.is_empty());
    let max = xs.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0f32;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in xs.iter_mut() {
        *v *= inv;
    }
}

/// Per-head key/value store for the heads resident on one node.
///
/// Layout is per head, time-major (`[t][head_dim]` within each head's
/// buffer) so one head's attention scan is a single linear pass.
#[derive(Debug, Clone)]
pub struct KvCache {
    head_dim: usize,
    capacity: usize,
    len: usize,
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl KvCache {
    pub fn new(local_heads: usize, head_dim: usize, capacity: usize) -> Self {
        KvCache {
            head_dim,
            capacity,
            len: 0,
            k: vec![Vec::with_capacity(capacity * head_dim); local_heads],
            v: vec![Vec::with_capacity(capacity * head_dim); local_heads],
        }
    }

    pub fn local_heads(&self) -> usize {
        self.k.len()
    }

    /// Cached positions so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append one position. `k_new`/`v_new` are the local heads'
    /// projections concatenated head-major (`local_heads * head_dim`).
    pub fn append(&mut self, k_new: &[f32], v_new: &[f32]) -> Result<()> {
        let want = self.local_heads() * self.head_dim;
        if k_new.len() != want || v_new.len() != want {
            return Err(Error::Shape(format!(
                "kv append: got {}/{} values, cache holds {} heads x {}",
                k_new.len(),
                v_new.len(),
                self.local_heads(),
                self.head_dim
            )));
        }
        if self.len == self.capacity {
            return Err(Error::CacheFull {
                have: self.len,
                cap: self.capacity,
            });
        }
        for h in 0..self.local_heads() {
            let span = h * self.head_dim..(h + 1) * self.head_dim;
            self.k[h].extend_from_slice(&k_new[span.clone()]);
            self.v[h].extend_from_slice(&v_new[span]);
        }
        self.len += 1;
        Ok(())
    }

    /// Scaled dot-product attention of one query token over everything
    /// cached. Input and output are head-major `local_heads * head_dim`
    /// vectors.
    pub fn attend(&self, q: &[f32]) -> Result<Vec<f32>> {
        if self.len == 0 {
            return Err(Error::CacheEmpty);
        }
        if q.len() != self.local_heads() * self.head_dim {
            return Err(Error::Shape(format!(
                "attend: query has {} values, expected {} heads x {}",
                q.len(),
                self.local_heads(),
                self.head_dim
            )));
        }
        let inv_sqrt_d = 1.0 / (self.head_dim as f32).sqrt();
        let mut out = vec![0.0f32; q.len()];
        let mut scores = vec![0.0f32; self.len];
        for h in 0..self.local_heads() {
            let qh = &q[h * self.head_dim..(h + 1) * self.head_dim];
            for (t, s) in scores.iter_mut().enumerate() {
                let kt = &self.k[h][t * self.head_dim..(t + 1) * self.head_dim];
                let mut acc = 0.0f32;
                for (&a, &b) in qh.iter().zip(kt) {
                    acc += a * b;
                }
                *s = acc * inv_sqrt_d;
            }
            softmax_inplace(&mut scores);
            let oh = &mut out[h * self.head_dim..(h + 1) * self.head_dim];
            for (t, &p) in scores.iter().enumerate() {
                let vt = &self.v[h][t * self.head_dim..(t + 1) * self.head_dim];
                for (o, &v) in oh.iter_mut().zip(vt) {
                    *o += p * v;
                }
            }
        }
        Ok(out)
    }
}
