//! W8A8 symmetric quantization and the int8 matvec it feeds.
//!
//! Both weights and activations are signed 8-bit with one static scale
//! per tensor: `float = int * scale`. Values round half away from zero
//! and saturate to [-127, 127]; -128 is never produced, which keeps the
//! datapath symmetric. Activation scales are calibrated offline and
//! shipped with the weights, so every node quantizes identically and a
//! sharded run is bit-identical to a single-node run.

use rayon::prelude::*;

use crate::tensor::QTensor;

/// Quantization saturates to this magnitude on both sides.
pub const QMAX: f32 = 127.0;

/// Rows below this matvec size are not worth a thread-pool dispatch.
const PAR_ROW_THRESHOLD: usize = 64;

/// Quantize one value: round half away from zero, saturate to ±127.
#[inline]
pub fn quantize_val(x: f32, scale: f32) -> i8 {
    debug_assert!(x.is_finite() && scale > 0.0);
    // f32::round rounds half-way cases away from zero, matching the
    // hardware rounding mode.
    (x / scale).round().clamp(-QMAX, QMAX) as i8
}

/// Quantize a vector with a single static scale.
pub fn quantize(x: &[f32], scale: f32) -> Vec<i8> {
    x.iter().map(|&v| quantize_val(v, scale)).collect()
}

pub fn dequantize(q: &[i8], scale: f32) -> Vec<f32> {
    q.iter().map(|&v| v as f32 * scale).collect()
}

/// Symmetric per-tensor scale covering the whole value range. An
/// all-zero tensor gets scale 1.0 so quantization stays total.
pub fn maxabs_scale(x: &[f32]) -> f32 {
    let maxabs = x.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if maxabs == 0.0 {
        1.0
    } else {
        maxabs / QMAX
    }
}

/// Integer dot product, strictly left to right in i32.
///
/// i32 cannot overflow here: `127 * 127 * len` stays below `i32::MAX`
/// for any `len < 133 000`, far above every dimension in this model.
#[inline]
pub fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0i32;
    for (&wa, &wb) in a.iter().zip(b) {
        acc += wa as i32 * wb as i32;
    }
    acc
}

/// `w * x` with int8 inputs and float output: each row accumulates in
/// i32 and is scaled once by `w.scale * x_scale`.
///
/// Rows are independent, so large matrices fan out over the thread
/// pool; per-row arithmetic is sequential, which keeps the result
/// identical no matter how many threads run.
pub fn matvec_i8(w: &QTensor, x: &[i8], x_scale: f32) -> Vec<f32> {
    assert_eq!(w.cols, x.len(), "matvec shape mismatch");
    let s = w.scale * x_scale;
    let row_out = |r: usize| dot_i8(w.row(r), x) as f32 * s;
    if w.rows >= PAR_ROW_THRESHOLD {
        (0..w.rows).into_par_iter().map(row_out).collect()
    } else {
        (0..w.rows).map(row_out).collect()
    }
}

/// Float reference matvec with the same left-to-right reduction order,
/// used by the full-precision reference model.
pub fn matvec_f32(w_rows: usize, w_cols: usize, w: &[f32], x: &[f32]) -> Vec<f32> {
    assert_eq!(w.len(), w_rows * w_cols);
    assert_eq!(w_cols, x.len());
    (0..w_rows)
        .map(|r| {
            let row = &w[r * w_cols..(r + 1) * w_cols];
            let mut acc = 0.0f32;
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            acc
        })
        .collect()
}
