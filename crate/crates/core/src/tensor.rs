//! Minimal row-major matrix containers for weights and activations.
//!
//! The inference core only ever needs dense 2-D storage with row views:
//! float matrices for reference math and int8 matrices (with one scale
//! per tensor) for the quantized datapath. Anything fancier would be
//! dead weight.

/// Dense `rows x cols` matrix of `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FTensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FTensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        FTensor { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of the row block `rows` (used to cut a shard out of a full
    /// weight matrix).
    pub fn row_slice(&self, rows: std::ops::Range<usize>) -> FTensor {
        FTensor {
            rows: rows.len(),
            cols: self.cols,
            data: self.data[rows.start * self.cols..rows.end * self.cols].to_vec(),
        }
    }
}

/// Dense `rows x cols` matrix of `i8` with a single dequantization
/// scale: `float_value = data[i] as f32 * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub rows: usize,
    pub cols: usize,
    pub scale: f32,
    pub data: Vec<i8>,
}

impl QTensor {
    pub fn from_vec(rows: usize, cols: usize, scale: f32, data: Vec<i8>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        QTensor {
            rows,
            cols,
            scale,
            data,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[i8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_slice(&self, rows: std::ops::Range<usize>) -> QTensor {
        QTensor {
            rows: rows.len(),
            cols: self.cols,
            scale: self.scale,
            data: self.data[rows.start * self.cols..rows.end * self.cols].to_vec(),
        }
    }

    /// Total weight bytes this matrix occupies in HBM (one byte per
    /// int8 element).
    pub fn hbm_bytes(&self) -> usize {
        self.rows * self.cols
    }
}
