//! Scaled dot-product attention, symmetric blockwise quantization and
//! low-rank adaptation over small dense matrices.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("bits must be in [2, 8], got {0}")]
    Bits(u32),
    #[error("block size must be at least 1")]
    BlockSize,
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("rank {rank} exceeds min({rows}, {cols})")]
    RankTooLarge {
        rank: usize,
        rows: usize,
        cols: usize,
    },
}

/// Dense row-major matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MathError> {
        if rows == 0 || cols == 0 {
            return Err(MathError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(MathError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(MathError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MathError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MathError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, MathError> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, MathError> {
        if self.cols != other.rows {
            return Err(MathError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                let out = &mut data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, MathError> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(MathError::Shape(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

/// Row-wise softmax of QKᵀ/√d_k.
pub fn attention_weights(q: &Matrix, k: &Matrix) -> Result<Matrix, MathError> {
    if q.cols != k.cols {
        return Err(MathError::Shape(format!(
            "query width {} != key width {}",
            q.cols, k.cols
        )));
    }
    let scale = (q.cols as f64).sqrt();
    let mut scores = q.matmul(&k.transpose())?;
    for r in 0..scores.rows {
        let row = &mut scores.data[r * scores.cols..(r + 1) * scores.cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / scale;
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v / scale - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(scores)
}

/// softmax(QKᵀ/√d_k)·V, shape (Q rows × V cols).
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix, MathError> {
    if k.rows != v.rows {
        return Err(MathError::Shape(format!(
            "key rows {} != value rows {}",
            k.rows, v.rows
        )));
    }
    attention_weights(q, k)?.matmul(v)
}

/// Blockwise symmetric absmax quantization of a matrix, blocks taken over the
/// row-major element order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    bits: u32,
    block_size: usize,
    codes: Vec<i8>,
    scales: Vec<f64>,
}

impl QuantizedTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Scale of the block holding element `index` (row-major).
    pub fn scale_for(&self, index: usize) -> f64 {
        self.scales[index / self.block_size]
    }
}

pub const DEFAULT_BITS: u32 = 4;
pub const DEFAULT_BLOCK_SIZE: usize = 64;

pub(crate) fn check_bits(bits: u32) -> Result<i32, MathError> {
    if !(2..=8).contains(&bits) {
        return Err(MathError::Bits(bits));
    }
    Ok((1i32 << (bits - 1)) - 1)
}

pub fn quantize(w: &Matrix, bits: u32, block_size: usize) -> Result<QuantizedTensor, MathError> {
    let qmax = check_bits(bits)?;
    if block_size == 0 {
        return Err(MathError::BlockSize);
    }
    if let Some(i) = w.data.iter().position(|v| !v.is_finite()) {
        return Err(MathError::NonFinite(i));
    }
    let mut codes = Vec::with_capacity(w.data.len());
    let mut scales = Vec::with_capacity(w.data.len().div_ceil(block_size));
    for block in w.data.chunks(block_size) {
        let absmax = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if absmax == 0.0 {
            1.0
        } else {
            absmax / qmax as f64
        };
        scales.push(scale);
        codes.extend(
            block
                .iter()
                .map(|v| (v / scale).round().clamp(-(qmax as f64) - 1.0, qmax as f64) as i8),
        );
    }
    Ok(QuantizedTensor {
        rows: w.rows,
        cols: w.cols,
        bits,
        block_size,
        codes,
        scales,
    })
}

pub fn dequantize(t: &QuantizedTensor) -> Matrix {
    let data = t
        .codes
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * t.scale_for(i))
        .collect();
    Matrix {
        rows: t.rows,
        cols: t.cols,
        data,
    }
}

/// Low-rank update U·Vᵀ with U: m×r and V: n×r.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankDelta {
    u: Matrix,
    v: Matrix,
}

impl LowRankDelta {
    pub fn new(u: Matrix, v: Matrix) -> Result<Self, MathError> {
        if u.cols != v.cols {
            return Err(MathError::Shape(format!(
                "factor ranks differ: U has {} columns, V has {}",
                u.cols, v.cols
            )));
        }
        let rank = u.cols;
        if rank > u.rows.min(v.rows) {
            return Err(MathError::RankTooLarge {
                rank,
                rows: u.rows,
                cols: v.rows,
            });
        }
        Ok(Self { u, v })
    }

    pub fn rank(&self) -> usize {
        self.u.cols
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn to_dense(&self) -> Matrix {
        self.u
            .matmul(&self.v.transpose())
            .expect("factor shapes checked at construction")
    }
}

/// dequantize(W_q) + U·Vᵀ
pub fn apply_low_rank(w_q: &QuantizedTensor, delta: &LowRankDelta) -> Result<Matrix, MathError> {
    if delta.u.rows != w_q.rows || delta.v.rows != w_q.cols {
        return Err(MathError::Shape(format!(
            "delta is {}x{}, base weight is {}x{}",
            delta.u.rows, delta.v.rows, w_q.rows, w_q.cols
        )));
    }
    dequantize(w_q).add(&delta.to_dense())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamCount {
    pub full: u64,
    pub trainable: u64,
    pub ratio: f64,
}

/// Parameters in the U and V factors of one adapted m×n weight: r·(m + n).
pub fn trainable_param_count(m: u64, n: u64, r: u64) -> Result<ParamCount, MathError> {
    if r == 0 {
        return Err(MathError::ZeroRank);
    }
    if m == 0 || n == 0 {
        return Err(MathError::EmptyShape {
            rows: m as usize,
            cols: n as usize,
        });
    }
    let full = m * n;
    let trainable = r * (m + n);
    Ok(ParamCount {
        full,
        trainable,
        ratio: trainable as f64 / full as f64,
    })
}

/// Storage for a quantized m×n weight: packed codes plus one f32 scale per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantizedStorage {
    pub code_bytes: u64,
    pub blocks: u64,
    pub scale_bytes: u64,
    pub total_bytes: u64,
    pub full_precision_bytes: u64,
}

pub fn quantized_storage(
    m: u64,
    n: u64,
    bits: u32,
    block_size: u64,
) -> Result<QuantizedStorage, MathError> {
    check_bits(bits)?;
    if block_size == 0 {
        return Err(MathError::BlockSize);
    }
    let elements = m * n;
    let code_bytes = (elements * bits as u64).div_ceil(8);
    let blocks = elements.div_ceil(block_size);
    let scale_bytes = blocks * 4;
    Ok(QuantizedStorage {
        code_bytes,
        blocks,
        scale_bytes,
        total_bytes: code_bytes + scale_bytes,
        full_precision_bytes: elements * 4,
    })
}
