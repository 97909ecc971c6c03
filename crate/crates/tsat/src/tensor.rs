//! Dense row-major f64 tensors.
//!
//! Everything in the crate is 64-bit: the gradient checks run at 1e-4
//! relative tolerance against central finite differences, which 32-bit
//! arithmetic cannot meet.

use crate::error::{Result, TsatError};

/// A dense tensor: a shape vector and a flat row-major data buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the data length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TsatError::dimension(
                "tensor_new",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        let t = Tensor { shape, data };
        t.debug_check_finite("tensor_new");
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TsatError::dimension(
                    "tensor_from_rows",
                    format!("ragged rows: expected width {}, got {}", c, row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows/cols of a 2-d tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(TsatError::dimension(
                op,
                format!("expected 2-d tensor, got shape {:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let c = self.shape[1];
        &self.data[row * c..(row + 1) * c]
    }

    /// NaN/Inf detection in debug-checked builds only; release builds skip
    /// the scan.
    pub fn debug_check_finite(&self, op: &str) {
        if cfg!(debug_assertions) {
            if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
                panic!("non-finite value {} at flat index {} after {}", self.data[pos], pos, op);
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Plain matrix product of row-major buffers: `a` is m×k, `b` is k×n.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += av * b_row[j];
            }
        }
    }
    out
}

pub fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Cosine similarity with a zero-norm convention: if either vector has
/// `l2 norm < 1e-12` the similarity is 0.
pub fn cosine_similarity(a: &[f64], b: &[f64], op: &'static str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TsatError::dimension(
            op,
            format!("vector lengths differ: {} vs {}", a.len(), b.len()),
        ));
    }
    let norm_a = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a < 1e-12 || norm_b < 1e-12 {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (norm_a * norm_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TsatError::Dimension { .. }));
    }

    #[test]
    fn matmul_raw_hand_case() {
        // [[1,2]] x [[3],[4]] = [[11]]
        let out = matmul_raw(&[1.0, 2.0], &[3.0, 4.0], 1, 2, 1);
        assert_eq!(out, vec![11.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let t = transpose_raw(&a, 2, 3);
        let tt = transpose_raw(&t, 3, 2);
        assert_eq!(a, tt);
    }

    #[test]
    fn cosine_zero_norm_is_zero() {
        assert_eq!(cosine_similarity(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0], "t").unwrap(), 0.0);
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "non-finite")]
    fn debug_mode_rejects_nan() {
        let _ = Tensor::new(vec![2], vec![1.0, f64::NAN]);
    }
}
