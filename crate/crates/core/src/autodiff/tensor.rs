use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Rank 0 is a scalar, rank 1 a vector and rank 2 a matrix; the engine does
/// not need anything higher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        if shape.len() > 2 {
            return Err(Error::shape("tensor", format!("rank {} > 2", shape.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "from_rows",
                    format!("row {i} has length {}, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows when viewed as a matrix; vectors and scalars count as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Length of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a scalar (or any one-element tensor).
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Numeric kernels shared by the tape and the tape-free forward paths.
pub mod kernels {
    /// `out[r, j] = b[j] + sum_i x[r, i] * w[i, j]`, summed in ascending `i`.
    pub fn affine(x: &[f64], rows: usize, k: usize, w: &[f64], m: usize, b: Option<&[f64]>) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let start = out.len();
            match b {
                Some(b) => out.extend_from_slice(b),
                None => out.resize(start + m, 0.0),
            }
            let o = &mut out[start..start + m];
            let xr = &x[r * k..(r + 1) * k];
            for (i, &xi) in xr.iter().enumerate() {
                let wr = &w[i * m..(i + 1) * m];
                for (oj, &wij) in o.iter_mut().zip(wr) {
                    *oj += xi * wij;
                }
            }
        }
        out
    }

    /// `a^T b` where `a` is `[n, k]` and `b` is `[n, m]`; result `[k, m]`.
    pub fn at_b(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; k * m];
        for r in 0..n {
            let ar = &a[r * k..(r + 1) * k];
            let br = &b[r * m..(r + 1) * m];
            for (i, &ai) in ar.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let o = &mut out[i * m..(i + 1) * m];
                for (oj, &bj) in o.iter_mut().zip(br) {
                    *oj += ai * bj;
                }
            }
        }
        out
    }

    /// `g w^T` where `g` is `[n, m]` and `w` is `[k, m]`; result `[n, k]`.
    pub fn a_bt(g: &[f64], n: usize, m: usize, w: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            let gr = &g[r * m..(r + 1) * m];
            for i in 0..k {
                let wr = &w[i * m..(i + 1) * m];
                let mut s = 0.0;
                for (&gj, &wj) in gr.iter().zip(wr) {
                    s += gj * wj;
                }
                out[r * k + i] = s;
            }
        }
        out
    }

    pub fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    pub fn relu(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            0.0
        }
    }

    /// Softmax of one row via log-sum-exp.
    pub fn softmax_row(x: &[f64], out: &mut [f64]) {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(x) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }

    pub fn log_softmax_row(x: &[f64], out: &mut [f64]) {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v - lse;
        }
    }

    /// Shannon entropy in nats with `0 log 0 = 0`.
    pub fn entropy(p: &[f64]) -> f64 {
        let mut h = 0.0;
        for &v in p {
            if v > 0.0 {
                h -= v * v.ln();
            }
        }
        h
    }

    pub fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    }

    pub fn sq_l2_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
        sq_l2_dist(a, b).sqrt()
    }

    pub fn l2_norm(a: &[f64]) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn affine_identity() {
        let out = kernels::affine(&[1.0, 2.0], 1, 2, &[1.0, 0.0, 0.0, 1.0], 2, Some(&[0.0, 0.0]));
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut out = [0.0; 4];
        kernels::softmax_row(&[0.0; 4], &mut out);
        assert_eq!(out, [0.25; 4]);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let mut out = [0.0; 3];
        kernels::softmax_row(&[500.0, -500.0, 499.0], &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
