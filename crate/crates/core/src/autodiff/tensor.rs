use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len()` differs from the product of `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {:?}",
            shape
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data)
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

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Rows of a matrix. Panics on other ranks.
    pub fn rows(&self) -> usize {
        assert!(self.is_matrix());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert!(self.is_matrix());
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    /// The only element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `C += A·B` for row-major `A: m×k`, `B: k×n`, `C: m×n`, in 4×4 register
/// tiles.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    let m4 = m - m % 4;
    let n4 = n - n % 4;
    for i in (0..m4).step_by(4) {
        for j in (0..n4).step_by(4) {
            let mut acc = [[0.0f64; 4]; 4];
            for p in 0..k {
                let bv: [f64; 4] = b[p * n + j..p * n + j + 4].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for (x, y) in row.iter_mut().zip(bv) {
                        *x += av * y;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                for (x, y) in c[(i + r) * n + j..(i + r) * n + j + 4].iter_mut().zip(row) {
                    *x += y;
                }
            }
        }
        for r in i..i + 4 {
            edge_cols(a, b, r, k, n, n4, c);
        }
    }
    for r in m4..m {
        edge_cols(a, b, r, k, n, 0, c);
    }
}

fn edge_cols(a: &[f64], b: &[f64], r: usize, k: usize, n: usize, from: usize, c: &mut [f64]) {
    if from == n {
        return;
    }
    let c_row = &mut c[r * n + from..(r + 1) * n];
    for p in 0..k {
        let av = a[r * k + p];
        for (x, y) in c_row.iter_mut().zip(&b[p * n + from..(p + 1) * n]) {
            *x += av * y;
        }
    }
}

pub(crate) fn transposed(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `C = A·B`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    c.iter_mut().for_each(|v| *v = 0.0);
    gemm_acc(a, b, m, k, n, c);
}

/// `C += G·Bᵀ` for `G: m×n`, `B: k×n`, `C: m×k`.
pub(crate) fn matmul_bt_acc(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    gemm_acc(g, &transposed(b, k, n), m, n, k, c);
}

/// `C += Aᵀ·G` for `A: m×k`, `G: m×n`, `C: k×n`.
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    gemm_acc(&transposed(a, m, k), g, k, m, n, c);
}
