//! Grid-indexed block storage.
//!
//! Every field keeps its blocks in one flat column-major buffer and hands out
//! `nalgebra` views. Four index domains are supported: nodes, the strict lower
//! triangle `j < i`, the full square and the pyramid `k < min(i, j)`.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use serde::{Deserialize, Serialize};

fn block_view(data: &[f64], idx: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
    let len = rows * cols;
    DMatrixView::from_slice(&data[idx * len..(idx + 1) * len], rows, cols)
}

fn block_view_mut(data: &mut [f64], idx: usize, rows: usize, cols: usize) -> DMatrixViewMut<'_, f64> {
    let len = rows * cols;
    DMatrixViewMut::from_slice(&mut data[idx * len..(idx + 1) * len], rows, cols)
}

fn write_block(data: &mut [f64], idx: usize, rows: usize, cols: usize, m: &DMatrix<f64>) {
    assert_eq!(m.shape(), (rows, cols), "block shape mismatch");
    let len = rows * cols;
    data[idx * len..(idx + 1) * len].copy_from_slice(m.as_slice());
}

/// One `rows x cols` block per node `k = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeField {
    n: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        Self { n, rows, cols, data: vec![0.0; (n + 1) * rows * cols] }
    }

    pub fn constant(n: usize, m: &DMatrix<f64>) -> Self {
        let mut f = Self::zeros(n, m.nrows(), m.ncols());
        for k in 0..=n {
            f.set(k, m);
        }
        f
    }

    pub fn from_fn(n: usize, rows: usize, cols: usize, mut f: impl FnMut(usize) -> DMatrix<f64>) -> Self {
        let mut out = Self::zeros(n, rows, cols);
        for k in 0..=n {
            out.set(k, &f(k));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, k: usize) -> DMatrixView<'_, f64> {
        debug_assert!(k <= self.n, "node {k} outside 0..={}", self.n);
        block_view(&self.data, k, self.rows, self.cols)
    }

    pub fn get_mut(&mut self, k: usize) -> DMatrixViewMut<'_, f64> {
        debug_assert!(k <= self.n, "node {k} outside 0..={}", self.n);
        block_view_mut(&mut self.data, k, self.rows, self.cols)
    }

    pub fn set(&mut self, k: usize, m: &DMatrix<f64>) {
        debug_assert!(k <= self.n, "node {k} outside 0..={}", self.n);
        write_block(&mut self.data, k, self.rows, self.cols, m);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Blocks on the strict lower triangle `0 <= j < i <= n`; row index first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelField {
    n: usize,
    rows: usize,
    cols: usize,
    /// Entries are averages over `[t_j, t_{j+1}]` rather than point samples.
    pub cell_averaged: bool,
    data: Vec<f64>,
}

impl KernelField {
    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        Self { n, rows, cols, cell_averaged: false, data: vec![0.0; n * (n + 1) / 2 * rows * cols] }
    }

    pub fn from_fn(n: usize, rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> DMatrix<f64>) -> Self {
        let mut out = Self::zeros(n, rows, cols);
        for i in 1..=n {
            for j in 0..i {
                out.set(i, j, &f(i, j));
            }
        }
        out
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j < i, "kernel access ({i}, {j}) outside the strict lower triangle");
        debug_assert!(i <= self.n, "kernel row {i} beyond n = {}", self.n);
        i * (i - 1) / 2 + j
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> DMatrixView<'_, f64> {
        block_view(&self.data, self.index(i, j), self.rows, self.cols)
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> DMatrixViewMut<'_, f64> {
        let idx = self.index(i, j);
        block_view_mut(&mut self.data, idx, self.rows, self.cols)
    }

    pub fn set(&mut self, i: usize, j: usize, m: &DMatrix<f64>) {
        let idx = self.index(i, j);
        write_block(&mut self.data, idx, self.rows, self.cols, m);
    }

    /// Transposes every block; the index domain is unchanged.
    pub fn transpose_blocks(&self) -> Self {
        let mut out = Self::zeros(self.n, self.cols, self.rows);
        out.cell_averaged = self.cell_averaged;
        for i in 1..=self.n {
            for j in 0..i {
                out.set(i, j, &self.get(i, j).transpose());
            }
        }
        out
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

/// Blocks on the full square `0 <= i, j <= n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareField {
    n: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SquareField {
    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        Self { n, rows, cols, data: vec![0.0; (n + 1) * (n + 1) * rows * cols] }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.n && j <= self.n, "square access ({i}, {j}) beyond n = {}", self.n);
        i * (self.n + 1) + j
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> DMatrixView<'_, f64> {
        block_view(&self.data, self.index(i, j), self.rows, self.cols)
    }

    pub fn set(&mut self, i: usize, j: usize, m: &DMatrix<f64>) {
        let idx = self.index(i, j);
        write_block(&mut self.data, idx, self.rows, self.cols, m);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Square blocks `F(i, j, k)` for `k < min(i, j) <= n`.
///
/// Only `i >= j` is stored; the other half is the block transpose, so
/// `F(i, j, k) = F(j, i, k)^T` holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidField {
    n: usize,
    dim: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl PyramidField {
    pub fn zeros(n: usize, dim: usize) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        let mut total = 0;
        for k in 0..=n {
            offsets.push(total);
            let m = n - k;
            total += m * (m + 1) / 2;
        }
        Self { n, dim, offsets, data: vec![0.0; total * dim * dim] }
    }

    /// Number of stored blocks for step count `n`.
    pub fn stored_blocks(n: usize) -> usize {
        (0..=n).map(|k| (n - k) * (n - k + 1) / 2).sum()
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(k < j && j <= i && i <= self.n, "pyramid access ({i}, {j}, {k}) outside k < j <= i <= n");
        let a = i - k - 1;
        let b = j - k - 1;
        self.offsets[k] + a * (a + 1) / 2 + b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stored half: requires `i >= j`.
    pub fn get_stored(&self, i: usize, j: usize, k: usize) -> DMatrixView<'_, f64> {
        block_view(&self.data, self.index(i, j, k), self.dim, self.dim)
    }

    /// Any `k < min(i, j)`; the upper half is reconstructed by transposition.
    pub fn get(&self, i: usize, j: usize, k: usize) -> DMatrix<f64> {
        if i >= j {
            self.get_stored(i, j, k).into_owned()
        } else {
            self.get_stored(j, i, k).transpose()
        }
    }

    /// Sets `F(i, j, k)`; for `i < j` the transpose is stored at `(j, i, k)`.
    pub fn set(&mut self, i: usize, j: usize, k: usize, m: &DMatrix<f64>) {
        if i >= j {
            let idx = self.index(i, j, k);
            write_block(&mut self.data, idx, self.dim, self.dim, m);
        } else {
            let idx = self.index(j, i, k);
            write_block(&mut self.data, idx, self.dim, self.dim, &m.transpose());
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
