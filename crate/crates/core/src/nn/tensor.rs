use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::NnError;

/// Dense row-major array of `f64` values.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch {
                op: "tensor",
                detail: alloc::format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Builds a 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(NnError::ShapeMismatch {
                    op: "from_rows",
                    detail: alloc::format!("ragged rows: {} vs {}", row.len(), width),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { shape: vec![rows.len(), width], data })
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

    /// Number of rows of a tensor viewed as a matrix (leading dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                detail: alloc::format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("data", &self.data).finish()
    }
}

/// `out[b, m] += sum_k a[b, k] * w[k, m]`
pub(crate) fn matmul_acc(a: &[f64], w: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let arow = &a[r * inner..(r + 1) * inner];
        let orow = &mut out[r * cols..(r + 1) * cols];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let wrow = &w[k * cols..(k + 1) * cols];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += av * wv;
            }
        }
    }
}

/// `out[b, k] += sum_m g[b, m] * w[k, m]`
pub(crate) fn matmul_bt_acc(g: &[f64], w: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let grow = &g[r * cols..(r + 1) * cols];
        let orow = &mut out[r * inner..(r + 1) * inner];
        for (k, o) in orow.iter_mut().enumerate() {
            let wrow = &w[k * cols..(k + 1) * cols];
            let mut acc = 0.0;
            for (&gv, &wv) in grow.iter().zip(wrow) {
                acc += gv * wv;
            }
            *o += acc;
        }
    }
}

/// `out[k, m] += sum_b a[b, k] * g[b, m]`
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let arow = &a[r * inner..(r + 1) * inner];
        let grow = &g[r * cols..(r + 1) * cols];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[k * cols..(k + 1) * cols];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}
