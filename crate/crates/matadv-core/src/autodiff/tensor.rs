//! Dense 2-D row-major f64 tensor and the raw kernels shared by the tape's
//! forward ops. Everything is CPU-side and deterministic: fixed loop orders,
//! no threaded reductions.

use crate::error::{Error, Result};

/// Dense matrix value. Vectors are represented as `n×1` or `1×n`; scalars as
/// `1×1`. Immutable once built except through optimizer updates that replace
/// whole values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// Marks a leaf as trainable when inserted into a tape.
    pub requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor from row-major data; length must match the shape.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("{rows}x{cols} shape needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
        })
    }

    /// All-zero tensor.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            requires_grad: false,
        }
    }

    /// Constant-filled tensor.
    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
            requires_grad: false,
        }
    }

    /// 1×1 tensor.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
            requires_grad: false,
        }
    }

    /// Tensor from an N×3 coordinate list.
    pub fn from_points(points: &[[f64; 3]]) -> Self {
        let mut data = Vec::with_capacity(points.len() * 3);
        for p in points {
            data.extend_from_slice(p);
        }
        Tensor {
            rows: points.len(),
            cols: 3,
            data,
            requires_grad: false,
        }
    }

    /// Rows of an N×3 tensor as coordinate triples.
    pub fn to_points(&self) -> Result<Vec<[f64; 3]>> {
        if self.cols != 3 {
            return Err(Error::ShapeMismatch {
                op: "to_points",
                detail: format!("expected 3 columns, got {}", self.cols),
            });
        }
        Ok(self
            .data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect())
    }

    /// Tensor from nested rows (used by JSON conversions).
    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: "no rows".into(),
            });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "tensor",
                    detail: "ragged rows".into(),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(rows.len(), cols, data)
    }

    /// Nested-row copy of the data.
    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.cols.max(1)).map(|r| r.to_vec()).collect()
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element accessor (row, col).
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// The single element of a 1×1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.rows * self.cols != 1 {
            return Err(Error::ShapeMismatch {
                op: "item",
                detail: format!("expected scalar, got {}x{}", self.rows, self.cols),
            });
        }
        Ok(self.data[0])
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute entry (0 for empty).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Sum of squared entries (squared Frobenius norm).
    pub fn sq_frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `a @ b` for row-major operands.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("{}x{} @ {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    dgemm(
        a.rows, a.cols, b.cols,
        a.data(), a.cols as isize, 1,
        b.data(), b.cols as isize, 1,
        out.data_mut(), b.cols as isize,
    );
    Ok(out)
}

/// `aᵀ @ b` without materializing the transpose.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            detail: format!("{}x{}ᵀ @ {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Tensor::zeros(a.cols, b.cols);
    dgemm(
        a.cols, a.rows, b.cols,
        a.data(), 1, a.cols as isize,
        b.data(), b.cols as isize, 1,
        out.data_mut(), b.cols as isize,
    );
    Ok(out)
}

/// `a @ bᵀ` without materializing the transpose.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            detail: format!("{}x{} @ {}x{}ᵀ", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Tensor::zeros(a.rows, b.rows);
    dgemm(
        a.rows, a.cols, b.rows,
        a.data(), a.cols as isize, 1,
        b.data(), 1, b.cols as isize,
        out.data_mut(), b.rows as isize,
    );
    Ok(out)
}

/// Accumulating `c += alpha · op(a) @ op(b)` with explicit strides.
pub(crate) fn dgemm_acc(
    m: usize, k: usize, n: usize,
    alpha: f64,
    a: &[f64], rsa: isize, csa: isize,
    b: &[f64], rsb: isize, csb: isize,
    c: &mut [f64], rsc: isize,
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            1.0,
            c.as_mut_ptr(), rsc, 1,
        );
    }
}

fn dgemm(
    m: usize, k: usize, n: usize,
    a: &[f64], rsa: isize, csa: isize,
    b: &[f64], rsb: isize, csb: isize,
    c: &mut [f64], rsc: isize,
) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            0.0,
            c.as_mut_ptr(), rsc, 1,
        );
    }
}

/// Pairwise squared distances between two point sets: out[i][j] = ‖aᵢ − bⱼ‖².
/// Computed naively per coordinate so identical points give exactly zero.
pub(crate) fn pairwise_sqdist(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "pairwise_sqdist",
            detail: format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let (n, m, d) = (a.rows, b.rows, a.cols);
    let mut out = Tensor::zeros(n, m);
    let od = out.data_mut();
    for i in 0..n {
        let ai = &a.data[i * d..(i + 1) * d];
        let row = &mut od[i * m..(i + 1) * m];
        for (j, slot) in row.iter_mut().enumerate() {
            let bj = &b.data[j * d..(j + 1) * d];
            let mut acc = 0.0;
            for t in 0..d {
                let diff = ai[t] - bj[t];
                acc += diff * diff;
            }
            *slot = acc;
        }
    }
    Ok(out)
}
