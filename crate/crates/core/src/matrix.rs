//! Dense row-major `f64` matrices with the handful of products the gradient
//! engine needs. Heavy lifting (GEMM) is delegated to `matrixmultiply`;
//! transposed operands are expressed through strides, never materialized.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major matrix. A batch of `n` samples of dimension `d` is `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(alloc::format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from rows of equal length (test/helper convenience).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(alloc::format!(
                "{what}: {}x{} vs {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            )));
        }
        Ok(())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "add")?;
        let mut out = self.clone();
        for (o, x) in out.data.iter_mut().zip(&other.data) {
            *o += x;
        }
        Ok(out)
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// `C = A · B` (`m×k` times `k×n`).
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(alloc::format!(
            "matmul: {}x{} . {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        )));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows, a.cols, b.cols,
        &a.data, a.cols as isize, 1,
        &b.data, b.cols as isize, 1,
        &mut c.data, b.cols as isize,
    );
    Ok(c)
}

/// `C = Aᵀ · B` (`k×m` transposed times `k×n`); no copy of `A`.
pub fn matmul_at_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::Shape(alloc::format!(
            "matmul_at_b: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        )));
    }
    let mut c = Matrix::zeros(a.cols, b.cols);
    gemm(
        a.cols, a.rows, b.cols,
        &a.data, 1, a.cols as isize,
        &b.data, b.cols as isize, 1,
        &mut c.data, b.cols as isize,
    );
    Ok(c)
}

/// `C = A · Bᵀ` (`m×k` times `n×k` transposed); no copy of `B`.
pub fn matmul_a_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Shape(alloc::format!(
            "matmul_a_bt: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        )));
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    gemm(
        a.rows, a.cols, b.rows,
        &a.data, a.cols as isize, 1,
        &b.data, 1, b.cols as isize,
        &mut c.data, b.rows as isize,
    );
    Ok(c)
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize, k: usize, n: usize,
    a: &[f64], rsa: isize, csa: isize,
    b: &[f64], rsb: isize, csb: isize,
    c: &mut [f64], rsc: isize,
) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n,
            1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            0.0,
            c.as_mut_ptr(), rsc, 1,
        );
    }
}
