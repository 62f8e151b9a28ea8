use std::fmt;

use crate::error::{shape_err, Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Every tensor built through the checked constructors holds only finite
/// values. Kernels that produce new tensors keep the summation order fixed
/// so results are reproducible bit for bit.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            if r > 0 {
                write!(f, "; ")?;
            }
            let row = self.row(r);
            for (c, v) in row.iter().take(8).enumerate() {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v:.6}")?;
            }
            if row.len() > 8 {
                write!(f, ", ...")?;
            }
        }
        if self.rows > 8 {
            write!(f, "; ...")?;
        }
        write!(f, "]")
    }
}

impl Tensor {
    /// Builds a tensor, rejecting wrong lengths and NaN/Inf entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(
                "from_vec",
                format!("{} values for a {rows}x{cols} tensor", data.len()),
            );
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return shape_err("from_rows", "ragged rows");
        }
        Self::from_vec(n, k, rows.concat())
    }

    /// Unchecked constructor for kernel outputs.
    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self::raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
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

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Sets one entry. Panics on a non-finite value.
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        assert!(value.is_finite(), "tensor entries must be finite");
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::raw(idx.len(), self.cols, data)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            );
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            let o = &mut out[i * m..(i + 1) * m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Ok(Tensor::raw(n, m, out))
    }

    /// `selfᵀ * other`, without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return shape_err(
                "matmul_tn",
                format!("{:?}ᵀ x {:?}", self.shape(), other.shape()),
            );
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            let b = &other.data[i * m..(i + 1) * m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let o = &mut out[p * m..(p + 1) * m];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Ok(Tensor::raw(k, m, out))
    }

    /// `self * otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return shape_err(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            );
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = dot(a, b);
            }
        }
        Ok(Tensor::raw(n, m, out))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
