use crate::error::{shape_err, Result};

/// Dense row-major array of `f64` values.
///
/// Networks treat the leading axis as the batch axis and everything after it
/// as a flat feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err("Tensor::from_vec", len, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a `rows x cols` matrix from row slices of equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(shape_err("Tensor::from_rows", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(&[rows.len(), cols], data)
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

    /// Size of the leading axis (1 for scalars).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Flattened size of every axis after the first.
    pub fn cols(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(shape_err("Tensor::reshape", self.data.len(), len));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Concatenates two matrices with the same row count along the feature axis.
    pub fn hcat(left: &Tensor, right: &Tensor) -> Result<Tensor> {
        if left.rows() != right.rows() {
            return Err(shape_err("Tensor::hcat", left.rows(), right.rows()));
        }
        let (lc, rc) = (left.cols(), right.cols());
        let mut data = Vec::with_capacity(left.rows() * (lc + rc));
        for i in 0..left.rows() {
            data.extend_from_slice(left.row(i));
            data.extend_from_slice(right.row(i));
        }
        Tensor::from_vec(&[left.rows(), lc + rc], data)
    }

    /// Splits the feature axis at `at`, the inverse of [`Tensor::hcat`].
    pub fn hsplit(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let c = self.cols();
        if at > c {
            return Err(shape_err("Tensor::hsplit", format!("<= {c}"), at));
        }
        let mut left = Vec::with_capacity(self.rows() * at);
        let mut right = Vec::with_capacity(self.rows() * (c - at));
        for i in 0..self.rows() {
            let row = self.row(i);
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        Ok((
            Tensor::from_vec(&[self.rows(), at], left)?,
            Tensor::from_vec(&[self.rows(), c - at], right)?,
        ))
    }
}

/// `c = op(a) * op(b) + beta * c` for row-major matrices, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored with its
/// dimensions swapped.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every slice to exactly the extent the
    // strides address, and `c` does not alias `a` or `b` (exclusive borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
