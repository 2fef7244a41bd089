//! Dense row-major 2D matrices.
//!
//! [`Tensor2D`] is the only value type the model works with: activations,
//! weights, the batch adjacency and the attention matrix are all stored as
//! contiguous row-major buffers of [`Real`]. Every operation that can create a
//! non-finite value checks its output and reports [`TensorError::NonFinite`]
//! instead of letting NaN/Inf propagate.

use std::fmt;

use thiserror::Error;

/// Scalar type used throughout the engine.
#[cfg(not(feature = "f64"))]
pub type Real = f32;

/// Scalar type used throughout the engine.
#[cfg(feature = "f64")]
pub type Real = f64;

/// `(rows, cols)`.
pub type Shape = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Shape, reason: String },
    #[error("non-finite value produced by {op} at ({row}, {col})")]
    NonFinite { op: &'static str, row: usize, col: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            if r > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        if self.rows > 8 {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::InvalidShape {
                shape: (rows, cols),
                reason: "rows and cols must both be at least 1".into(),
            });
        }
        if data.len() != rows * cols {
            return Err(TensorError::InvalidShape {
                shape: (rows, cols),
                reason: format!("expected {} values, got {}", rows * cols, data.len()),
            });
        }
        let t = Tensor2D { rows, cols, data };
        t.check_finite("new")?;
        Ok(t)
    }

    /// Zero matrix. Panics on a zero dimension; internal shapes are always
    /// derived from a validated configuration.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: Real) -> Self {
        assert!(rows > 0 && cols > 0, "Tensor2D must be at least 1x1");
        Tensor2D {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows<R: AsRef<[Real]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|x| x.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(TensorError::InvalidShape {
                    shape: (r, c),
                    reason: format!("row {i} has {} columns", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Builds a matrix from a generator called once per `(row, col)` in
    /// row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Real) -> Self {
        assert!(rows > 0 && cols > 0, "Tensor2D must be at least 1x1");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor2D { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; a tensor holds at least one entry.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[Real] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Real) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [Real] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(TensorError::NonFinite {
                op,
                row: i / self.cols,
                col: i % self.cols,
            }),
        }
    }

    fn checked(self, op: &'static str) -> Result<Self> {
        self.check_finite(op)?;
        Ok(self)
    }

    fn same_shape(&self, other: &Tensor2D, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        crate::mac::record((m * k * n) as u64);
        let mut out = vec![0.0 as Real; m * n];
        // Blocked over output rows and the shared dimension so a slab of
        // `other` and the rows it updates stay in cache together. Rows go four
        // at a time, so each loaded row of `other` serves four output rows.
        // Every output element still sums its products in increasing k, so
        // results do not depend on how rows are grouped.
        const KB: usize = 128 / std::mem::size_of::<Real>();
        const RB: usize = 16;
        let mut r0 = 0;
        while r0 < m {
            let r1 = (r0 + RB).min(m);
            let full_end = r0 + (r1 - r0) / 4 * 4;
            let mut k0 = 0;
            while k0 < k {
                let k1 = (k0 + KB).min(k);
                for i0 in (r0..full_end).step_by(4) {
                    let (c0, rest) = out[i0 * n..(i0 + 4) * n].split_at_mut(n);
                    let (c1, rest) = rest.split_at_mut(n);
                    let (c2, c3) = rest.split_at_mut(n);
                    for kk in k0..k1 {
                        let a0 = self.data[i0 * k + kk];
                        let a1 = self.data[(i0 + 1) * k + kk];
                        let a2 = self.data[(i0 + 2) * k + kk];
                        let a3 = self.data[(i0 + 3) * k + kk];
                        if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                            continue;
                        }
                        let b_row = &other.data[kk * n..(kk + 1) * n];
                        for ((((x0, x1), x2), x3), &b) in c0
                            .iter_mut()
                            .zip(c1.iter_mut())
                            .zip(c2.iter_mut())
                            .zip(c3.iter_mut())
                            .zip(b_row)
                        {
                            *x0 += a0 * b;
                            *x1 += a1 * b;
                            *x2 += a2 * b;
                            *x3 += a3 * b;
                        }
                    }
                }
                for i in full_end..r1 {
                    let a_row = &self.data[i * k..(i + 1) * k];
                    let c_row = &mut out[i * n..(i + 1) * n];
                    for (kk, &a) in a_row.iter().enumerate().take(k1).skip(k0) {
                        if a == 0.0 {
                            continue;
                        }
                        let b_row = &other.data[kk * n..(kk + 1) * n];
                        for (c, &b) in c_row.iter_mut().zip(b_row) {
                            *c += a * b;
                        }
                    }
                }
                k0 = k1;
            }
            r0 = r1;
        }
        Tensor2D {
            rows: m,
            cols: n,
            data: out,
        }
        .checked("matmul")
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Applies `f` to every entry.
    pub fn map(&self, op: &'static str, f: impl Fn(Real) -> Real) -> Result<Tensor2D> {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
        .checked(op)
    }

    pub fn relu(&self) -> Tensor2D {
        // max(0, x) of finite input is finite.
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| relu(v)).collect(),
        }
    }

    pub fn sigmoid(&self) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor2D, op: &'static str, f: impl Fn(Real, Real) -> Real) -> Result<Tensor2D> {
        self.same_shape(other, op)?;
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
        .checked(op)
    }

    pub fn add(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: Real) -> Result<Tensor2D> {
        self.map("scale", |v| v * s)
    }

    /// Adds the `1 x cols` row `bias` to every row.
    pub fn row_broadcast_add(&self, bias: &Tensor2D) -> Result<Tensor2D> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(TensorError::Shape {
                op: "row_broadcast_add",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        out.checked("row_broadcast_add")
    }

    /// `1 x cols` vector of per-column sums.
    pub fn column_sums(&self) -> Tensor2D {
        crate::mac::record((self.rows * self.cols) as u64);
        let mut out = Tensor2D::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Tensor2D {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    /// Max over disjoint windows of `k` consecutive features, mapping
    /// `B x D` to `B x floor(D / k)`. A trailing partial window is dropped.
    pub fn maxpool_features(&self, k: usize) -> Result<Tensor2D> {
        self.maxpool_with_argmax(k).map(|(t, _)| t)
    }

    /// Like [`maxpool_features`](Self::maxpool_features), also returning the
    /// source column of every output entry (first maximum wins on ties).
    pub fn maxpool_with_argmax(&self, k: usize) -> Result<(Tensor2D, Vec<usize>)> {
        if k == 0 || k > self.cols {
            return Err(TensorError::InvalidShape {
                shape: self.shape(),
                reason: format!("max-pool window {k} must be in 1..={}", self.cols),
            });
        }
        let out_cols = self.cols / k;
        let mut out = Tensor2D::zeros(self.rows, out_cols);
        let mut argmax = Vec::with_capacity(self.rows * out_cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for w in 0..out_cols {
                let mut best = w * k;
                for c in w * k + 1..(w + 1) * k {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                out.data[r * out_cols + w] = row[best];
                argmax.push(best);
            }
        }
        Ok((out, argmax))
    }

    /// Copies the rows with the given indices, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor2D {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor2D {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the largest entry of every row.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

#[inline]
pub fn relu(x: Real) -> Real {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
