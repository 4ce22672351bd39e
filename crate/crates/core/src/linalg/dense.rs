use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub const BINARY_MAGIC: &[u8; 8] = b"DMATv001";

impl<T: Scalar> DenseMatrix<T> {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadLength { rows, cols, len: data.len() });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
                value: data[idx].as_f64(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec_unchecked(rows, cols, data)
    }

    /// Convenience constructor from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self::from_vec_unchecked(r, c, data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape("hadamard", other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect();
        Ok(Self::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape("add", other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape("sub", other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self::from_vec_unchecked(self.rows, self.cols, data))
    }

    /// Returns `self · diag(d)`, i.e. column `j` multiplied by `d[j]`.
    pub fn scale_columns(&self, d: &[T]) -> Result<Self> {
        if d.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "scale_columns",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: d.len(),
                right_cols: d.len(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, &s) in row.iter_mut().zip(d) {
                *v = *v * s;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> T {
        // scaled accumulation so huge or tiny entries do not over/underflow
        let amax = self.max_abs();
        if amax == T::zero() || !amax.is_finite() {
            return amax;
        }
        let ss: T = self.data.iter().map(|&v| (v / amax) * (v / amax)).sum();
        amax * ss.sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != T::zero()).count()
    }

    /// Matrix product with a fixed `i-k-j` loop order.
    ///
    /// Exact zeros in `self` skip their row of `other`; skipping only drops
    /// additions of `±0`, so the result is bit-identical to the dense loop.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let (m, k, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); m * p];
        if p == 0 {
            return Ok(Self::from_vec_unchecked(m, p, out));
        }
        for (i, out_row) in out.chunks_exact_mut(p).enumerate() {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (kk, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[kk * p..(kk + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self::from_vec_unchecked(m, p, out))
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "matvec",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: x.len(),
                right_cols: 1,
            });
        }
        Ok(self.matvec_unchecked(x))
    }

    pub(crate) fn matvec_unchecked(&self, x: &[T]) -> Vec<T> {
        if self.cols == 0 {
            return vec![T::zero(); self.rows];
        }
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// `selfᵀ · x` without materializing the transpose.
    pub(crate) fn matvec_transpose_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        if self.cols == 0 {
            return out;
        }
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x) {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o = *o + a * xi;
            }
        }
        out
    }

    fn check_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(())
    }

    /// Writes the text form: a `dmat <rows> <cols>` header followed by one
    /// line per row of space-separated shortest round-trip decimals.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dmat {} {}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{}", v.as_f64())).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("missing dmat header".into()))??;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("dmat") {
            return Err(Error::Format(format!("bad header {header:?}")));
        }
        let mut dim = || -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad header {header:?}")))
        };
        let (rows, cols) = (dim()?, dim()?);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing row {i}")))??;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number {tok:?} in row {i}")))?;
                data.push(T::of(v));
            }
            if data.len() - before != cols {
                return Err(Error::Format(format!(
                    "row {i} has {} entries, expected {cols}",
                    data.len() - before
                )));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Writes the binary form: magic, two little-endian `u64` dims, then
    /// row-major little-endian `f64` entries.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("bad DMAT magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let cols = u64::from_le_bytes(word) as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("dimension overflow".into()))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            data.push(T::of(f64::from_le_bytes(word)));
        }
        Self::new(rows, cols, data)
    }
}
