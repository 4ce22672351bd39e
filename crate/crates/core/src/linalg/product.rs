use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix, SpectralEstimate};
use crate::scalar::Scalar;

/// A matrix stored as `exp(log_scale) · unit`.
///
/// After every multiplication `unit` is divided by its Frobenius norm and the
/// log of that norm is folded into `log_scale`, so long products of growing or
/// shrinking factors stay representable. A product that becomes exactly zero
/// has `log_scale == -inf` and an all-zero `unit`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMatrix<T> {
    unit: DenseMatrix<T>,
    log_scale: T,
}

impl<T: Scalar> ScaledMatrix<T> {
    /// Wraps a single factor, normalizing it.
    pub fn from_factor(a: DenseMatrix<T>) -> Self {
        let mut out = Self { unit: a, log_scale: T::zero() };
        out.renormalize();
        out
    }

    pub fn unit(&self) -> &DenseMatrix<T> {
        &self.unit
    }

    pub fn log_scale(&self) -> T {
        self.log_scale
    }

    pub fn dim(&self) -> usize {
        self.unit.rows()
    }

    pub fn is_zero(&self) -> bool {
        self.log_scale == T::neg_infinity()
    }

    /// Replaces the product `P` by `factor · P`.
    pub fn left_multiply(&mut self, factor: &DenseMatrix<T>) -> Result<()> {
        if !factor.is_square() || factor.rows() != self.unit.rows() {
            return Err(Error::DimensionMismatch {
                op: "accumulate_product",
                left_rows: factor.rows(),
                left_cols: factor.cols(),
                right_rows: self.unit.rows(),
                right_cols: self.unit.cols(),
            });
        }
        if self.is_zero() {
            return Ok(());
        }
        self.unit = factor.matmul(&self.unit)?;
        self.renormalize();
        Ok(())
    }

    fn renormalize(&mut self) {
        let f = self.unit.frobenius_norm();
        if f == T::zero() {
            self.log_scale = T::neg_infinity();
            return;
        }
        self.unit = self.unit.scale(T::one() / f);
        self.log_scale = self.log_scale + f.ln();
    }

    /// Natural log of the spectral norm of the represented matrix, with the
    /// power-iteration diagnostics for `unit`. Zero products give `-inf`.
    pub fn log_spectral_norm(&self, tol: T, max_iter: usize) -> Result<(T, SpectralEstimate<T>)> {
        if self.is_zero() {
            let est = SpectralEstimate { value: T::zero(), iterations: 0, converged: true, rel_residual: T::zero() };
            return Ok((T::neg_infinity(), est));
        }
        let est = spectral_norm(&self.unit, tol, max_iter)?;
        Ok((self.log_scale + est.value.ln(), est))
    }

    /// Materializes `exp(log_scale) · unit`; may overflow for long products.
    pub fn to_dense(&self) -> DenseMatrix<T> {
        if self.is_zero() {
            return DenseMatrix::zeros(self.unit.rows(), self.unit.cols());
        }
        self.unit.scale(self.log_scale.exp())
    }
}

/// Left-multiplies `factors` in stream order: the result represents
/// `F_m ⋯ F_2 F_1` for the stream `F_1, F_2, …, F_m`.
pub fn accumulate_product<T, I>(factors: I) -> Result<ScaledMatrix<T>>
where
    T: Scalar,
    I: IntoIterator,
    I::Item: Borrow<DenseMatrix<T>>,
{
    let mut iter = factors.into_iter();
    let first = iter.next().ok_or(Error::Empty("accumulate_product needs at least one factor"))?;
    let first = first.borrow();
    if !first.is_square() {
        return Err(Error::DimensionMismatch {
            op: "accumulate_product",
            left_rows: first.rows(),
            left_cols: first.cols(),
            right_rows: first.rows(),
            right_cols: first.cols(),
        });
    }
    let mut acc = ScaledMatrix::from_factor(first.clone());
    for f in iter {
        acc.left_multiply(f.borrow())?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DEFAULT_MAX_ITER, DEFAULT_TOL};

    type M = DenseMatrix<f64>;

    #[test]
    fn single_factor() {
        let a = M::from_rows(&[&[3.0, 0.0], &[0.0, 4.0]]);
        let p = accumulate_product([&a]).unwrap();
        assert!((p.log_scale() - 5f64.ln()).abs() < 1e-15);
        assert_eq!(p.unit(), &a.scale(0.2));
    }

    #[test]
    fn scalar_chain() {
        let c = 1.7;
        let f = M::identity(4).scale(c);
        let p = accumulate_product(std::iter::repeat(&f).take(300)).unwrap();
        let (log_norm, est) = p.log_spectral_norm(DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(est.converged);
        assert!((log_norm - 300.0 * c.ln()).abs() < 1e-9);
        assert!((p.unit().frobenius_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_product_is_flagged() {
        let a = M::from_diag(&[1.0, 0.0]);
        let b = M::from_diag(&[0.0, 1.0]);
        let p = accumulate_product([&a, &b, &a]).unwrap();
        assert!(p.is_zero());
        assert_eq!(p.log_spectral_norm(1e-10, 10).unwrap().0, f64::NEG_INFINITY);
        assert_eq!(p.to_dense(), M::zeros(2, 2));
    }

    #[test]
    fn errors() {
        assert!(accumulate_product::<f64, Vec<M>>(vec![]).is_err());
        assert!(accumulate_product([M::zeros(2, 3)]).is_err());
        assert!(accumulate_product([M::identity(2), M::identity(3)]).is_err());
    }

    #[test]
    fn stream_order_is_left_multiplication() {
        let a = M::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let b = M::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]);
        let p = accumulate_product([&a, &b]).unwrap().to_dense();
        let naive = b.matmul(&a).unwrap();
        for (x, y) in p.as_slice().iter().zip(naive.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
