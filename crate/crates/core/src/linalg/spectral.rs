use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Largest-singular-value estimate from power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate<T> {
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    /// `‖AᵀA v − ρ v‖ / ρ` at the returned iterate.
    pub rel_residual: T,
}

/// Spectral norm by power iteration on `AᵀA`.
///
/// Starts from the normalized all-ones vector. If that start lies in the null
/// space or fails to reach `tol` within `max_iter` steps, one restart from the
/// first coordinate vector is attempted and the better of the two runs is
/// returned. A non-converged estimate is not an error; the caller inspects
/// `converged`.
pub fn spectral_norm<T: Scalar>(a: &DenseMatrix<T>, tol: T, max_iter: usize) -> Result<SpectralEstimate<T>> {
    if a.is_empty() {
        return Err(Error::Empty("spectral_norm of an empty matrix"));
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let amax = a.max_abs();
    if amax == T::zero() {
        return Ok(SpectralEstimate { value: T::zero(), iterations: 0, converged: true, rel_residual: T::zero() });
    }
    // iterate on a/amax so the Gram quantities cannot overflow
    let scaled = a.scale(T::one() / amax);
    let n = a.cols();

    let first = power_run(&scaled, vec![T::one(); n], tol, max_iter);
    let est = match first {
        Some(e) if e.converged => e,
        _ => {
            let mut e1 = vec![T::zero(); n];
            e1[0] = T::one();
            let second = power_run(&scaled, e1, tol, max_iter);
            match (first, second) {
                (Some(f), Some(s)) => {
                    if s.converged || (!f.converged && s.rel_residual < f.rel_residual) {
                        SpectralEstimate { iterations: f.iterations + s.iterations, ..s }
                    } else {
                        SpectralEstimate { iterations: f.iterations + s.iterations, ..f }
                    }
                }
                (Some(f), None) => f,
                (None, Some(s)) => s,
                // both starts annihilated by a nonzero matrix
                (None, None) => SpectralEstimate {
                    value: T::zero(),
                    iterations: 2,
                    converged: false,
                    rel_residual: T::infinity(),
                },
            }
        }
    };
    Ok(SpectralEstimate { value: est.value * amax, ..est })
}

/// One power-iteration run; `None` when the start vector is annihilated.
fn power_run<T: Scalar>(a: &DenseMatrix<T>, mut v: Vec<T>, tol: T, max_iter: usize) -> Option<SpectralEstimate<T>> {
    normalize(&mut v)?;
    let mut best = SpectralEstimate { value: T::zero(), iterations: 0, converged: false, rel_residual: T::infinity() };
    for it in 1..=max_iter {
        let u = a.matvec_unchecked(&v);
        let rho: T = u.iter().map(|&x| x * x).sum();
        if rho == T::zero() {
            return if it == 1 { None } else { Some(best) };
        }
        let mut w = a.matvec_transpose_unchecked(&u);
        let resid: T = w
            .iter()
            .zip(&v)
            .map(|(&wi, &vi)| {
                let d = wi - rho * vi;
                d * d
            })
            .sum::<T>()
            .sqrt()
            / rho;
        best = SpectralEstimate { value: rho.sqrt(), iterations: it, converged: resid <= tol, rel_residual: resid };
        if best.converged {
            return Some(best);
        }
        normalize(&mut w)?;
        v = w;
    }
    Some(best)
}

fn normalize<T: Scalar>(v: &mut [T]) -> Option<()> {
    let norm: T = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x = *x / norm);
    Some(())
}

/// Largest dimension accepted by [`svd_reference`].
pub const SVD_REFERENCE_MAX_DIM: usize = 512;

/// All singular values, descending, by one-sided cyclic Jacobi.
///
/// Reference oracle for [`spectral_norm`]; intended for small matrices only.
pub fn svd_reference<T: Scalar>(a: &DenseMatrix<T>) -> Result<Vec<T>> {
    if a.is_empty() {
        return Err(Error::Empty("svd_reference of an empty matrix"));
    }
    if a.rows() > SVD_REFERENCE_MAX_DIM || a.cols() > SVD_REFERENCE_MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "svd_reference is limited to {SVD_REFERENCE_MAX_DIM}x{SVD_REFERENCE_MAX_DIM}, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    // orthogonalize the columns of the taller orientation
    let work = if a.rows() >= a.cols() { a.clone() } else { a.transpose() };
    let (m, n) = work.shape();
    // column-major copy: cols[j] is column j
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| (0..m).map(|i| work.get(i, j)).collect()).collect();
    let eps = T::epsilon();

    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (head, tail) = cols.split_at_mut(q);
                let (cp, cq) = (&mut head[p], &mut tail[0]);
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for (&x, &y) in cp.iter().zip(cq.iter()) {
                    alpha = alpha + x * x;
                    beta = beta + y * y;
                    gamma = gamma + x * y;
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let two = T::one() + T::one();
                let zeta = (beta - alpha) / (two * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = cols.iter().map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt()).collect();
    sv.sort_by(|x, y| y.partial_cmp(x).expect("finite singular values"));
    Ok(sv)
}
