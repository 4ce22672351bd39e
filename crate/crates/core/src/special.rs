//! Error function and its inverse.
//!
//! `erf` uses the everywhere-positive series
//! `erf(x) = (2/√π) e^{−x²} Σ 2ⁿ x^{2n+1} / (1·3⋯(2n+1))` for `|x| < 3` and
//! `1 − erfc(|x|)` beyond. `erfc` uses the Laplace continued fraction
//! (modified Lentz) for `x ≥ 2`. The inverses start from Winitzki's
//! closed-form approximation and polish with Halley steps on `erf`/`erfc`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SERIES_LIMIT: f64 = 3.0;
const CF_LIMIT: f64 = 2.0;
const MAX_TERMS: usize = 5_000;

fn two_over_sqrt_pi<T: Scalar>() -> T {
    T::FRAC_2_SQRT_PI()
}

pub fn erf<T: Scalar>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    let ax = x.abs();
    if ax < T::of(SERIES_LIMIT) {
        erf_series(x)
    } else {
        (T::one() - erfc_cf(ax)).copysign(x)
    }
}

pub fn erfc<T: Scalar>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    if x < T::zero() {
        return T::of(2.0) - erfc(-x);
    }
    if x < T::of(CF_LIMIT) {
        T::one() - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

fn erf_series<T: Scalar>(x: T) -> T {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let eps = T::epsilon();
    for n in 1..MAX_TERMS {
        term = term * (x2 + x2) / T::of((2 * n + 1) as f64);
        sum = sum + term;
        if term.abs() <= eps * sum.abs() {
            break;
        }
    }
    two_over_sqrt_pi::<T>() * (-x2).exp() * sum
}

/// Continued fraction `erfc(x) = e^{−x²}/√π · 1/(x + ½/(x + 1/(x + 3/2/(x + …))))`, `x > 0`.
fn erfc_cf<T: Scalar>(x: T) -> T {
    let tiny = T::min_positive_value() / T::epsilon();
    let eps = T::epsilon();
    let half = T::of(0.5);
    // f = a1/(b1 + a2/(b2 + ...)), a1 = 1, a_k = (k-1)/2, b_k = x
    let mut f = tiny;
    let mut c = f;
    let mut d = T::zero();
    for k in 1..MAX_TERMS {
        let a = if k == 1 { T::one() } else { T::of((k - 1) as f64) * half };
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = c * d;
        f = f * delta;
        if (delta - T::one()).abs() <= eps {
            break;
        }
    }
    (-x * x).exp() * f / T::PI().sqrt()
}

/// Winitzki's approximation to `erf⁻¹(y)`, relative error about 2e-3.
fn erf_inv_guess(y: f64) -> f64 {
    const A: f64 = 0.147;
    let ln = (1.0 - y * y).ln();
    let t = 2.0 / (std::f64::consts::PI * A) + ln / 2.0;
    ((t * t - ln / A).sqrt() - t).sqrt().copysign(y)
}

/// Inverse error function on `(−1, 1)`.
pub fn erf_inv<T: Scalar>(y: T) -> Result<T> {
    if !(y.abs() < T::one()) {
        return Err(Error::Domain { func: "erf_inv", value: y.as_f64() });
    }
    if y == T::zero() {
        return Ok(y);
    }
    if y.abs() > T::of(0.5) {
        // 1 - |y| is exact here
        return Ok(erfc_inv_tail(T::one() - y.abs())?.copysign(y));
    }
    let mut x = T::of(erf_inv_guess(y.as_f64()));
    for _ in 0..50 {
        let f = erf(x) - y;
        let df = two_over_sqrt_pi::<T>() * (-x * x).exp();
        let step = halley_step(x, f / df);
        x = x - step;
        if step.abs() <= T::epsilon() * x.abs() {
            break;
        }
    }
    Ok(x)
}

/// Inverse complementary error function on `(0, 2)`.
pub fn erfc_inv<T: Scalar>(q: T) -> Result<T> {
    if !(q > T::zero() && q < T::of(2.0)) {
        return Err(Error::Domain { func: "erfc_inv", value: q.as_f64() });
    }
    if q <= T::one() {
        if q < T::of(0.5) {
            erfc_inv_tail(q)
        } else {
            erf_inv(T::one() - q)
        }
    } else {
        Ok(-erfc_inv(T::of(2.0) - q)?)
    }
}

/// Solves `erfc(x) = q` for `x ≥ 0`, `q ∈ (0, 1)`.
fn erfc_inv_tail<T: Scalar>(q: T) -> Result<T> {
    if !(q > T::zero() && q < T::one()) {
        return Err(Error::Domain { func: "erfc_inv", value: q.as_f64() });
    }
    let qf = q.as_f64();
    let mut x = T::of(if qf < 1e-300 {
        // Winitzki loses precision when 1 - q rounds to 1
        (-qf.ln()).sqrt()
    } else {
        erf_inv_guess(1.0 - qf)
    });
    if !(x > T::zero()) || !x.is_finite() {
        x = T::of((-qf.ln()).sqrt().max(1e-3));
    }
    for _ in 0..100 {
        let g = erfc(x) - q;
        let dg = -two_over_sqrt_pi::<T>() * (-x * x).exp();
        if dg == T::zero() {
            break;
        }
        let step = halley_step(x, g / dg);
        x = x - step;
        if step.abs() <= T::epsilon() * x.abs() {
            break;
        }
    }
    Ok(x)
}

/// Halley correction for `erf`-type residuals, using `f''/f' = −2x`.
#[inline]
fn halley_step<T: Scalar>(x: T, newton: T) -> T {
    newton / (T::one() + x * newton)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_and_zero() {
        assert_eq!(erf(0.0f64), 0.0);
        assert_eq!(erf_inv(0.0f64).unwrap(), 0.0);
        for x in [0.1f64, 0.7, 1.9, 2.5, 3.5, 5.0] {
            assert_eq!(erf(-x), -erf(x));
            assert_eq!(erf_inv(-erf(x).min(0.9999)).unwrap(), -erf_inv(erf(x).min(0.9999)).unwrap());
        }
    }

    #[test]
    fn reference_values() {
        // mpmath, 20 digits
        let cases = [
            (0.5f64, 0.52049987781304653768),
            (1.0, 0.84270079294971486934),
            (2.0, 0.99532226501895273416),
            (3.0, 0.99997790950300141456),
            (3.1, 0.99998835134263280041),
            (4.5, 0.99999999980338395585),
        ];
        for (x, want) in cases {
            assert!((erf(x) - want).abs() < 1e-15, "erf({x})");
        }
        assert!((erfc(3.0f64) - 2.2090496998585441373e-5).abs() < 1e-19);
        assert!((erfc(6.0f64) / 2.1519736712498913117e-17 - 1.0).abs() < 1e-12);
        assert!((erfc(-1.0f64) - 1.8427007929497148693).abs() < 1e-15);
        assert!((erf_inv(0.5f64).unwrap() - 0.47693627620446987338).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(erf_inv(1.0f64).is_err());
        assert!(erf_inv(-1.0f64).is_err());
        assert!(erf_inv(f64::NAN).is_err());
        assert!(erfc_inv(0.0f64).is_err());
        assert!(erfc_inv(2.0f64).is_err());
    }

    #[test]
    fn roundtrip_and_tails() {
        assert!((erf_inv(erf(1.2345f64)).unwrap() - 1.2345).abs() < 1e-10);
        for q in [1e-3f64, 1e-10, 1e-100, 1e-300, 0.3, 0.99, 1.5] {
            let x = erfc_inv(q).unwrap();
            assert!((erfc(x) / q - 1.0).abs() < 1e-12, "erfc_inv({q})");
        }
    }

    #[test]
    fn single_precision() {
        assert!((erf(1.0f32) - 0.842_700_8).abs() < 1e-6);
        assert!((erf_inv(0.5f32).unwrap() - 0.476_936_3).abs() < 1e-6);
    }

    #[test]
    fn monotone_on_grid() {
        let mut prev = -1.0;
        for i in 0..=1200 {
            let x = -6.0 + i as f64 * 0.01;
            let v = erf(x);
            assert!(v >= prev);
            prev = v;
        }
    }
}
